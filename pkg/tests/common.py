import functools
import os
import shutil

from potwell.field import GridSpec
from potwell.flow import StepControl
from potwell.functionals import ModelParams
from potwell.kernel import KernelTable
from potwell.well import OptimizerConfig, estimate_cstar

TEST_TEMP_DIR = 'tests/resources/temp'


def clean_dir(path):
    for f in os.listdir(path):
        full_path = os.path.join(path, f)
        if f != '.gitkeep':
            if os.path.isfile(full_path):
                os.remove(full_path)
            else:
                shutil.rmtree(full_path)


@functools.lru_cache(maxsize=None)
def small_setup(m=8, p=2.0):
    grid = GridSpec(m)
    return grid, KernelTable(grid), ModelParams(p)


@functools.lru_cache(maxsize=None)
def small_well(m=8, p=2.0):
    _, table, params = small_setup(m, p)
    return estimate_cstar(params, table, OptimizerConfig(starts=2, seed=3, max_iter=2000))


def relaxed_control(**kwargs):
    settings = dict(dt_init=1e-4, dt_min=1e-12, dt_max=1e-2, energy_tol=1e-4, blowup_linf=1e4,
                    t_max=2.0, decay_ratio=1e-6, snapshot_every=5)
    settings.update(kwargs)
    return StepControl(**settings)
