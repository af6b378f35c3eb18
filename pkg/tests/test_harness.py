import json
import os

import pandas as pd
import pytest

from potwell.field import GridSpec, encode_checkpoint, zeros
from potwell.harness import *

from tests.common import clean_dir, TEST_TEMP_DIR

FAST = {'m': 8, 'starts': 1, 'max_iter': 50, 'dt_max': 1e-2, 'energy_tol': 1e-4,
        'blowup_linf': 1e4, 't_max': 2.0, 'decay_ratio': 1e-6, 'snapshot_every': 5}
CONVERGED = dict(FAST, starts=2, seed=3, max_iter=2000)


def setup_function(_):
    clean_dir(TEST_TEMP_DIR)


def teardown_function(_):
    clean_dir(TEST_TEMP_DIR)


def _workspace(name, settings=None):
    out = os.path.join(TEST_TEMP_DIR, name)
    os.makedirs(out)
    if settings is None:
        return out, None
    config = os.path.join(TEST_TEMP_DIR, name + '.json')
    with open(config, 'w') as fd:
        json.dump(settings, fd)
    return out, config


def _read(path):
    with open(path) as fd:
        return fd.read()


def test_sim_config():
    config = SimConfig()
    assert config.m == 12
    assert config.control().energy_tol == 1e-6
    assert config.updated(m=10, seed=None).m == 10
    assert config.updated(seed=None).seed == 1
    with pytest.raises(ValueError, match='unknown'):
        SimConfig(mesh=8)
    with pytest.raises(ValueError):
        SimConfig(seed=-1)
    with pytest.raises(ValueError):
        SimConfig(seed=2 ** 64)
    with pytest.raises(ValueError):
        SimConfig(p=5.0)
    with pytest.raises(ValueError):
        SimConfig(experiment='everything')

    _, path = _workspace('cfg', {'m': 9, 'p': 2.5})
    loaded = SimConfig.from_json(path)
    assert (loaded.m, loaded.p) == (9, 2.5)
    assert loaded.resolved()['starts'] == DEFAULTS['starts']


def test_missing_output_directory(capsys):
    missing = os.path.join(TEST_TEMP_DIR, 'absent')
    assert main(['well', '--out', missing]) == EXIT_ERROR
    assert 'potwell: error:' in capsys.readouterr().err
    assert not os.path.exists(missing)
    assert os.listdir(TEST_TEMP_DIR) == ['.gitkeep']


def test_well_command_is_deterministic():
    first, config = _workspace('first', FAST)
    second, _ = _workspace('second')
    assert main(['well', '--config', config, '--out', first]) == EXIT_OK
    assert main(['well', '--config', config, '--out', second]) == EXIT_OK
    for name in ('maximizer.pwf', 'd_of_delta.csv', 'well.json'):
        with open(os.path.join(first, name), 'rb') as a, open(os.path.join(second, name), 'rb') as b:
            assert a.read() == b.read()
    info = [json.loads(_read(os.path.join(out, 'well.json'))) for out in (first, second)]
    assert 'out_dir' not in info[0]['config']
    assert info[0]['config']['m'] == 8
    assert info[0]['seed'] == 1
    assert info[0]['maximizer'] == 'maximizer.pwf'

    table = pd.read_csv(os.path.join(first, 'd_of_delta.csv'))
    assert list(table.columns) == ['delta', 'd']
    assert len(table) == 200
    assert table['delta'][table['d'].idxmax()] == 1.0
    assert table['d'].max() == pytest.approx(info[0]['d_depth'], rel=1e-15)
    assert sorted(os.listdir(first)) == ['d_of_delta.csv', 'maximizer.pwf', 'well.json']


def test_seed_override():
    out, config = _workspace('seeded', FAST)
    assert main(['well', '--config', config, '--out', out, '--seed', '7']) == EXIT_OK
    assert json.loads(_read(os.path.join(out, 'well.json')))['seed'] == 7


def test_simulate_rejects_bad_checkpoint(capsys):
    out, config = _workspace('bad', FAST)
    data = encode_checkpoint(zeros(GridSpec(8)))
    u0 = os.path.join(TEST_TEMP_DIR, 'bad.pwf')
    with open(u0, 'wb') as fd:
        fd.write(b'XXXX' + data[4:])
    assert main(['simulate', '--config', config, '--out', out, '--u0', u0]) == EXIT_ERROR
    assert 'bad magic' in capsys.readouterr().err
    assert os.listdir(out) == []


def test_simulate_from_zero():
    out, config = _workspace('zero', dict(FAST, scale=0.0))
    assert main(['simulate', '--config', config, '--out', out]) == EXIT_OK
    outcome = json.loads(_read(os.path.join(out, 'outcome.json')))
    assert outcome['outcome'] == 'GlobalDecayed'
    assert outcome['t_end'] == 0.0
    assert outcome['class'] == 'W_prime'
    assert outcome['u0'] == BUILTIN_PREFIX + '0.0'
    trajectory = pd.read_csv(os.path.join(out, 'trajectory.csv'))
    assert len(trajectory) == 1
    assert os.listdir(os.path.join(out, 'snapshots')) == ['snap_000000.pwf']


def test_simulate_is_deterministic():
    first, config = _workspace('run_a', dict(FAST, scale=5.0, t_max=0.01))
    second, _ = _workspace('run_b')
    assert main(['simulate', '--config', config, '--out', first]) == EXIT_OK
    assert main(['simulate', '--config', config, '--out', second]) == EXIT_OK
    assert _read(os.path.join(first, 'trajectory.csv')) == _read(os.path.join(second, 'trajectory.csv'))
    assert _read(os.path.join(first, 'outcome.json')) == _read(os.path.join(second, 'outcome.json'))
    outcome = json.loads(_read(os.path.join(first, 'outcome.json')))
    assert outcome['outcome'] == 'Inconclusive'
    assert outcome['reason'] == 'reached t_max'
    assert outcome['config']['scale'] == 5.0


def test_simulate_reuses_stored_well():
    out, config = _workspace('reuse', dict(FAST, scale=0.0))
    assert main(['well', '--config', config, '--out', out]) == EXIT_OK
    before = _read(os.path.join(out, 'well.json'))
    assert main(['simulate', '--config', config, '--out', out]) == EXIT_OK
    assert _read(os.path.join(out, 'well.json')) == before
    assert os.path.exists(os.path.join(out, 'outcome.json'))


def test_threshold_without_bracket(capsys):
    out, config = _workspace('threshold', dict(FAST, s_lo=0.01, s_hi=0.02, snapshot_every=0))
    assert main(['experiment', '--which', 'threshold', '--config', config, '--out', out]) == EXIT_ERROR
    assert 'bracket' in capsys.readouterr().err
    assert os.listdir(out) == []


def test_vacuum_experiment_command():
    out, config = _workspace('vacuum', CONVERGED)
    assert main(['experiment', '--which', 'vacuum', '--config', config, '--out', out]) == EXIT_OK
    report = json.loads(_read(os.path.join(out, 'report.json')))
    assert report['experiment'] == 'vacuum'
    assert report['passed']
    assert report['well']['m'] == 8
    assert sorted(os.listdir(os.path.join(out, 'runs'))) == ['blowup.csv', 'decay.csv']


def test_rates_experiment_command():
    out, config = _workspace('rates', dict(CONVERGED, snapshot_every=0))
    assert main(['experiment', '--which', 'rates', '--config', config, '--out', out]) == EXIT_OK
    report = json.loads(_read(os.path.join(out, 'report.json')))
    assert report['growth']['fit']['slope'] > 0
    assert report['decay']['fit']['slope'] < 0
    assert report['heat']['passed']
    assert report['growth']['passed']
    assert report['passed']
    assert sorted(os.listdir(os.path.join(out, 'runs'))) == ['blowup.csv', 'decay.csv', 'heat.csv']
