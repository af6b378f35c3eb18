"""Command-line entry point: `potwell well|simulate|experiment`."""
import argparse
import json
import logging
import os
import sys

from pandas import DataFrame

from potwell.experiments import EXPERIMENTS, classify_initial
from potwell.field import GridSpec, encode_checkpoint, read_checkpoint
from potwell.flow import StepControl, run
from potwell.functionals import ModelParams
from potwell.kernel import KernelTable
from potwell.utils import ArtifactWriter, dump_json, setup_logging
from potwell.well import OptimizerConfig, WellCurve, d_table, estimate_cstar

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_THEOREM = 2
BUILTIN_PREFIX = 'builtin:scaled-maximizer:'
SEED_LIMIT = 2 ** 64

DEFAULTS = {
    'm': 12,
    'p': 2.0,
    'seed': 1,
    'starts': 5,
    'max_iter': 5000,
    'gtol': 1e-8,
    'n_jobs': 1,
    'dt_init': 1e-4,
    'dt_min': 1e-12,
    'dt_max': 1e-2,
    'energy_tol': 1e-6,
    'blowup_linf': 1e8,
    't_max': 5.0,
    'record_every': 1,
    'snapshot_every': 10,
    'decay_ratio': 1e-12,
    'max_steps': 200000,
    'experiment': 'vacuum',
    'e_ratio': 0.8,
    'scale': 1.0,
    's_lo': None,
    's_hi': None,
    'delta_grid_size': 32,
    'out_dir': None,
    'verbose': False,
}


class SimConfig:
    """Resolved run configuration built from one JSON document.

    Every key of DEFAULTS is an attribute. Construction checks the constraints
    of the grid, the model, the optimizer and the step control.
    """

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(DEFAULTS))
        if unknown:
            raise ValueError('unknown config key(s): {}'.format(', '.join(unknown)))
        values = dict(DEFAULTS)
        values.update(kwargs)
        for key, value in values.items():
            setattr(self, key, value)
        if not 0 <= int(self.seed) < SEED_LIMIT or int(self.seed) != self.seed:
            raise ValueError('seed must be an unsigned 64-bit integer, got {}'.format(self.seed))
        if self.experiment not in EXPERIMENTS:
            raise ValueError('unknown experiment {!r}, choose from {}'.format(
                self.experiment, ', '.join(sorted(EXPERIMENTS))))
        self.grid()
        self.params()
        self.optimizer()
        self.control()

    @classmethod
    def from_dict(cls, values):
        return cls(**values)

    @classmethod
    def from_json(cls, path):
        with open(path) as fd:
            values = json.load(fd)
        if not isinstance(values, dict):
            raise ValueError('config {} must hold a JSON object'.format(path))
        return cls.from_dict(values)

    def resolved(self):
        return {key: getattr(self, key) for key in DEFAULTS}

    def updated(self, **overrides):
        values = self.resolved()
        values.update({key: value for key, value in overrides.items() if value is not None})
        return SimConfig.from_dict(values)

    def grid(self):
        return GridSpec(self.m)

    def params(self):
        return ModelParams(self.p)

    def optimizer(self):
        return OptimizerConfig(starts=self.starts, seed=self.seed, max_iter=self.max_iter,
                               gtol=self.gtol, n_jobs=self.n_jobs)

    def control(self):
        return StepControl(dt_init=self.dt_init, dt_min=self.dt_min, dt_max=self.dt_max,
                           energy_tol=self.energy_tol, blowup_linf=self.blowup_linf,
                           t_max=self.t_max, record_every=self.record_every,
                           snapshot_every=self.snapshot_every, decay_ratio=self.decay_ratio,
                           max_steps=self.max_steps)


def _provenance(config):
    # artifacts do not depend on where they are written
    settings = config.resolved()
    del settings['out_dir']
    return {'config': settings, 'seed': config.seed}


def _frame_csv(frame):
    return frame.to_csv(index=False, float_format='%.17g', lineterminator='\n')


def load_well(config, table):
    """Read well.json and maximizer.pwf from the output directory, or estimate C* afresh."""
    params = config.params()
    json_path = os.path.join(config.out_dir, 'well.json')
    field_path = os.path.join(config.out_dir, 'maximizer.pwf')
    if os.path.exists(json_path) and os.path.exists(field_path):
        maximizer, _, _ = read_checkpoint(field_path)
        with open(json_path) as fd:
            curve = WellCurve.from_json(fd.read(), maximizer=maximizer)
        if maximizer.grid == table.grid and curve.p == params.p:
            logger.info('loaded %r from %s', curve, json_path)
            return curve
        logger.warning('stored well in %s does not match m=%d, p=%s; estimating again',
                       config.out_dir, config.m, config.p)
    return estimate_cstar(params, table, config.optimizer())


def cmd_well(config):
    """Estimate C*, then write well.json, maximizer.pwf and d_of_delta.csv."""
    writer = ArtifactWriter(config.out_dir)
    table = KernelTable(config.grid())
    curve = estimate_cstar(config.params(), table, config.optimizer())
    extra = _provenance(config)
    extra['maximizer'] = 'maximizer.pwf'
    with writer:
        writer.write_text('well.json', curve.to_json(extra))
        writer.write_bytes('maximizer.pwf', encode_checkpoint(curve.maximizer))
        writer.write_text('d_of_delta.csv', _frame_csv(DataFrame(d_table(curve), columns=['delta', 'd'])))
    logger.info('wrote %r to %s', curve, config.out_dir)
    return EXIT_OK


def initial_field(source, grid, well=None):
    """Resolve --u0: a checkpoint path or builtin:scaled-maximizer:<s>."""
    if source.startswith(BUILTIN_PREFIX):
        scale = float(source[len(BUILTIN_PREFIX):])
        if well is None or well.maximizer is None:
            raise ValueError('builtin initial data needs a maximizer field')
        return scale * well.maximizer
    field, _, _ = read_checkpoint(source)
    if field.blowup:
        raise ValueError('initial field {} holds non-finite values'.format(source))
    if field.grid != grid:
        raise ValueError('initial field has m={}, config has m={}'.format(field.grid.m, grid.m))
    return field


def cmd_simulate(config, u0_source=None):
    """Run the flow from u0 and write trajectory.csv, outcome.json and snapshots."""
    writer = ArtifactWriter(config.out_dir)
    grid = config.grid()
    params = config.params()
    table = KernelTable(grid)
    source = u0_source if u0_source is not None else BUILTIN_PREFIX + repr(float(config.scale))
    # checkpoints are validated before the optimizer runs
    u0 = None if source.startswith(BUILTIN_PREFIX) else initial_field(source, grid)
    well = load_well(config, table)
    if u0 is None:
        u0 = initial_field(source, grid, well)
    traj, outcome = run(u0, config.control(), params, table, well)

    result = outcome.to_dict()
    result['class'] = classify_initial(u0, params, table, well)
    result['u0'] = source
    result.update(_provenance(config))
    with writer:
        writer.write_text('trajectory.csv', traj.to_csv())
        writer.write_text('outcome.json', dump_json(result))
        for index, (t, u) in enumerate(traj.snapshots):
            writer.write_bytes(os.path.join('snapshots', 'snap_{:06d}.pwf'.format(index)),
                               encode_checkpoint(u, index, t))
    logger.info('simulation finished: %r', outcome)
    return EXIT_OK


def _experiment_options(config, which):
    if which == 'vacuum':
        return {'e_ratio': config.e_ratio, 'delta_grid_size': config.delta_grid_size, 'n_jobs': config.n_jobs}
    if which == 'threshold':
        return {'s_lo': config.s_lo, 's_hi': config.s_hi, 'n_jobs': config.n_jobs}
    if which == 'rates':
        return {'e_ratio': config.e_ratio, 'n_jobs': config.n_jobs}
    return {'n_jobs': config.n_jobs}


def cmd_experiment(config, which=None):
    """Run one experiment and write report.json and one trajectory CSV per run.

    Returns:
        0 when every check passed, 2 when a check failed.
    """
    which = which if which is not None else config.experiment
    if which not in EXPERIMENTS:
        raise ValueError('unknown experiment {!r}, choose from {}'.format(which, ', '.join(sorted(EXPERIMENTS))))
    writer = ArtifactWriter(config.out_dir)
    params = config.params()
    table = KernelTable(config.grid())
    well = load_well(config, table)
    report, runs = EXPERIMENTS[which](well, params, table, config.control(),
                                      **_experiment_options(config, which))
    report['well'] = well.to_dict()
    report.update(_provenance(config))
    with writer:
        writer.write_text('report.json', dump_json(report))
        for name in sorted(runs):
            writer.write_text(os.path.join('runs', name + '.csv'), runs[name][0].to_csv())
    if not report['passed']:
        logger.warning('experiment %s failed its checks', which)
        return EXIT_THEOREM
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='potwell', description='Potential-well lab for the nonlocal heat equation')
    commands = parser.add_subparsers(dest='command')
    commands.required = True
    for name, description in (('well', 'estimate C* and tabulate d(delta)'),
                              ('simulate', 'run the flow from one initial field'),
                              ('experiment', 'run a theorem-level experiment')):
        sub = commands.add_parser(name, help=description)
        sub.add_argument('--config', help='JSON configuration file')
        sub.add_argument('--out', help='existing output directory')
        sub.add_argument('--seed', type=int, help='unsigned 64-bit seed')
        sub.add_argument('--verbose', action='store_true', help='log progress at INFO level')
        if name == 'simulate':
            sub.add_argument('--u0', help='checkpoint path or ' + BUILTIN_PREFIX + '<s>')
        if name == 'experiment':
            sub.add_argument('--which', choices=sorted(EXPERIMENTS))
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = SimConfig.from_json(args.config) if args.config else SimConfig()
        config = config.updated(out_dir=args.out, seed=args.seed, verbose=args.verbose or None)
        setup_logging(config.verbose)
        if args.command == 'well':
            return cmd_well(config)
        if args.command == 'simulate':
            return cmd_simulate(config, args.u0)
        return cmd_experiment(config, args.which)
    except (ValueError, OSError, KeyError) as error:
        sys.stderr.write('potwell: error: {}\n'.format(error))
        return EXIT_ERROR
