import logging

import numpy as np
from sklearn.linear_model import LinearRegression
from sklearn.metrics import r2_score

from potwell.field import min_eigenvalue, sine_mode
from potwell.flow import BlewUp, GlobalDecayed, concavity_diagnostics, run
from potwell.functionals import energy_J, energy_parts, fibering, lambda_scale, nehari_I
from potwell.kernel import KernelTable
from potwell.utils import call_parallel
from potwell.well import alpha_barriers, bisect_root, roots_delta

logger = logging.getLogger(__name__)

MIN_FIT_SAMPLES = 10
DECAY_FRACTION = 0.5
GROWTH_FRACTION = 0.5
NEHARI_ABS_TOL = 1e-12
VACUUM_ZERO_TOL = 1e-12
ENERGY_SLACK = 1e-9
CRITICAL_REL_TOL = 1e-6
CRITICAL_GAP = 5e-7
THRESHOLD_AGREEMENT = 0.1
DECAY_SLACK = 0.95
HEAT_TOLERANCE = 0.01
DECAY_R2 = 0.99
GROWTH_R2 = 0.95
BARRIER_TOL = 1e-6


class VacuumReport:
    """Signs of I_delta over the snapshots of a run and a grid of delta in (delta1, delta2).

    Attributes:
        e: Energy level.
        delta1: Root of d(delta) = e below 1.
        delta2: Root of d(delta) = e above 1.
        samples_checked: Number of nonzero snapshots evaluated.
        min_abs_I_delta: Smallest |I_delta| over the (t, delta) grid.
        sign: Common sign +1 or -1 of I_delta, taken from the first evaluation.
        violated: True when some I_delta vanished or changed sign.
    """

    def __init__(self, e, delta1, delta2, samples_checked, min_abs_I_delta, sign, violated):
        self.e = e
        self.delta1 = delta1
        self.delta2 = delta2
        self.samples_checked = samples_checked
        self.min_abs_I_delta = min_abs_I_delta
        self.sign = sign
        self.violated = violated

    def to_dict(self):
        return {'e': self.e, 'delta1': self.delta1, 'delta2': self.delta2,
                'samples_checked': self.samples_checked, 'min_abs_I_delta': self.min_abs_I_delta,
                'sign': self.sign, 'violated': self.violated}


class RateFit:
    """Least-squares line through (t, log q(t)).

    Attributes:
        quantity: Trajectory column that was fitted, e.g. 'l2_sq' or 'l6'.
        window: (t_a, t_b) actually covered by the fitted samples.
        slope: Rate per unit time.
        intercept: Value of the line at t = 0.
        r_squared: Coefficient of determination, NaN when undefined.
        r_squared_defined: False for a constant series.
        samples: Number of fitted samples.
    """

    def __init__(self, quantity, window, slope, intercept, r_squared, r_squared_defined, samples):
        self.quantity = quantity
        self.window = window
        self.slope = slope
        self.intercept = intercept
        self.r_squared = r_squared
        self.r_squared_defined = r_squared_defined
        self.samples = samples

    def to_dict(self):
        return {'quantity': self.quantity, 'window': list(self.window), 'slope': self.slope,
                'intercept': self.intercept, 'r_squared': self.r_squared,
                'r_squared_defined': self.r_squared_defined, 'samples': self.samples}


class ThresholdScan:
    """Result of bisecting the outcome of u0 = s phi in s.

    Attributes:
        s_star: Midpoint of the final bracket.
        s_lo: Largest scaling seen to stay global.
        s_hi: Smallest scaling seen to blow up.
        s_nehari: Nehari crossing lambda(1, phi).
        evaluations: List of (s, outcome label) in evaluation order.
    """

    def __init__(self, s_star, s_lo, s_hi, s_nehari, evaluations):
        self.s_star = s_star
        self.s_lo = s_lo
        self.s_hi = s_hi
        self.s_nehari = s_nehari
        self.evaluations = evaluations

    def to_dict(self):
        return {'s_star': self.s_star, 's_lo': self.s_lo, 's_hi': self.s_hi,
                's_nehari': self.s_nehari,
                'evaluations': [{'s': s, 'outcome': label} for s, label in self.evaluations]}


def delta_grid(delta1, delta2, size):
    """size evenly spaced points strictly inside (delta1, delta2)."""
    k = np.arange(1, size + 1)
    return delta1 + (delta2 - delta1) * k / (size + 1.0)


def vacuum_check(traj, well, e, delta_grid_size=32, table=None):
    """Check that no snapshot of a run with J(u0) <= e lies on any N_delta, delta1 < delta < delta2.

    Args:
        traj: Trajectory whose snapshots are evaluated; zero and blow-up
            snapshots are skipped.
        well: WellCurve.
        e: Energy level, 0 < e < d.
        delta_grid_size: Number of delta values in (delta1, delta2).
        table: KernelTable of the snapshot grid; built when omitted.

    Returns:
        A VacuumReport.

    Raises:
        ValueError: If e is not below the well depth, J(u0) > e, or the
            trajectory holds no usable snapshot.
    """
    if not e < well.d_depth:
        raise ValueError('no vacuum interval: e = {} is not below d = {}'.format(e, well.d_depth))
    delta1, delta2 = roots_delta(well, e)
    if not traj.snapshots:
        raise ValueError('vacuum check needs stored snapshots; set snapshot_every > 0')
    if traj.samples[0].J > e * (1.0 + ENERGY_SLACK):
        raise ValueError('run starts at J(u0) = {} above e = {}'.format(traj.samples[0].J, e))
    deltas = delta_grid(delta1, delta2, delta_grid_size)
    params = traj.params
    table = table if table is not None else KernelTable(traj.snapshots[0][1].grid)

    checked = 0
    sign = 0
    min_abs = np.inf
    violated = False
    for _, u in traj.snapshots:
        if u.blowup or u.is_zero():
            continue
        gradient, potential = energy_parts(u, params, table)
        values = deltas * gradient - potential
        scale = np.maximum(deltas * gradient, potential)
        checked += 1
        min_abs = min(min_abs, float(np.min(np.abs(values))))
        if np.any(np.abs(values) <= VACUUM_ZERO_TOL * scale):
            violated = True
        signs = np.sign(values)
        if sign == 0:
            sign = int(signs[0])
        if np.any(signs != sign):
            violated = True
    if not checked:
        raise ValueError('vacuum check found no nonzero snapshot')
    report = VacuumReport(e, delta1, delta2, checked, min_abs, sign, violated)
    logger.info('vacuum check over %d snapshots: sign %+d, min |I_delta| %.6g, violated %s',
                checked, sign, min_abs, violated)
    return report


def scaling_for_energy(phi, params, table, target, side):
    """Solve J(s phi) = target for s on one side of the Nehari crossing lambda(1, phi).

    Args:
        phi: Nonzero ScalarField.
        params: ModelParams.
        table: KernelTable.
        target: Energy level, 0 < target <= J(lambda(1, phi) phi).
        side: 'below' (I(s phi) > 0) or 'above' (I(s phi) < 0).

    Returns:
        The scaling s.
    """
    if side not in ('below', 'above'):
        raise ValueError("side must be 'below' or 'above', got {!r}".format(side))
    s_nehari = lambda_scale(1.0, phi, params, table)
    peak = fibering(phi, s_nehari, params, table)
    if not 0.0 < target <= peak:
        raise ValueError('energy {} is not reachable along s phi, whose peak is {}'.format(target, peak))
    gradient, potential = energy_parts(phi, params, table)

    def level(s):
        return 0.5 * s ** 2 * gradient - s ** (2.0 * params.p) * potential / (2.0 * params.p)

    if side == 'below':
        return bisect_root(level, 0.0, s_nehari, target, increasing=True)
    hi = 2.0 * s_nehari
    while level(hi) > target:
        hi *= 2.0
    return bisect_root(level, s_nehari, hi, target, increasing=False)


def critical_scaling(phi, params, table, well, side, rel_gap=CRITICAL_GAP):
    """Scaling s with J(s phi) = d (1 - rel_gap) on the requested side of the Nehari crossing."""
    return scaling_for_energy(phi, params, table, well.d_depth * (1.0 - rel_gap), side)


def _simulate(initials, ctrl, params, table, well, n_jobs=1):
    names = sorted(initials)
    results = call_parallel(lambda name: run(initials[name], ctrl, params, table, well),
                            names, n_jobs=n_jobs)
    return dict(zip(names, results))


def threshold_scan(phi, s_lo, s_hi, ctrl, params, table, well, rel_width=1e-3):
    """Bisect the scaling s of u0 = s phi between a global and a blow-up outcome.

    Inconclusive runs count as not blowing up within t_max and are logged.

    Args:
        phi: Nonzero ScalarField.
        s_lo: Scaling whose run must end GlobalDecayed.
        s_hi: Scaling whose run must end BlewUp.
        ctrl: StepControl of every run.
        params: ModelParams.
        table: KernelTable.
        well: WellCurve.
        rel_width: Stop once the bracket is narrower than rel_width * s_hi.

    Returns:
        A ThresholdScan.

    Raises:
        ValueError: If phi is zero or (s_lo, s_hi) does not bracket the switch.
    """
    if phi.is_zero():
        raise ValueError('threshold scan needs a nonzero profile')
    if not 0.0 <= s_lo < s_hi:
        raise ValueError('threshold bracket needs 0 <= s_lo < s_hi, got {}, {}'.format(s_lo, s_hi))
    evaluations = []

    def outcome(s):
        _, result = run(s * phi, ctrl, params, table, well)
        evaluations.append((s, result.label))
        if result.label == 'Inconclusive':
            logger.warning('scaling %.6g inconclusive (%s); counted as not blowing up', s, result.reason)
        return result

    low, high = outcome(s_lo), outcome(s_hi)
    if not isinstance(low, GlobalDecayed) or not isinstance(high, BlewUp):
        raise ValueError('threshold bracket precondition fails: s_lo={} gives {}, s_hi={} gives {}'
                         .format(s_lo, low.label, s_hi, high.label))
    width = rel_width * s_hi
    lo, hi = s_lo, s_hi
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if isinstance(outcome(mid), BlewUp):
            hi = mid
        else:
            lo = mid
    s_nehari = lambda_scale(1.0, phi, params, table)
    logger.info('threshold s* = %.8g, Nehari crossing %.8g', 0.5 * (lo + hi), s_nehari)
    return ThresholdScan(0.5 * (lo + hi), lo, hi, s_nehari, evaluations)


def fit_series(t, q, quantity='series'):
    """Ordinary least squares of log q against t.

    Raises:
        ValueError: With fewer than 10 points or a nonpositive value.
    """
    t = np.asarray(t, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if t.shape[0] < MIN_FIT_SAMPLES:
        raise ValueError('rate fit needs at least {} samples, got {}'.format(MIN_FIT_SAMPLES, t.shape[0]))
    if not np.all(q > 0):
        raise ValueError('rate fit needs positive values of {}'.format(quantity))
    y = np.log(q)
    model = LinearRegression().fit(t.reshape(-1, 1), y)
    slope = float(model.coef_[0])
    intercept = float(model.intercept_)
    defined = bool(np.ptp(y) > 0)
    r_squared = float(r2_score(y, model.predict(t.reshape(-1, 1)))) if defined else float('nan')
    if not defined:
        slope = 0.0
    return RateFit(quantity, (float(t[0]), float(t[-1])), slope, intercept, r_squared, defined, t.shape[0])


def fit_rate(traj, quantity, window):
    """Fit log of a trajectory column over the samples with t in window = (t_a, t_b)."""
    frame = traj.to_frame()
    if quantity not in frame.columns:
        raise ValueError('unknown quantity {!r}'.format(quantity))
    t_a, t_b = window
    selected = frame[(frame['t'] >= t_a) & (frame['t'] <= t_b)]
    return fit_series(selected['t'].values, selected[quantity].values, quantity)


def tail_window(traj, fraction=DECAY_FRACTION):
    """Time window covering the last fraction of the recorded samples."""
    t = [s.t for s in traj.samples]
    start = int(np.floor(len(t) * (1.0 - fraction)))
    return t[min(start, len(t) - 1)], t[-1]


def growth_window(traj, fraction=GROWTH_FRACTION):
    """Time window (t_0, fraction * t_b) of a blow-up run, t_b being the last recorded time.

    Adaptive steps crowd the samples near t_b, so the window is cut in time,
    not in samples.

    Raises:
        ValueError: If fraction is not in (0, 1] or the run never left t = 0.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError('growth window fraction must lie in (0, 1], got {}'.format(fraction))
    t = [s.t for s in traj.samples]
    if not t[-1] > t[0]:
        raise ValueError('trajectory too short for a growth window')
    return t[0], t[0] + fraction * (t[-1] - t[0])


def classify_initial(u0, params, table, well):
    """Place u0 in W' = {J <= d, I > 0} U {0}, Z' = {J <= d, I < 0} or 'outside'."""
    if u0.is_zero():
        return 'W_prime'
    if energy_J(u0, params, table) > well.d_depth:
        return 'outside'
    value = nehari_I(u0, params, table)
    if value > NEHARI_ABS_TOL:
        return 'W_prime'
    if value < -NEHARI_ABS_TOL:
        return 'Z_prime'
    return 'outside'


def growth_constants(well, J0, lambda1):
    """Constants of the exponential lower bound L(t) >= L(0) exp(C3 t) of a blow-up run.

    Args:
        well: WellCurve.
        J0: Initial energy, 0 < J0 <= d.
        lambda1: Smallest Dirichlet eigenvalue; the Poincare constant is 1/lambda1.

    Returns:
        Dict with alpha1, alpha2, C1, C2 and C3.
    """
    alpha1, alpha2 = alpha_barriers(well, J0)
    c1 = min(2.0 * well.p, (well.p - 1.0) * (alpha2 ** 2 - alpha1 ** 2) / alpha2 ** 2)
    c2 = max(1.0, 1.0 / (2.0 * lambda1))
    return {'alpha1': alpha1, 'alpha2': alpha2, 'C1': c1, 'C2': c2, 'C3': c1 / c2}


def decay_envelope(traj, lambda1, delta0, rtol=1e-6):
    """Compare ||u(t)||^2 with ||u0||^2 exp(-2 lambda1 (1 - delta0) t) sample by sample."""
    frame = traj.to_frame()
    bound = frame['l2_sq'].iloc[0] * np.exp(-2.0 * lambda1 * (1.0 - delta0) * frame['t'])
    ratio = frame['l2_sq'] / bound
    return {'holds': bool(np.all(ratio <= 1.0 + rtol)), 'max_ratio': float(ratio.max())}


def growth_envelope(traj, c3, rtol=1e-6):
    """Compare L(t) with L(0) exp(C3 t) sample by sample; needs the H and L columns."""
    frame = traj.to_frame()
    if frame['L'].isnull().any():
        raise ValueError('growth envelope needs a trajectory recorded with a well depth')
    bound = frame['L'].iloc[0] * np.exp(c3 * frame['t'])
    ratio = frame['L'] / bound
    return {'holds': bool(np.all(ratio >= 1.0 - rtol)), 'min_ratio': float(ratio.min())}


def _maximizer(well):
    if well.maximizer is None:
        raise ValueError('experiment needs a WellCurve with a maximizer field')
    return well.maximizer


def _run_summary(traj, outcome, params, table, well, u0):
    return {'outcome': outcome.to_dict(), 'class': classify_initial(u0, params, table, well),
            'J0': traj.samples[0].J, 'I0': traj.samples[0].I, 'samples': len(traj),
            'accepted_steps': len(traj.step_sizes)}


def _sign_invariant(traj, expected):
    values = np.array([s.I for s in traj.samples if s.l2_sq > 0])
    return bool(np.all(np.sign(values) == expected))


def vacuum_experiment(well, params, table, ctrl, e_ratio=0.8, delta_grid_size=32, n_jobs=1):
    """Run a decay and a blow-up start at energy e = e_ratio d and check the vacuum region.

    Returns:
        A tuple (report, runs) with runs mapping run names to (Trajectory, RunOutcome).
    """
    if ctrl.snapshot_every < 1:
        raise ValueError('vacuum experiment needs snapshot_every > 0')
    phi = _maximizer(well)
    e = e_ratio * well.d_depth
    initials = {'blowup': scaling_for_energy(phi, params, table, e, 'above') * phi,
                'decay': scaling_for_energy(phi, params, table, e, 'below') * phi}
    runs = _simulate(initials, ctrl, params, table, well, n_jobs)
    expected = {'blowup': -1, 'decay': 1}
    report = {'experiment': 'vacuum', 'e': e, 'runs': {}}
    passed = True
    for name, (traj, outcome) in runs.items():
        vacuum = vacuum_check(traj, well, e, delta_grid_size, table)
        entry = _run_summary(traj, outcome, params, table, well, initials[name])
        entry['vacuum'] = vacuum.to_dict()
        report['runs'][name] = entry
        passed = passed and not vacuum.violated and vacuum.sign == expected[name]
    report['violated'] = not passed
    report['passed'] = passed
    return report, runs


def threshold_experiment(well, params, table, ctrl, s_lo=None, s_hi=None, rel_width=1e-3,
                         points=8, n_jobs=1):
    """Locate the outcome switch along s phi and compare it with the Nehari crossing."""
    phi = _maximizer(well)
    s_nehari = lambda_scale(1.0, phi, params, table)
    s_lo = 0.5 * s_nehari if s_lo is None else s_lo
    s_hi = 1.5 * s_nehari if s_hi is None else s_hi
    scan = threshold_scan(phi, s_lo, s_hi, ctrl, params, table, well, rel_width)

    scales = np.linspace(s_lo, s_hi, points)
    initials = {'scan_{:02d}'.format(k): s * phi for k, s in enumerate(scales)}
    runs = _simulate(initials, ctrl, params, table, well, n_jobs)
    labels = [runs[name][1].label for name in sorted(runs)]
    blowups = [s for s, label in zip(scales, labels) if label == 'BlewUp']
    monotone = not blowups or not any(label == 'GlobalDecayed' and s > min(blowups)
                                      for s, label in zip(scales, labels))
    agreement = abs(scan.s_star - s_nehari) / s_nehari
    if agreement > THRESHOLD_AGREEMENT:
        logger.warning('threshold %.6g deviates from the Nehari crossing %.6g by %.1f%%',
                       scan.s_star, s_nehari, 100.0 * agreement)
    report = {'experiment': 'threshold', 'scan': scan.to_dict(),
              'scan_points': [{'s': float(s), 'outcome': label} for s, label in zip(scales, labels)],
              'monotone': monotone, 'relative_deviation': agreement,
              'passed': bool(monotone and agreement <= THRESHOLD_AGREEMENT)}
    return report, runs


def rates_experiment(well, params, table, ctrl, e_ratio=0.8, n_jobs=1):
    """Fit the decay rate of a W' run, the heat-only calibration rate and the growth rate of a Z' run."""
    phi = _maximizer(well)
    grid = table.grid
    lambda1 = min_eigenvalue(grid)
    e = e_ratio * well.d_depth
    initials = {'blowup': scaling_for_energy(phi, params, table, e, 'above') * phi,
                'decay': scaling_for_energy(phi, params, table, e, 'below') * phi}
    runs = _simulate(initials, ctrl, params, table, well, n_jobs)
    heat = sine_mode(grid, 1)
    runs['heat'] = run(heat, ctrl, params.heat_only(), table, well)

    decay_traj, decay_outcome = runs['decay']
    J0 = decay_traj.samples[0].J
    delta1, _ = roots_delta(well, J0)
    delta0 = 0.5 * (1.0 + delta1)
    decay_fit = fit_rate(decay_traj, 'l2_sq', tail_window(decay_traj))
    decay_bound = -2.0 * (1.0 - delta0) * lambda1 * DECAY_SLACK
    decay_ok = (isinstance(decay_outcome, GlobalDecayed) and decay_fit.slope <= decay_bound
                and decay_fit.r_squared >= DECAY_R2)

    heat_traj, _ = runs['heat']
    heat_fit = fit_rate(heat_traj, 'l2_sq', tail_window(heat_traj))
    steps = np.array(heat_traj.step_sizes)
    tail = steps[np.cumsum(steps) > heat_fit.window[0]]
    # implicit Euler damps the mode by 1/(1 + dt lambda1) per step
    heat_expected = -2.0 * np.sum(np.log1p(tail * lambda1)) / np.sum(tail)
    heat_ok = abs(heat_fit.slope - heat_expected) <= HEAT_TOLERANCE * abs(heat_expected)

    blow_traj, blow_outcome = runs['blowup']
    growth_fit = fit_rate(blow_traj, 'l6', growth_window(blow_traj))
    concavity = concavity_diagnostics(blow_traj, params)
    quarter = concavity['indicator'].values[-max(1, len(concavity) // 4):]
    concave_ok = bool(np.all(quarter > 0))
    growth_ok = (isinstance(blow_outcome, BlewUp) and growth_fit.slope > 0
                 and growth_fit.r_squared >= GROWTH_R2 and concave_ok)

    constants = growth_constants(well, blow_traj.samples[0].J, lambda1)
    report = {
        'experiment': 'rates',
        'lambda1': lambda1,
        'decay': {'fit': decay_fit.to_dict(), 'delta0': delta0, 'bound': decay_bound,
                  'envelope': decay_envelope(decay_traj, lambda1, delta0), 'passed': bool(decay_ok)},
        'heat': {'fit': heat_fit.to_dict(), 'expected_slope': float(heat_expected),
                 'continuous_slope': -2.0 * lambda1, 'passed': bool(heat_ok)},
        'growth': {'fit': growth_fit.to_dict(), 'concavity_positive_final_quarter': concave_ok,
                   'constants': constants, 'envelope': growth_envelope(blow_traj, constants['C3']),
                   'passed': bool(growth_ok)},
    }
    report['passed'] = bool(decay_ok and heat_ok and growth_ok)
    return report, runs


def critical_experiment(well, params, table, ctrl, rel_gap=CRITICAL_GAP, n_jobs=1):
    """Start within 1e-6 relative of J(u0) = d on each side of the Nehari crossing."""
    phi = _maximizer(well)
    d = well.d_depth
    initials = {'blowup': critical_scaling(phi, params, table, well, 'above', rel_gap) * phi,
                'decay': critical_scaling(phi, params, table, well, 'below', rel_gap) * phi}
    runs = _simulate(initials, ctrl, params, table, well, n_jobs)
    report = {'experiment': 'critical', 'd_depth': d, 'runs': {}}

    decay_traj, decay_outcome = runs['decay']
    grad_ceiling = 2.0 * params.p / (params.p - 1.0) * d + BARRIER_TOL
    decay_entry = _run_summary(decay_traj, decay_outcome, params, table, well, initials['decay'])
    decay_entry['grad_sq_max'] = max(s.grad_sq for s in decay_traj.samples)
    decay_entry['grad_sq_ceiling'] = grad_ceiling
    decay_entry['passed'] = bool(isinstance(decay_outcome, GlobalDecayed)
                                 and decay_entry['grad_sq_max'] <= grad_ceiling
                                 and _sign_invariant(decay_traj, 1))

    blow_traj, blow_outcome = runs['blowup']
    _, alpha2 = alpha_barriers(well, min(blow_traj.samples[0].J, d))
    blow_entry = _run_summary(blow_traj, blow_outcome, params, table, well, initials['blowup'])
    blow_entry['grad_sq_min'] = min(s.grad_sq for s in blow_traj.samples)
    blow_entry['grad_sq_floor'] = alpha2 ** 2 - BARRIER_TOL
    blow_entry['passed'] = bool(isinstance(blow_outcome, BlewUp)
                                and blow_entry['grad_sq_min'] >= blow_entry['grad_sq_floor']
                                and _sign_invariant(blow_traj, -1))

    energies_ok = all(abs(runs[name][0].samples[0].J - d) <= CRITICAL_REL_TOL * d for name in runs)
    report['runs'] = {'blowup': blow_entry, 'decay': decay_entry}
    report['critical_energy'] = energies_ok
    report['passed'] = bool(energies_ok and decay_entry['passed'] and blow_entry['passed'])
    return report, runs


EXPERIMENTS = {
    'critical': critical_experiment,
    'rates': rates_experiment,
    'threshold': threshold_experiment,
    'vacuum': vacuum_experiment,
}

