import logging
from abc import abstractmethod
from collections import deque

import numpy as np
from pandas import DataFrame

from potwell.field import ScalarField, dirichlet_solve, inner, norm_linf, norm_lq
from potwell.functionals import energy_parts, grad_J
from potwell.kernel import source_term

logger = logging.getLogger(__name__)

DEFAULT_BLOWUP_LINF = 1e8
MONOTONE_WINDOW = 20
COLUMNS = ['t', 'l2_sq', 'grad_sq', 'P', 'J', 'I', 'l6', 'ut_sq', 'M', 'H', 'L', 'linf']


class StepControl:
    """Adaptive time-stepping and stopping settings of a run.

    Attributes:
        dt_init: First trial step.
        dt_min: Smallest admissible step; falling below it ends the run.
        dt_max: Largest step.
        energy_tol: Bound on the normalized energy residual of an accepted step.
        blowup_linf: Sup-norm level that declares blow-up.
        t_max: Time horizon.
        record_every: Record a trajectory sample every this many accepted steps.
        snapshot_every: Keep the field every this many accepted steps (0: never).
        decay_ratio: Decay is declared once ||u||^2 < decay_ratio * ||u0||^2.
        max_steps: Cap on accepted steps.
        grow_after: Consecutive acceptances before dt grows.
        grow_factor: Growth factor of dt.
    """

    def __init__(self, dt_init=1e-4, dt_min=1e-12, dt_max=1e-2, energy_tol=1e-6,
                 blowup_linf=DEFAULT_BLOWUP_LINF, t_max=5.0, record_every=1, snapshot_every=0,
                 decay_ratio=1e-12, max_steps=200000, grow_after=20, grow_factor=1.2):
        if not 0 < dt_min <= dt_init <= dt_max:
            raise ValueError('need 0 < dt_min <= dt_init <= dt_max, got {}, {}, {}'
                             .format(dt_min, dt_init, dt_max))
        if not energy_tol > 0:
            raise ValueError('energy_tol must be positive, got {}'.format(energy_tol))
        if record_every < 1 or snapshot_every < 0 or max_steps < 1:
            raise ValueError('record_every >= 1, snapshot_every >= 0 and max_steps >= 1 required')
        if not (blowup_linf > 0 and t_max > 0 and 0 < decay_ratio < 1 and grow_factor >= 1):
            raise ValueError('invalid step control settings')
        self.dt_init = float(dt_init)
        self.dt_min = float(dt_min)
        self.dt_max = float(dt_max)
        self.energy_tol = float(energy_tol)
        self.blowup_linf = float(blowup_linf)
        self.t_max = float(t_max)
        self.record_every = int(record_every)
        self.snapshot_every = int(snapshot_every)
        self.decay_ratio = float(decay_ratio)
        self.max_steps = int(max_steps)
        self.grow_after = int(grow_after)
        self.grow_factor = float(grow_factor)


class TrajectorySample:
    """Diagnostics of one state u(t).

    Attributes:
        t: Time.
        l2_sq: ||u||^2.
        grad_sq: ||grad u||^2.
        P: Potential term (coupling included).
        J: Energy.
        I: Nehari value.
        l6: ||u||_6, the L^{2n/(n-2)} norm.
        ut_sq: ||u_t||^2 estimate.
        M: 1/2 of the time integral of ||u||^2.
        linf: ||u||_inf.
    """

    def __init__(self, t, l2_sq, grad_sq, P, J, I, l6, ut_sq, M, linf):
        self.t = t
        self.l2_sq = l2_sq
        self.grad_sq = grad_sq
        self.P = P
        self.J = J
        self.I = I
        self.l6 = l6
        self.ut_sq = ut_sq
        self.M = M
        self.linf = linf


def measure(u, t, ut_sq, M, params, table, parts=None):
    """Build the TrajectorySample of state u at time t."""
    gradient, potential = parts if parts is not None else energy_parts(u, params, table)
    return TrajectorySample(t=t, l2_sq=inner(u, u), grad_sq=gradient, P=potential,
                            J=0.5 * gradient - potential / (2.0 * params.p),
                            I=gradient - potential, l6=norm_lq(u, 6.0),
                            ut_sq=ut_sq, M=M, linf=norm_linf(u))


class Trajectory:
    """Recorded samples, optional field snapshots and the accepted-step log of a run.

    Attributes:
        params: ModelParams of the run.
        d_depth: Well depth used for the H and L columns (None leaves them NaN).
        samples: List of TrajectorySample.
        snapshots: List of (t, ScalarField).
        residuals: Normalized energy residual of every accepted step.
        step_sizes: dt of every accepted step.
        energies: J after every accepted step, starting with J(u0).
        final_state: Last accepted field.
    """

    def __init__(self, params, d_depth=None):
        self.params = params
        self.d_depth = d_depth
        self.samples = []
        self.snapshots = []
        self.residuals = []
        self.step_sizes = []
        self.energies = []
        self.final_state = None

    def __len__(self):
        return len(self.samples)

    def to_frame(self):
        rows = [[s.t, s.l2_sq, s.grad_sq, s.P, s.J, s.I, s.l6, s.ut_sq, s.M, np.nan, np.nan, s.linf]
                for s in self.samples]
        frame = DataFrame(rows, columns=COLUMNS)
        if self.d_depth is not None:
            frame['H'] = self.d_depth - frame['J']
            frame['L'] = frame['H'] + 0.5 * frame['l2_sq']
        return frame

    def to_csv(self, path_or_buffer=None):
        """Write the samples as CSV with 17 significant digits; returns the text when no target is given."""
        return self.to_frame().to_csv(path_or_buffer, index=False, float_format='%.17g',
                                      lineterminator='\n')


class RunOutcome:
    """Classification of a finished run."""

    label = None

    @abstractmethod
    def to_dict(self):
        pass

    def __repr__(self):
        return '{}({})'.format(self.label, self.to_dict())


class GlobalDecayed(RunOutcome):
    label = 'GlobalDecayed'

    def __init__(self, t_end, final_l2):
        self.t_end = t_end
        self.final_l2 = final_l2

    def to_dict(self):
        return {'outcome': self.label, 't_end': self.t_end, 'final_l2': self.final_l2}


class BlewUp(RunOutcome):
    """Blow-up detected; t_blowup_lower_bound is a lower bound of the blow-up time."""

    label = 'BlewUp'

    def __init__(self, t_blowup_lower_bound, peak_linf):
        self.t_blowup_lower_bound = t_blowup_lower_bound
        self.peak_linf = peak_linf

    def to_dict(self):
        return {'outcome': self.label, 't_blowup_lower_bound': self.t_blowup_lower_bound,
                'peak_linf': self.peak_linf}


class Inconclusive(RunOutcome):
    label = 'Inconclusive'

    def __init__(self, t_end, reason):
        self.t_end = t_end
        self.reason = reason

    def to_dict(self):
        return {'outcome': self.label, 't_end': self.t_end, 'reason': self.reason}


def step(u, dt, params, table, blowup_linf=DEFAULT_BLOWUP_LINF):
    """One IMEX step: implicit diffusion, explicit nonlocal source.

    u+ = dirichlet_solve(u + dt v(u)|u|^(p-2)u, dt).

    Args:
        u: Current ScalarField.
        dt: Positive time step.
        params: ModelParams.
        table: KernelTable.
        blowup_linf: Overflow level of the explicit update.

    Returns:
        A tuple (field, overflow). When overflow is True the field is the
        explicit update flagged as a blow-up snapshot.
    """
    if not dt > 0:
        raise ValueError('step needs dt > 0, got {}'.format(dt))
    rhs = u.values
    if params.coupling != 0.0:
        with np.errstate(over='ignore', invalid='ignore'):
            try:
                rhs = rhs + dt * params.coupling * source_term(u, params.p, table).values
            except ValueError:
                rhs = np.full_like(rhs, np.inf)
            overflow = not np.all(np.isfinite(rhs)) or np.max(np.abs(rhs)) > blowup_linf
        if overflow:
            return ScalarField(u.grid, rhs, blowup=True), True
    # (Id - dt laplacian)^-1 obeys a discrete maximum principle, so the sup
    # norm cannot grow past that of rhs.
    return dirichlet_solve(ScalarField(u.grid, rhs), dt), False


def _residual(J_before, J_after, dt, ut_sq):
    raw = J_after - J_before + dt * ut_sq
    scale = max(abs(J_before), dt * ut_sq, np.finfo(float).tiny)
    return raw / scale


def energy_residual(u_before, u_after, dt, params, table):
    """Normalized defect of the discrete energy identity J(u+) - J(u) = -dt ||u_t||^2.

    Returns:
        (J(u+) - J(u) + dt ||(u+ - u)/dt||^2) / max(|J(u)|, dt ||u_t||^2, tiny).
    """
    difference = u_after - u_before
    ut_sq = inner(difference, difference) / dt ** 2
    gradient, potential = energy_parts(u_before, params, table)
    J_before = 0.5 * gradient - potential / (2.0 * params.p)
    gradient, potential = energy_parts(u_after, params, table)
    J_after = 0.5 * gradient - potential / (2.0 * params.p)
    return _residual(J_before, J_after, dt, ut_sq)


def _monotone(values):
    values = list(values)
    return len(values) > MONOTONE_WINDOW and all(b > a for a, b in zip(values, values[1:]))


def run(u0, ctrl, params, table, well=None):
    """Integrate the flow from u0 and classify the outcome.

    Steps are accepted only when the normalized energy residual is within
    ctrl.energy_tol; rejected steps halve dt, and dt grows by ctrl.grow_factor
    after ctrl.grow_after consecutive acceptances. The run stops with

    - GlobalDecayed once ||u||^2 < decay_ratio ||u0||^2 with J >= 0,
    - BlewUp once ||u||_inf exceeds blowup_linf, or dt drops below dt_min
      while ||u||_inf grew over the last 20 accepted steps,
    - Inconclusive at t_max, at max_steps or on a collapse without growth.

    Args:
        u0: Initial ScalarField.
        ctrl: StepControl.
        params: ModelParams.
        table: KernelTable.
        well: Optional WellCurve; its depth fills the H and L columns.

    Returns:
        A tuple (Trajectory, RunOutcome).
    """
    traj = Trajectory(params, d_depth=well.d_depth if well is not None else None)
    parts = energy_parts(u0, params, table)
    J = 0.5 * parts[0] - parts[1] / (2.0 * params.p)
    initial_velocity = grad_J(u0, params, table)
    sample = measure(u0, 0.0, inner(initial_velocity, initial_velocity), 0.0, params, table, parts)
    traj.samples.append(sample)
    traj.energies.append(J)
    traj.final_state = u0
    if ctrl.snapshot_every:
        traj.snapshots.append((0.0, u0))
    l2_initial = sample.l2_sq
    if l2_initial == 0.0:
        return traj, GlobalDecayed(0.0, 0.0)

    u, t, M, l2 = u0, 0.0, 0.0, l2_initial
    dt = ctrl.dt_init
    accepted = streak = 0
    linf_window = deque([sample.linf], maxlen=MONOTONE_WINDOW + 1)
    peak = sample.linf
    last_recorded = 0
    outcome = None
    while outcome is None:
        if t >= ctrl.t_max:
            outcome = Inconclusive(t, 'reached t_max')
            break
        if accepted >= ctrl.max_steps:
            outcome = Inconclusive(t, 'reached max_steps')
            break
        new, overflow = step(u, dt, params, table, ctrl.blowup_linf)
        if overflow:
            with np.errstate(invalid='ignore'):
                peak = max(peak, float(np.nanmax(np.abs(new.values))))
            outcome = BlewUp(t, peak)
            break
        difference = new - u
        ut_sq = inner(difference, difference) / dt ** 2
        new_parts = energy_parts(new, params, table)
        J_new = 0.5 * new_parts[0] - new_parts[1] / (2.0 * params.p)
        residual = _residual(J, J_new, dt, ut_sq)
        if not abs(residual) <= ctrl.energy_tol:
            dt *= 0.5
            streak = 0
            if dt < ctrl.dt_min:
                if _monotone(linf_window):
                    outcome = BlewUp(t, peak)
                else:
                    outcome = Inconclusive(t, 'step size collapsed without sup-norm growth')
                    logger.warning('run stopped at t=%.6g: step size collapsed', t)
            continue

        l2_new = inner(new, new)
        M += dt * (l2 + l2_new) / 4.0
        u, J, l2 = new, J_new, l2_new
        t += dt
        accepted += 1
        streak += 1
        traj.residuals.append(residual)
        traj.step_sizes.append(dt)
        traj.energies.append(J)
        traj.final_state = u
        last_ut_sq, last_parts = ut_sq, new_parts
        linf = norm_linf(u)
        linf_window.append(linf)
        peak = max(peak, linf)
        if accepted % ctrl.record_every == 0:
            traj.samples.append(measure(u, t, ut_sq, M, params, table, new_parts))
            last_recorded = accepted
        if ctrl.snapshot_every and accepted % ctrl.snapshot_every == 0:
            traj.snapshots.append((t, u))
        if l2 < ctrl.decay_ratio * l2_initial and J >= 0.0:
            outcome = GlobalDecayed(t, l2)
        if streak >= ctrl.grow_after:
            dt = min(dt * ctrl.grow_factor, ctrl.dt_max)
            streak = 0

    if accepted and last_recorded != accepted:
        traj.samples.append(measure(u, t, last_ut_sq, M, params, table, last_parts))
    if ctrl.snapshot_every and traj.snapshots[-1][0] != t:
        traj.snapshots.append((t, u))
    logger.info('run finished after %d accepted steps: %s', accepted, outcome)
    return traj, outcome


def concavity_diagnostics(traj, params):
    """Concavity quantities of the blow-up argument along a trajectory.

    M(t) is the accumulated half time-integral of ||u||^2, M'(t) = ||u||^2/2 and
    M''(t) = -I(u(t)) are read from the samples, and the indicator is
    M M'' - p (M')^2.

    Returns:
        A pandas.DataFrame with columns t, M, M_prime, M_double_prime, indicator.

    Raises:
        ValueError: With fewer than three samples.
    """
    if len(traj) < 3:
        raise ValueError('concavity diagnostics need at least 3 samples, got {}'.format(len(traj)))
    frame = traj.to_frame()
    series = DataFrame({'t': frame['t'], 'M': frame['M'], 'M_prime': 0.5 * frame['l2_sq'],
                        'M_double_prime': -frame['I']})
    series['indicator'] = series['M'] * series['M_double_prime'] - params.p * series['M_prime'] ** 2
    return series
