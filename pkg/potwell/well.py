import json
import logging

import numpy as np

from potwell.field import (ScalarField, grad_sq, poisson_solve, random_field,
                           sine_mode)
from potwell.kernel import potential_energy, source_term
from potwell.utils import call_parallel, dump_json

logger = logging.getLogger(__name__)

BISECTION_ITERATIONS = 200
MAX_HALVINGS = 80
STALL_WINDOW = 20
STALL_RTOL = 1e-13


class OptimizerConfig:
    """Settings of the multi-start Rayleigh quotient ascent.

    Attributes:
        starts: Number of starts; the first is the lowest sine mode, the rest
            are positive random fields.
        seed: Seed of the numpy Generator drawing the random starts.
        max_iter: Iteration cap per start.
        gtol: Stop when the projected gradient norm is below gtol times the
            current quotient.
        n_jobs: Number of starts evaluated concurrently.
    """

    def __init__(self, starts=5, seed=0, max_iter=5000, gtol=1e-8, n_jobs=1):
        if starts < 1 or max_iter < 1 or not gtol > 0:
            raise ValueError('invalid optimizer settings: starts={}, max_iter={}, gtol={}'
                             .format(starts, max_iter, gtol))
        self.starts = int(starts)
        self.seed = int(seed)
        self.max_iter = int(max_iter)
        self.gtol = float(gtol)
        self.n_jobs = int(n_jobs)


def _depth(delta, p, c_star):
    return (0.5 * delta ** (1.0 / (p - 1.0)) - delta ** (p / (p - 1.0)) / (2.0 * p)) \
        * c_star ** (-1.0 / (p - 1.0))


class WellCurve:
    """Estimated sharp constant and the potential-well levels derived from it.

    Attributes:
        c_star: Estimated C*, a lower bound of the discrete supremum of rayleigh.
        p: Exponent of the model.
        d_depth: Well depth d = d(1) = (1/2 - 1/(2p)) c_star^(-1/(p-1)).
        maximizer: Best ScalarField found, or None for analytic curves.
        provenance: Dict of optimizer metadata (starts, iterations, seed,
            per-start values and convergence flags).
        histories: Per-start sequences of the running best quotient.
    """

    def __init__(self, c_star, p, maximizer=None, provenance=None, histories=None):
        if not c_star > 0:
            raise ValueError('c_star must be positive, got {}'.format(c_star))
        self.c_star = float(c_star)
        self.p = float(p)
        self.d_depth = _depth(1.0, self.p, self.c_star)
        self.maximizer = maximizer
        self.provenance = provenance if provenance is not None else {}
        self.histories = histories if histories is not None else []

    @classmethod
    def from_constant(cls, c_star, p):
        """Build a curve from a given constant, e.g. C* = 1 for closed-form checks."""
        return cls(c_star, p, provenance={'source': 'constant'})

    @property
    def m(self):
        return self.maximizer.grid.m if self.maximizer is not None else None

    def to_dict(self):
        info = {'p': self.p, 'm': self.m, 'c_star': self.c_star, 'd_depth': self.d_depth}
        info.update(self.provenance)
        return info

    def to_json(self, extra=None):
        info = self.to_dict()
        if extra:
            info.update(extra)
        return dump_json(info)

    @classmethod
    def from_json(cls, text, maximizer=None):
        info = json.loads(text)
        provenance = {key: value for key, value in info.items()
                      if key not in ('p', 'm', 'c_star', 'd_depth', 'config')}
        return cls(info['c_star'], info['p'], maximizer=maximizer, provenance=provenance)

    def __repr__(self):
        return 'WellCurve(c_star={:.10g}, p={}, d_depth={:.10g})'.format(self.c_star, self.p, self.d_depth)


def rayleigh(u, params, table):
    """Scale-invariant quotient P(u) / ||grad u||^(2p) whose supremum is C*."""
    gradient = grad_sq(u)
    if gradient == 0.0:
        raise ValueError('rayleigh is undefined for the zero field')
    return potential_energy(u, params.p, table) / gradient ** params.p


def _normalize(u):
    return ScalarField(u.grid, u.values / np.sqrt(grad_sq(u)))


def _ascent(u, params, table, opt):
    u = _normalize(u)
    value = potential_energy(u, params.p, table)
    best, best_field = value, u
    history = [best]
    tau = 1.0 / value
    converged = False
    reason = 'max_iter'
    iteration = 0
    for iteration in range(1, opt.max_iter + 1):
        # Sobolev gradient on the sphere ||grad u|| = 1; H^1-orthogonal to u.
        direction = poisson_solve(source_term(u, params.p, table)) - value * u
        if np.sqrt(grad_sq(direction)) <= opt.gtol * value:
            converged = True
            reason = 'gtol'
            break
        tau *= 2.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = _normalize(u + tau * direction)
            trial_value = potential_energy(trial, params.p, table)
            if trial_value > best:
                best, best_field = trial_value, trial
            if trial_value >= value:
                u, value = trial, trial_value
                accepted = True
                break
            tau *= 0.5
        history.append(best)
        if not accepted:
            reason = 'line search stalled'
            break
        # running maximum flat at round-off level
        if len(history) > STALL_WINDOW and history[-1] - history[-1 - STALL_WINDOW] <= STALL_RTOL * history[-1]:
            converged = True
            reason = 'stalled'
            break
    return {'value': best, 'field': best_field, 'iterations': iteration,
            'converged': converged, 'reason': reason, 'history': history}


def estimate_cstar(params, table, opt):
    """Estimate C* by normalized gradient ascent of rayleigh from several starts.

    Each start is scaled to ||grad u|| = 1, where rayleigh reduces to P(u). The
    ascent direction is the H^1 gradient (-laplacian)^-1 (v(u)|u|^(p-2)u) - P(u) u,
    step sizes are halved until the quotient does not decrease, and the result
    is renormalized after every step. A start ends on the gradient tolerance or
    once its running maximum gains less than STALL_RTOL over STALL_WINDOW
    iterations.

    Args:
        params: ModelParams.
        table: KernelTable of the working grid.
        opt: OptimizerConfig.

    Returns:
        A WellCurve whose c_star is the running maximum over every evaluated
        field and whose maximizer is the field attaining it.
    """
    grid = table.grid
    rng = np.random.default_rng(opt.seed)
    starts = [sine_mode(grid, 1)] + [random_field(grid, rng, positive=True) for _ in range(opt.starts - 1)]
    results = call_parallel(lambda u: _ascent(u, params, table, opt), starts, n_jobs=opt.n_jobs)

    best = results[0]
    for index, result in enumerate(results):
        logger.info('start %d: rayleigh %.12g after %d iterations (%s)',
                    index, result['value'], result['iterations'], result['reason'])
        if not result['converged']:
            logger.warning('start %d did not converge: %s', index, result['reason'])
        if result['value'] > best['value']:
            best = result

    provenance = {
        'starts': opt.starts,
        'seed': opt.seed,
        'iterations': [r['iterations'] for r in results],
        'converged': [r['converged'] for r in results],
        'start_values': [r['value'] for r in results],
    }
    return WellCurve(best['value'], params.p, maximizer=best['field'], provenance=provenance,
                     histories=[r['history'] for r in results])


def d_of_delta(curve, delta):
    """Closed-form well level d(delta) = (delta^(1/(p-1))/2 - delta^(p/(p-1))/(2p)) C*^(-1/(p-1)).

    Raises:
        ValueError: If delta is outside (0, p).
    """
    if not 0.0 < delta < curve.p:
        raise ValueError('d(delta) needs 0 < delta < p = {}, got {}'.format(curve.p, delta))
    return _depth(delta, curve.p, curve.c_star)


def bisect_root(function, lo, hi, target, increasing):
    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (function(mid) < target) == increasing:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def roots_delta(curve, e):
    """The two roots delta1 in (0, 1) and delta2 in (1, p) of d(delta) = e.

    Raises:
        ValueError: If e is not in (0, d_depth).
    """
    if not 0.0 < e < curve.d_depth:
        raise ValueError('roots_delta needs 0 < e < d = {}, got {}'.format(curve.d_depth, e))

    def level(delta):
        return _depth(delta, curve.p, curve.c_star)

    delta1 = bisect_root(level, 0.0, 1.0, e, increasing=True)
    delta2 = bisect_root(level, 1.0, curve.p, e, increasing=False)
    return delta1, delta2


def barrier_g(curve, alpha):
    """g(alpha) = alpha^2/2 - C*/(2p) alpha^(2p), the lower bound of J in terms of ||grad u||."""
    return 0.5 * alpha ** 2 - curve.c_star / (2.0 * curve.p) * alpha ** (2.0 * curve.p)


def alpha_barriers(curve, J0):
    """Gradient barriers of a low-energy blow-up solution.

    Args:
        curve: WellCurve.
        J0: Initial energy, 0 < J0 <= d_depth.

    Returns:
        (alpha1, alpha2) with alpha1 = C*^(-1/(2p-2)) the maximizer of g and
        alpha2 >= alpha1 the root of g(alpha2) = J0 on the decreasing branch.
    """
    if not 0.0 < J0 <= curve.d_depth:
        raise ValueError('alpha_barriers needs 0 < J0 <= d = {}, got {}'.format(curve.d_depth, J0))
    alpha1 = curve.c_star ** (-1.0 / (2.0 * curve.p - 2.0))
    if J0 >= curve.d_depth or J0 >= barrier_g(curve, alpha1):
        return alpha1, alpha1
    hi = 2.0 * alpha1
    while barrier_g(curve, hi) > J0:
        hi *= 2.0
    alpha2 = bisect_root(lambda a: barrier_g(curve, a), alpha1, hi, J0, increasing=False)
    return alpha1, alpha2


def gradient_floor(curve, delta):
    """Lower bound (delta / C*)^(1/(p-1)) of ||grad u||^2 for u != 0 with I_delta(u) <= 0."""
    return (delta / curve.c_star) ** (1.0 / (curve.p - 1.0))


def nehari_energy(delta, u, params, table):
    """J(lambda(delta, u) u) from the closed form in terms of rayleigh(u)."""
    return _depth(delta, params.p, rayleigh(u, params, table))


def d_table(curve, size=200):
    """Rows (delta, d(delta)) on size evenly spaced interior points of (0, p).

    The point nearest to 1 is replaced by delta = 1, so the table peaks on the
    exact well depth.
    """
    deltas = np.arange(1, size + 1) * curve.p / (size + 1.0)
    deltas[np.argmin(np.abs(deltas - 1.0))] = 1.0
    return [(float(delta), d_of_delta(curve, delta)) for delta in deltas]
