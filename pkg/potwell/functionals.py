from potwell.field import ScalarField, grad_sq, laplacian
from potwell.kernel import potential_energy, source_term

DIMENSION = 3
NEHARI_TOL = 1e-9


class ModelParams:
    """Parameters of the nonlocal heat equation in dimension n = 3.

    Attributes:
        p: Exponent of the nonlinearity, 1 < p < (n + 2)/(n - 2) = 5.
        n: Spatial dimension, always 3.
        coupling: Factor in front of the nonlocal term. 1.0 is the model; 0.0
            switches the source off (heat-only calibration runs).
    """

    def __init__(self, p, coupling=1.0):
        self.n = DIMENSION
        upper = (self.n + 2.0) / (self.n - 2.0)
        if not 1.0 < p < upper:
            raise ValueError('exponent p must satisfy 1 < p < {}, got {}'.format(upper, p))
        if coupling < 0:
            raise ValueError('coupling must be nonnegative, got {}'.format(coupling))
        self.p = float(p)
        self.coupling = float(coupling)

    @property
    def well_posed_q_ok(self):
        """True when (p - 1)(2 - 1/p) < 4/(n - 2), the extra hypothesis of the global-existence results."""
        return (self.p - 1.0) * (2.0 - 1.0 / self.p) < 4.0 / (self.n - 2)

    def heat_only(self):
        """Return a copy with the nonlocal term switched off."""
        return ModelParams(self.p, coupling=0.0)

    def to_dict(self):
        return {'p': self.p, 'n': self.n, 'coupling': self.coupling,
                'well_posed_q_ok': self.well_posed_q_ok}

    def __repr__(self):
        return 'ModelParams(p={}, coupling={})'.format(self.p, self.coupling)


def coupled_potential(u, params, table):
    if params.coupling == 0.0:
        return 0.0
    return params.coupling * potential_energy(u, params.p, table)


def energy_parts(u, params, table):
    """Return (grad_sq(u), coupling * P(u)), the two building blocks of J and I."""
    return grad_sq(u), coupled_potential(u, params, table)


def energy_J(u, params, table):
    """J(u) = 1/2 ||grad u||^2 - 1/(2p) P(u)."""
    gradient, potential = energy_parts(u, params, table)
    return 0.5 * gradient - potential / (2.0 * params.p)


def nehari_I(u, params, table):
    """I(u) = ||grad u||^2 - P(u) = (J'(u), u)."""
    gradient, potential = energy_parts(u, params, table)
    return gradient - potential


def nehari_I_delta(u, delta, params, table):
    """I_delta(u) = delta ||grad u||^2 - P(u) for delta > 0."""
    if not delta > 0:
        raise ValueError('delta must be positive, got {}'.format(delta))
    gradient, potential = energy_parts(u, params, table)
    return delta * gradient - potential


def nehari_delta(u, params, table):
    """Root delta*(u) = P(u)/||grad u||^2 of the affine map delta -> I_delta(u)."""
    gradient, potential = energy_parts(u, params, table)
    if gradient == 0.0:
        raise ValueError('nehari_delta is undefined for the zero field')
    return potential / gradient


def lambda_scale(delta, u, params, table):
    """Scaling lambda(delta, u) > 0 that puts lambda * u on the manifold N_delta.

    lambda = (delta ||grad u||^2 / P(u))^(1/(2p - 2)).

    Args:
        delta: Positive level of the family I_delta.
        u: A nonzero ScalarField.
        params: ModelParams.
        table: KernelTable.

    Returns:
        The positive scaling factor.

    Raises:
        ValueError: For u = 0, where no scaling exists, for P(u) = 0 (heat-only
            model), or delta <= 0.
    """
    if not delta > 0:
        raise ValueError('delta must be positive, got {}'.format(delta))
    gradient, potential = energy_parts(u, params, table)
    if gradient == 0.0:
        raise ValueError('lambda_scale is undefined for the zero field')
    if potential == 0.0:
        raise ValueError('lambda_scale needs a nonzero nonlocal term, got P(u) = 0 with coupling {}'
                         .format(params.coupling))
    return (delta * gradient / potential) ** (1.0 / (2.0 * params.p - 2.0))


def on_nehari(u, delta, params, table, tol=NEHARI_TOL):
    """Membership test |I_delta(u)| <= tol * max(delta ||grad u||^2, P(u))."""
    gradient, potential = energy_parts(u, params, table)
    return abs(delta * gradient - potential) <= tol * max(delta * gradient, potential)


def fibering(u, s, params, table):
    """J(s u) = s^2/2 ||grad u||^2 - s^(2p)/(2p) P(u)."""
    gradient, potential = energy_parts(u, params, table)
    return 0.5 * s ** 2 * gradient - s ** (2.0 * params.p) * potential / (2.0 * params.p)


def grad_J(u, params, table):
    """Variational derivative J'(u) = -laplacian(u) - v(u) |u|^(p-2) u.

    This is the negative of the right-hand side of the evolution equation.
    """
    minus_laplacian = -laplacian(u).values
    if params.coupling == 0.0:
        return ScalarField(u.grid, minus_laplacian)
    source = source_term(u, params.p, table).values
    return ScalarField(u.grid, minus_laplacian - params.coupling * source)


def decomposition(u, params, table):
    """Return (1/2 - 1/(2p)) ||grad u||^2 + I(u)/(2p), an alternative evaluation of J(u)."""
    gradient, potential = energy_parts(u, params, table)
    return (0.5 - 0.5 / params.p) * gradient + (gradient - potential) / (2.0 * params.p)
