"""Free-space convolution with the Riesz kernel 1/|x| on the unit-cube grid."""
import functools

import numpy as np
from scipy.fft import irfftn, rfftn
from scipy.integrate import dblquad
from scipy.spatial.distance import cdist

from potwell.field import ScalarField

DIRECT_SUM_LIMIT = 16 ** 3


@functools.lru_cache(maxsize=None)
def self_constant(side=1.0):
    """Integral of 1/|z| over the cube of the given side centred at the origin.

    The cube splits into six pyramids with apex at the origin. Integrating the
    radial variable in closed form leaves a smooth integral over one face,
    which is evaluated by adaptive quadrature:
    S = 6 (a/2) * integral over [-a, a]^2 of 1/sqrt(x^2 + y^2 + a^2), a = side/2.

    Args:
        side: Edge length of the cube.

    Returns:
        The integral S(side); S(1) is about 2.38.
    """
    a = 0.5 * side
    quarter, _ = dblquad(lambda y, x: 1.0 / np.sqrt(x * x + y * y + a * a),
                         0.0, a, 0.0, a, epsabs=0.0, epsrel=1e-13)
    return 12.0 * a * quarter


class KernelTable:
    """Kernel samples on the doubled lattice used for aperiodic FFT convolution.

    Entry [i, j, k] holds 1/|r| for the lattice offset r whose components are
    the signed FFT indices of (i, j, k) times h; the origin holds the cell
    average S/h instead of the singular value. The table is read-only.

    Attributes:
        grid: The GridSpec the table belongs to.
        weights: numpy.ndarray of shape (2m, 2m, 2m).
        self_weight: S/h, the diagonal weight.
        spectrum: Real FFT of weights.
    """

    def __init__(self, grid):
        m2 = 2 * grid.m
        offsets = np.abs(np.fft.fftfreq(m2, 1.0 / m2)) * grid.h
        distance = np.sqrt(offsets[:, None, None] ** 2 + offsets[None, :, None] ** 2
                           + offsets[None, None, :] ** 2)
        distance[0, 0, 0] = 1.0
        weights = 1.0 / distance
        weights[0, 0, 0] = self_constant() / grid.h
        weights.setflags(write=False)
        self.grid = grid
        self.weights = weights
        self.self_weight = float(weights[0, 0, 0])
        self.spectrum = rfftn(weights)
        self.spectrum.setflags(write=False)

    def check_grid(self, u):
        if u.grid != self.grid:
            raise ValueError('grid mismatch: field on {}, kernel table on {}'.format(u.grid, self.grid))


def convolve(src, table):
    """Discrete v_i = h^3 (sum_{j != i} src_j / |x_i - x_j| + src_i S / h).

    Zero-pads src to 2m nodes per axis so the circular FFT product equals the
    free-space sum.

    Args:
        src: Source ScalarField, e.g. |u|^p.
        table: KernelTable on the same grid.

    Returns:
        The ScalarField v.
    """
    table.check_grid(src)
    m = src.grid.m
    padded = np.zeros((2 * m,) * 3)
    padded[:m, :m, :m] = src.cube
    full = irfftn(rfftn(padded) * table.spectrum, s=padded.shape)
    return ScalarField(src.grid, full[:m, :m, :m] * src.grid.h ** 3)


def node_coordinates(grid):
    """Return an (m^3, 3) array of node positions in field order."""
    x = grid.coordinates()
    zz, yy, xx = np.meshgrid(x, x, x, indexing='ij')
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def convolve_direct(src, table, max_nodes=DIRECT_SUM_LIMIT, chunk=512):
    """Reference O(N^2) evaluation of convolve by explicit double sum.

    Raises:
        ValueError: If the grid has more than max_nodes nodes.
    """
    table.check_grid(src)
    grid = src.grid
    if grid.size > max_nodes:
        raise ValueError('direct sum limited to {} nodes, grid has {}'.format(max_nodes, grid.size))
    points = node_coordinates(grid)
    out = np.empty(grid.size)
    for start in range(0, grid.size, chunk):
        stop = min(start + chunk, grid.size)
        distance = cdist(points[start:stop], points)
        rows = np.arange(stop - start)
        distance[rows, start + rows] = 1.0
        weights = 1.0 / distance
        weights[rows, start + rows] = table.self_weight
        out[start:stop] = weights @ src.values
    return ScalarField(grid, out * grid.h ** 3)


def power_abs(u, p):
    """|u|^p as a field."""
    return ScalarField(u.grid, np.abs(u.values) ** p)


def signed_power(u, exponent):
    """sign(u) |u|^exponent as a field; continuous at 0 for exponent > 0."""
    return ScalarField(u.grid, np.sign(u.values) * np.abs(u.values) ** exponent)


def potential_energy(u, p, table):
    """P(u) = double integral of |u(x)|^p |u(y)|^p / |x - y|, as inner(convolve(|u|^p), |u|^p)."""
    if not p > 1:
        raise ValueError('potential_energy needs p > 1, got {}'.format(p))
    density = power_abs(u, p)
    v = convolve(density, table)
    return float(u.grid.h ** 3 * np.dot(v.values, density.values))


def source_term(u, p, table):
    """Nonlocal source v(u) |u|^(p-2) u with v(u) = convolve(|u|^p)."""
    v = convolve(power_abs(u, p), table)
    return ScalarField(u.grid, v.values * signed_power(u, p - 1).values)
