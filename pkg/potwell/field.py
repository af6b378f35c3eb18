import struct

import numpy as np
from scipy.fft import dstn, idstn

CHECKPOINT_MAGIC = b'PWF1'
CHECKPOINT_HEADER = struct.Struct('<4sIQd8x')


class GridSpec:
    """Uniform node-centered grid on the unit cube (0, 1)^3.

    Only the m interior nodes per axis are stored; the Dirichlet boundary is
    implicit. Node i on an axis sits at x = (i + 1) * h.

    Attributes:
        m: Number of interior nodes per axis.
        h: Grid spacing, 1 / (m + 1).
    """

    def __init__(self, m):
        if int(m) != m or m < 4:
            raise ValueError('grid needs an integer m >= 4, got {}'.format(m))
        self.m = int(m)
        self.h = 1.0 / (self.m + 1)

    @property
    def size(self):
        return self.m ** 3

    @property
    def shape(self):
        return self.m, self.m, self.m

    def coordinates(self):
        """Return the node coordinates of one axis."""
        return np.arange(1, self.m + 1) * self.h

    def axis_eigenvalues(self):
        """Eigenvalues (2/h^2)(1 - cos(k pi h)), k = 1..m, of the 1-D Dirichlet -Laplacian."""
        k = np.arange(1, self.m + 1)
        return 2.0 / self.h ** 2 * (1.0 - np.cos(k * np.pi * self.h))

    def symbol(self):
        """Eigenvalues of -laplacian on the 3-D sine basis, shaped like a field cube."""
        mu = self.axis_eigenvalues()
        return mu[:, None, None] + mu[None, :, None] + mu[None, None, :]

    def __eq__(self, other):
        return isinstance(other, GridSpec) and other.m == self.m

    def __hash__(self):
        return hash(self.m)

    def __repr__(self):
        return 'GridSpec(m={})'.format(self.m)


class ScalarField:
    """Real-valued field on the interior nodes of a grid.

    Values are kept as a flat array of length m^3 in lexicographic order with x
    varying fastest, so that `cube[k, j, i]` is the node (x_i, y_j, z_k).
    Fields are treated as immutable values.

    Attributes:
        grid: The GridSpec the field lives on.
        values: Read-only flat numpy.ndarray of m^3 floats.
        blowup: True for a snapshot taken at overflow, which may hold NaN/Inf.
    """

    def __init__(self, grid, values, blowup=False):
        values = np.array(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != grid.size:
            raise ValueError('field has {} values, grid needs {}'.format(values.shape[0], grid.size))
        if not blowup and not np.all(np.isfinite(values)):
            raise ValueError('field contains non-finite values')
        values.setflags(write=False)
        self.grid = grid
        self.values = values
        self.blowup = blowup

    @property
    def cube(self):
        return self.values.reshape(self.grid.shape)

    def check_grid(self, other):
        if self.grid != other.grid:
            raise ValueError('grid mismatch: {} vs {}'.format(self.grid, other.grid))

    def is_zero(self):
        return not np.any(self.values)

    def __add__(self, other):
        self.check_grid(other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        self.check_grid(other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, scalar):
        return ScalarField(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def __repr__(self):
        return 'ScalarField(m={}, max|u|={:.6g})'.format(self.grid.m, norm_linf(self))


def zeros(grid):
    return ScalarField(grid, np.zeros(grid.size))


def sine_mode(grid, k=1):
    """Sample the product sine mode prod_j sin(k_j pi x_j) at the nodes.

    Args:
        grid: The GridSpec.
        k: Either one wave number used on every axis or a triple (kx, ky, kz).
    """
    kx, ky, kz = (k, k, k) if np.isscalar(k) else k
    x = grid.coordinates()
    sx, sy, sz = (np.sin(kk * np.pi * x) for kk in (kx, ky, kz))
    return ScalarField(grid, sz[:, None, None] * sy[None, :, None] * sx[None, None, :])


def eigenvalue(grid, k=1):
    """Discrete Dirichlet eigenvalue of sine_mode(grid, k) for -laplacian."""
    kx, ky, kz = (k, k, k) if np.isscalar(k) else k
    return sum(2.0 / grid.h ** 2 * (1.0 - np.cos(kk * np.pi * grid.h)) for kk in (kx, ky, kz))


def random_field(grid, rng, positive=False):
    """Draw a random field from a numpy Generator; uniform on [0, 1) or [-1, 1)."""
    values = rng.random(grid.size)
    if not positive:
        values = 2.0 * values - 1.0
    return ScalarField(grid, values)


def laplacian(u):
    """Apply the 7-point Dirichlet Laplacian.

    Args:
        u: A ScalarField.

    Returns:
        The ScalarField (sum of the six neighbours - 6 u) / h^2, with neighbours
        outside the cube taken as zero.
    """
    c = u.cube
    padded = np.pad(c, 1)
    total = (padded[2:, 1:-1, 1:-1] + padded[:-2, 1:-1, 1:-1]
             + padded[1:-1, 2:, 1:-1] + padded[1:-1, :-2, 1:-1]
             + padded[1:-1, 1:-1, 2:] + padded[1:-1, 1:-1, :-2]
             - 6.0 * c)
    return ScalarField(u.grid, total / u.grid.h ** 2)


def _sine_solve(u, symbol):
    coefficients = dstn(u.cube, type=1, norm='ortho')
    return ScalarField(u.grid, idstn(coefficients / symbol, type=1, norm='ortho'))


def dirichlet_solve(u, a):
    """Solve (Id - a laplacian) w = u with the 3-D type-I sine transform.

    Args:
        u: Right-hand side ScalarField.
        a: Positive diffusion weight, typically the time step.

    Returns:
        The ScalarField w.
    """
    if not a > 0:
        raise ValueError('dirichlet_solve needs a > 0, got {}'.format(a))
    return _sine_solve(u, 1.0 + a * u.grid.symbol())


def poisson_solve(u):
    """Solve -laplacian(w) = u with the 3-D type-I sine transform."""
    return _sine_solve(u, u.grid.symbol())


def inner(u, w):
    """Discrete L2 pairing h^3 sum(u_i w_i)."""
    u.check_grid(w)
    return float(u.grid.h ** 3 * np.dot(u.values, w.values))


def grad_sq(u):
    """Discrete Dirichlet energy ||grad u||^2, defined as inner(u, -laplacian(u))."""
    return inner(u, -laplacian(u))


def norm_lq(u, q):
    """Discrete L^q norm (h^3 sum |u_i|^q)^(1/q) for q >= 1."""
    if not q >= 1:
        raise ValueError('norm_lq needs q >= 1, got {}'.format(q))
    return float((u.grid.h ** 3 * np.sum(np.abs(u.values) ** q)) ** (1.0 / q))


def norm_linf(u):
    return float(np.max(np.abs(u.values))) if u.values.size else 0.0


def min_eigenvalue(grid):
    """Smallest eigenvalue 3 (2/h^2)(1 - cos(pi h)) of -laplacian on the grid."""
    return 3.0 * (2.0 / grid.h ** 2) * (1.0 - np.cos(np.pi * grid.h))


def encode_checkpoint(u, sample_count=0, t=0.0):
    """Serialize a field to the PWF1 checkpoint layout and return the bytes."""
    header = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, u.grid.m, int(sample_count), float(t))
    return header + u.values.astype('<f8').tobytes()


def decode_checkpoint(data):
    """Parse PWF1 checkpoint bytes.

    Returns:
        A tuple (field, sample_count, t).

    Raises:
        ValueError: 'bad magic' or 'bad length' for malformed data.
    """
    if len(data) < CHECKPOINT_HEADER.size:
        raise ValueError('bad length: checkpoint shorter than its header')
    magic, m, sample_count, t = CHECKPOINT_HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError('bad magic: {!r}'.format(magic))
    grid = GridSpec(m)
    expected = CHECKPOINT_HEADER.size + 8 * grid.size
    if len(data) != expected:
        raise ValueError('bad length: {} bytes, expected {}'.format(len(data), expected))
    values = np.frombuffer(data, dtype='<f8', offset=CHECKPOINT_HEADER.size)
    field = ScalarField(grid, values, blowup=not np.all(np.isfinite(values)))
    return field, sample_count, t


def write_checkpoint(path, u, sample_count=0, t=0.0):
    with open(path, 'wb') as fd:
        fd.write(encode_checkpoint(u, sample_count, t))


def read_checkpoint(path):
    with open(path, 'rb') as fd:
        return decode_checkpoint(fd.read())
