"""Periodic grid core: cell-centered fields on the unit torus.

The domain is [0,1)^2 with N x N square cells; all fields are sampled at
cell centers ((i+1/2)/N, (j+1/2)/N) and stored as (N, N) float arrays with
axis 0 along x1 and axis 1 along x2.  Difference operators are centered
and wrap periodically, so the discrete gradient and (minus) divergence are
exact adjoints and every gradient integrates to zero exactly.
"""

import csv
import dataclasses
import io

import numpy as np
from scipy import ndimage

from .errors import GridMismatch

# Tight bound for a wrapped displacement: both components live in
# [-1/2, 1/2), so the Euclidean norm never exceeds sqrt(2)/2.
MAX_DISPLACEMENT_NORM = np.sqrt(2.0) / 2.0


@dataclasses.dataclass(frozen=True)
class TorusGrid:
    """Uniform N x N cell-centered grid on the unit torus."""

    n: int

    def __post_init__(self):
        if self.n < 4:
            raise ValueError(f"grid needs at least 4 cells per axis, got {self.n}")

    @property
    def spacing(self):
        return 1.0 / self.n

    @property
    def cell_area(self):
        return 1.0 / self.n**2

    def axis_centers(self):
        return (np.arange(self.n) + 0.5) / self.n

    def centers(self):
        """Cell-center coordinate arrays (x1, x2), each (N, N)."""
        c = self.axis_centers()
        return np.meshgrid(c, c, indexing="ij")

    def index_of(self, points):
        """Indices (i, j) of the cells containing ``points`` (..., 2)."""
        pts = np.asarray(points, dtype=float)
        idx = np.floor(pts * self.n).astype(int) % self.n
        return idx[..., 0], idx[..., 1]

    def nearest_center(self, point):
        """Snap a point to the center of its cell."""
        i, j = self.index_of(np.asarray(point, dtype=float))
        return np.array([(i + 0.5) * self.spacing, (j + 0.5) * self.spacing])


def check_same_grid(a, b):
    ga = a.grid if hasattr(a, "grid") else a
    gb = b.grid if hasattr(b, "grid") else b
    if ga.n != gb.n:
        raise GridMismatch(f"grids differ: {ga.n} vs {gb.n}")


@dataclasses.dataclass
class TorusField:
    """Scalar field sampled at cell centers."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n, self.grid.n):
            raise GridMismatch(
                f"field shape {self.values.shape} does not match grid {self.grid.n}"
            )

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.centers()
        return cls(grid, fn(x1, x2))

    def copy(self):
        return TorusField(self.grid, self.values.copy())


def wrap(points):
    """Map points back to the fundamental domain [0,1)^2."""
    return np.asarray(points, dtype=float) % 1.0


def wrap_delta(delta):
    """Reduce coordinate differences to the representative in [-1/2, 1/2)."""
    return (np.asarray(delta, dtype=float) + 0.5) % 1.0 - 0.5


def periodic_delta(a, b):
    """Shortest vector from b to a on the torus, components in [-1/2, 1/2)."""
    return wrap_delta(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))


def periodic_distance(a, b):
    """Geodesic (flat) distance between points on the torus."""
    d = periodic_delta(a, b)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclasses.dataclass
class PeriodicDisplacement:
    """Vector field of shortest-representative displacements.

    Components are wrapped into [-1/2, 1/2) at construction, which caps the
    pointwise Euclidean norm at sqrt(2)/2; that bound is asserted because
    every consumer (velocities, transport maps) relies on it.
    """

    grid: TorusGrid
    d1: np.ndarray
    d2: np.ndarray

    def __post_init__(self):
        self.d1 = wrap_delta(np.ascontiguousarray(self.d1, dtype=float))
        self.d2 = wrap_delta(np.ascontiguousarray(self.d2, dtype=float))
        for d in (self.d1, self.d2):
            if d.shape != (self.grid.n, self.grid.n):
                raise GridMismatch("displacement shape does not match grid")
        assert float(np.max(self.norm())) <= MAX_DISPLACEMENT_NORM + 1e-15

    def norm(self):
        return np.hypot(self.d1, self.d2)

    def sup_norm(self):
        return float(np.max(self.norm()))

    def apply(self):
        """Target points x + d(x) of every cell center, wrapped to [0,1)^2."""
        x1, x2 = self.grid.centers()
        return wrap(np.stack([x1 + self.d1, x2 + self.d2], axis=-1))

    def perp(self):
        """Rotate the field by +90 degrees: (d1, d2) -> (-d2, d1)."""
        return PeriodicDisplacement(self.grid, -self.d2, self.d1)


# --- difference operators --------------------------------------------------

def _dx(values, axis, spacing):
    return (np.roll(values, -1, axis=axis) - np.roll(values, 1, axis=axis)) / (2.0 * spacing)


def periodic_gradient(field):
    """Centered-difference gradient; returns a pair of (N, N) arrays.

    The stencil is antisymmetric under the periodic shift, so the pair
    (periodic_gradient, -periodic_divergence) is exactly adjoint in the
    midpoint inner product.
    """
    values, grid = _values_and_grid(field)
    h = grid.spacing
    return _dx(values, 0, h), _dx(values, 1, h)


def periodic_divergence(v1, v2, grid):
    """Centered-difference divergence of a cell-centered vector field."""
    h = grid.spacing
    return _dx(np.asarray(v1, dtype=float), 0, h) + _dx(np.asarray(v2, dtype=float), 1, h)


def second_differences(values, spacing):
    """Compact Hessian stencils: 5-point pure, 4-corner mixed.

    Returns (f11, f12, f22).  Exact on quadratics and cubics.
    """
    h2 = spacing * spacing
    f11 = (np.roll(values, -1, 0) + np.roll(values, 1, 0) - 2.0 * values) / h2
    f22 = (np.roll(values, -1, 1) + np.roll(values, 1, 1) - 2.0 * values) / h2
    f12 = (
        np.roll(values, (-1, -1), (0, 1))
        + np.roll(values, (1, 1), (0, 1))
        - np.roll(values, (-1, 1), (0, 1))
        - np.roll(values, (1, -1), (0, 1))
    ) / (4.0 * h2)
    return f11, f12, f22


def integral(field, grid=None):
    """Midpoint quadrature over the torus (exact for the stored samples)."""
    values, grid = _values_and_grid(field, grid)
    return float(np.sum(values)) * grid.cell_area


def mean_value(field, grid=None):
    values, _ = _values_and_grid(field, grid)
    return float(np.mean(values))


def mean_zero(values):
    """Subtract the grid mean."""
    values = np.asarray(values, dtype=float)
    return values - values.mean()


def _values_and_grid(field, grid=None):
    if isinstance(field, TorusField):
        return field.values, field.grid
    if grid is None:
        raise ValueError("grid required when passing a bare array")
    return np.asarray(field, dtype=float), grid


# --- interpolation ----------------------------------------------------------

def sample_bilinear(values, points, grid):
    """Periodic bilinear interpolation at arbitrary points.

    Bilinear weights are convex, so sampled values stay inside
    [min(values), max(values)]; transport relies on that monotonicity.

    Parameters
    ----------
    values : (N, N) array
        Cell-centered samples of a periodic field (unwrapped values).
    points : (..., 2) array
        Query points anywhere in the plane (wrapped internally).
    """
    pts = np.asarray(points, dtype=float)
    coords = pts * grid.n - 0.5  # physical -> fractional index
    stacked = np.stack([coords[..., 0].ravel(), coords[..., 1].ravel()])
    out = ndimage.map_coordinates(
        np.asarray(values, dtype=float), stacked, order=1, mode="grid-wrap"
    )
    return out.reshape(pts.shape[:-1])


def sample_vector_bilinear(v1, v2, points, grid):
    s1 = sample_bilinear(v1, points, grid)
    s2 = sample_bilinear(v2, points, grid)
    return s1, s2


# --- serialization ----------------------------------------------------------

# Binary layout: little-endian float64 throughout, first the grid size N
# (as a float), then the N*N values row-major.  CSV mirrors the same
# row-major order with full round-trip precision.

def field_to_binary(field, path):
    values, grid = _values_and_grid(field)
    header = np.array([float(grid.n)], dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(header.tobytes())
        fh.write(values.astype("<f8").tobytes())


def field_from_binary(path):
    raw = np.fromfile(path, dtype="<f8")
    if raw.size < 1:
        raise ValueError(f"{path}: empty field file")
    n = int(raw[0])
    if raw.size != 1 + n * n:
        raise ValueError(f"{path}: expected {n * n} values, found {raw.size - 1}")
    grid = TorusGrid(n)
    return TorusField(grid, raw[1:].reshape(n, n))


def field_to_csv(field, path_or_buf):
    values, grid = _values_and_grid(field)
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh)
        writer.writerow(["i", "j", "value"])
        for i in range(grid.n):
            for j in range(grid.n):
                writer.writerow([i, j, repr(float(values[i, j]))])
    finally:
        if own:
            fh.close()


def field_from_csv(path_or_buf):
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "r", newline="") if own else path_or_buf
    try:
        reader = csv.reader(fh)
        header = next(reader)
        if [c.strip() for c in header] != ["i", "j", "value"]:
            raise ValueError(f"unexpected field CSV header: {header}")
        rows = [(int(i), int(j), float(v)) for i, j, v in reader]
    finally:
        if own:
            fh.close()
    n = max(i for i, _, _ in rows) + 1
    if len(rows) != n * n:
        raise ValueError(f"field CSV has {len(rows)} rows, expected {n * n}")
    values = np.empty((n, n), dtype=float)
    for i, j, v in rows:
        values[i, j] = v
    return TorusField(TorusGrid(n), values)


def field_to_csv_string(field):
    buf = io.StringIO()
    field_to_csv(field, buf)
    return buf.getvalue()
