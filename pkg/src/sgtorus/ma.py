"""Periodic Monge-Ampere solver and convex potentials on the torus.

A potential is stored through its periodic part q, with
P*(x) = |x|^2/2 + q(x); the quadratic growth is handled analytically, so
discrete Hessians are I + D^2 q and the identity map corresponds to q = 0
exactly.  solve_ma_periodic runs a damped Newton iteration on

    det(I + D^2 q) = rho + mu,      mean(q) = 0,

where mu is a scalar gauge unknown.  The gauge is required by the
discretization: with compact second-difference stencils the discrete
integral of q11*q22 - q12^2 is not exactly zero (it is O(N^-2) for smooth
q), so the plain equation det = rho is overdetermined by one dimension and
no iterate can push the full residual to solver tolerance.  mu absorbs
that defect and is reported; the convergence test applies to
det - rho - mu.
"""

import dataclasses
import functools

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from . import grid as gridmod
from .errors import (
    BadDensity,
    LostConvexity,
    NonConvergence,
    NonConvexInput,
)
from .grid import TorusGrid, PeriodicDisplacement, mean_zero, second_differences

DEFAULT_MASS_TOL = 1e-8
# cellwise determinant floor used by the Newton damping
DET_FLOOR = 1e-6


def default_tolerance(Lam):
    return 1e-8 * max(1.0, float(Lam))


class ConvexPotential:
    """Discretely convex potential P* = |x|^2/2 + q with mean(q) = 0.

    Carries its gradient and compact-stencil Hessian samples, the Hessian
    determinant, and solver diagnostics.  Discrete convexity means
    P11 > 0 and det D^2 P* > 0 cellwise.
    """

    def __init__(self, grid, q, lam=None, Lam=None, diagnostics=None, strict=True):
        self.grid = grid
        self.q = mean_zero(np.asarray(q, dtype=float))
        if self.q.shape != (grid.n, grid.n):
            raise gridmod.GridMismatch("potential periodic part does not match grid")
        self.g1, self.g2 = gridmod.periodic_gradient(
            gridmod.TorusField(grid, self.q)
        )
        q11, q12, q22 = second_differences(self.q, grid.spacing)
        self.p11 = 1.0 + q11
        self.p12 = q12
        self.p22 = 1.0 + q22
        self.det = self.p11 * self.p22 - self.p12**2
        self.lam = float(lam) if lam is not None else float(np.min(self.det))
        self.Lam = float(Lam) if Lam is not None else float(np.max(self.det))
        self.diagnostics = dict(diagnostics or {})
        self.convexity_margin = float(min(np.min(self.p11), np.min(self.det)))
        if strict and self.convexity_margin <= 0.0:
            raise LostConvexity(
                f"potential is not discretely convex "
                f"(min P11={np.min(self.p11):.3e}, min det={np.min(self.det):.3e})"
            )

    # -- solver certificates ------------------------------------------------

    @property
    def residual(self):
        return self.diagnostics.get("residual", float("nan"))

    @property
    def gauge(self):
        return self.diagnostics.get("gauge", 0.0)

    @property
    def newton_iters(self):
        return self.diagnostics.get("newton_iters", 0)

    @property
    def bound_tolerance(self):
        """Slack for the det-range certificate: gauge defect plus solver tol."""
        tol = self.diagnostics.get("tol", default_tolerance(self.Lam))
        return abs(self.gauge) + 10.0 * tol

    def check_det_bounds(self):
        lo, hi = float(np.min(self.det)), float(np.max(self.det))
        s = self.bound_tolerance
        return (lo >= self.lam - s) and (hi <= self.Lam + s), (lo, hi)

    # -- fields --------------------------------------------------------------

    def gradient_displacement(self):
        """Displacement grad P* - id = grad q as a wrapped field."""
        assert max(np.max(np.abs(self.g1)), np.max(np.abs(self.g2))) < 0.5, (
            "gradient displacement component reached half a period"
        )
        return PeriodicDisplacement(self.grid, self.g1, self.g2)

    def sample_gradient(self, points):
        """grad P* at arbitrary points: p + (interpolated grad q)(p)."""
        pts = np.asarray(points, dtype=float)
        s1, s2 = gridmod.sample_vector_bilinear(self.g1, self.g2, pts, self.grid)
        return np.stack([pts[..., 0] + s1, pts[..., 1] + s2], axis=-1)

    def value_at_cells(self, i, j):
        """P* at cell centers given by index arrays (lifted value, k = 0)."""
        h = self.grid.spacing
        x1 = (np.asarray(i) + 0.5) * h
        x2 = (np.asarray(j) + 0.5) * h
        return 0.5 * (x1**2 + x2**2) + self.q[i, j]

    def header_dict(self, n_digits=None):
        return {
            "n": self.grid.n,
            "lambda": self.lam,
            "Lambda": self.Lam,
            "residual": self.residual,
            "newton_iters": self.newton_iters,
            "gauge": self.gauge,
        }


class LegendrePotential(ConvexPotential):
    """Legendre transform of a ConvexPotential, same representation.

    Additionally stores the argmax gradient map (grad P as a displacement
    from the identity) and the inversion residual
    max_x dist(grad P*(grad P(x)), x).
    """

    def __init__(self, grid, q, grad_d1, grad_d2, lam=None, Lam=None,
                 diagnostics=None):
        super().__init__(grid, q, lam=lam, Lam=Lam, diagnostics=diagnostics,
                         strict=False)
        self.grad_d1 = np.asarray(grad_d1, dtype=float)
        self.grad_d2 = np.asarray(grad_d2, dtype=float)

    def gradient_displacement(self):
        return PeriodicDisplacement(self.grid, self.grad_d1, self.grad_d2)

    def sample_gradient(self, points):
        pts = np.asarray(points, dtype=float)
        s1, s2 = gridmod.sample_vector_bilinear(
            self.grad_d1, self.grad_d2, pts, self.grid
        )
        return np.stack([pts[..., 0] + s1, pts[..., 1] + s2], axis=-1)


@dataclasses.dataclass
class CofactorField:
    """Cofactor matrix of a Hessian field: the coefficient of the
    linearized Monge-Ampere operator.

    In 2D the cofactor of [[p11, p12], [p12, p22]] is
    [[p22, -p12], [-p12, p11]]; it is divergence-free row by row in the
    continuum, shares trace and determinant with the Hessian, and
    satisfies the algebraic identity Phi^{ij} phi_{ij} = 2 det D^2 phi.
    """

    grid: TorusGrid
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray

    @classmethod
    def from_potential(cls, pot):
        return cls(pot.grid, pot.p22.copy(), -pot.p12.copy(), pot.p11.copy())

    @classmethod
    def identity(cls, grid):
        one = np.ones((grid.n, grid.n))
        return cls(grid, one.copy(), np.zeros_like(one), one.copy())

    def det(self):
        return self.c11 * self.c22 - self.c12**2

    def trace(self):
        return self.c11 + self.c22

    def contract(self, p11, p12, p22):
        """Phi^{ij} phi_{ij} for a symmetric field (p11, p12, p22)."""
        return self.c11 * p11 + 2.0 * self.c12 * p12 + self.c22 * p22

    def divergence_defect(self):
        """Sup norms of the discrete row divergences (O(h^2) for smooth q)."""
        g = self.grid
        r1 = gridmod.periodic_divergence(self.c11, self.c12, g)
        r2 = gridmod.periodic_divergence(self.c12, self.c22, g)
        return float(np.max(np.abs(r1))), float(np.max(np.abs(r2)))

    def eigen_range(self):
        """Cellwise (min, max) eigenvalue over the grid."""
        tr = self.trace()
        disc = np.sqrt(np.maximum((self.c11 - self.c22) ** 2 + 4.0 * self.c12**2, 0.0))
        lo = 0.5 * (tr - disc)
        hi = 0.5 * (tr + disc)
        return float(np.min(lo)), float(np.max(hi))

    def quadratic_form(self, v1, v2):
        return self.c11 * v1 * v1 + 2.0 * self.c12 * v1 * v2 + self.c22 * v2 * v2


def cofactor(pot):
    """Cofactor field of a potential's discrete Hessian."""
    return CofactorField.from_potential(pot)


# --- Newton solver ----------------------------------------------------------

@functools.lru_cache(maxsize=8)
def _stencil_matrices(n):
    """Sparse periodic stencils S11, S12, S22 acting on raveled fields."""
    h2 = (1.0 / n) ** 2
    eye = sparse.identity(n, format="csr")
    idx = np.arange(n)
    shift_up = sparse.csr_matrix(
        (np.ones(n), (idx, (idx + 1) % n)), shape=(n, n)
    )  # (S v)[i] = v[i+1]
    shift_dn = shift_up.T.tocsr()
    d2 = (shift_up + shift_dn - 2.0 * eye) / h2
    s11 = sparse.kron(d2, eye, format="csr")
    s22 = sparse.kron(eye, d2, format="csr")
    s12 = (
        sparse.kron(shift_up, shift_up)
        + sparse.kron(shift_dn, shift_dn)
        - sparse.kron(shift_up, shift_dn)
        - sparse.kron(shift_dn, shift_up)
    ) / (4.0 * h2)
    return s11, s12.tocsr(), s22


def _hessian_and_det(q, h):
    q11, q12, q22 = second_differences(q, h)
    p11 = 1.0 + q11
    p22 = 1.0 + q22
    det = p11 * p22 - q12**2
    return p11, q12, p22, det


def _linearization(p11, p12, p22, n):
    """Exact derivative of q -> det(I + D^2 q): u -> Phi^{ij} u_ij."""
    s11, s12, s22 = _stencil_matrices(n)
    d = sparse.diags
    return (
        d(p22.ravel()) @ s11
        + d(p11.ravel()) @ s22
        - 2.0 * d(p12.ravel()) @ s12
    ).tocsc()


def validate_density(rho, lam=None, Lam=None, mass_tol=DEFAULT_MASS_TOL):
    rho = np.asarray(rho, dtype=float)
    if not np.all(np.isfinite(rho)):
        raise BadDensity("density has non-finite entries")
    if np.min(rho) <= 0.0:
        raise BadDensity(f"density must be positive, min={np.min(rho):.3e}")
    mass = float(np.mean(rho))
    if abs(mass - 1.0) > mass_tol:
        raise BadDensity(f"density mass {mass!r} deviates from 1 beyond {mass_tol}")
    slack = 1e-12 * max(1.0, float(np.max(rho)))
    if lam is not None and np.min(rho) < lam - slack:
        raise BadDensity(f"density drops below lambda={lam}")
    if Lam is not None and np.max(rho) > Lam + slack:
        raise BadDensity(f"density exceeds Lambda={Lam}")
    return rho / mass


def solve_ma_periodic(rho, grid=None, lam=None, Lam=None, tol=None,
                      initial=None, max_iter=60, mass_tol=DEFAULT_MASS_TOL):
    """Solve det D^2 P* = rho on the torus for a convex potential.

    Damped Newton iteration: the update solves the linearized equation
    Phi^{ij} u_ij = -(det - rho - mu) together with the gauge unknown mu
    (one pinned cell removes the constant null direction), and the step is
    halved until the trial Hessian determinant stays above
    max(1e-6, lambda/10) cellwise and P11 stays positive.  A halving floor
    of 2^-20 or an exhausted iteration budget raises NonConvergence.

    Parameters
    ----------
    rho : TorusField or (N, N) array
        Target density; positive, unit mass within mass_tol.
    lam, Lam : float, optional
        Certified pinch bounds of rho (default: its min/max).
    tol : float, optional
        Sup-norm tolerance on det - rho - mu (default 1e-8 * max(1, Lam)).
    initial : ConvexPotential or array, optional
        Warm start for the periodic part q.

    Returns
    -------
    ConvexPotential
        With diagnostics: residual, gauge, newton_iters, tol.
    """
    if isinstance(rho, gridmod.TorusField):
        grid = rho.grid
        rho = rho.values
    if grid is None:
        raise ValueError("grid required when rho is a bare array")
    rho = validate_density(rho, lam=lam, Lam=Lam, mass_tol=mass_tol)
    lam = float(lam) if lam is not None else float(np.min(rho))
    Lam = float(Lam) if Lam is not None else float(np.max(rho))
    if tol is None:
        tol = default_tolerance(Lam)

    n, h = grid.n, grid.spacing
    if initial is None:
        q = np.zeros((n, n))
    elif isinstance(initial, ConvexPotential):
        q = initial.q.copy()
    else:
        q = mean_zero(np.asarray(initial, dtype=float).copy())

    det_floor = max(DET_FLOOR, lam / 10.0)
    keep = np.ones(n * n, dtype=bool)
    keep[0] = False  # pin one cell: removes the additive null direction

    p11, p12, p22, det = _hessian_and_det(q, h)
    if np.min(det) <= 0.0 or np.min(p11) <= 0.0:
        raise LostConvexity("initial guess is not discretely convex")
    mu = float(np.mean(det - rho))

    iters = 0
    residual = float(np.max(np.abs(det - rho - mu)))
    while residual > tol:
        if iters >= max_iter:
            raise NonConvergence(
                f"no convergence in {max_iter} Newton iterations "
                f"(residual {residual:.3e}, tol {tol:.3e})"
            )
        jac = _linearization(p11, p12, p22, n)
        gauge_col = -np.ones((n * n, 1))
        system = sparse.hstack([jac[:, keep], sparse.csc_matrix(gauge_col)],
                               format="csc")
        rhs = -(det - rho - mu).ravel()
        sol = spsolve(system, rhs)
        delta = np.zeros(n * n)
        delta[keep] = sol[:-1]
        delta = delta.reshape(n, n)
        dmu = float(sol[-1])

        step = 1.0
        while True:
            q_try = mean_zero(q + step * delta)
            p11, p12, p22, det = _hessian_and_det(q_try, h)
            if np.min(det) > det_floor and np.min(p11) > 0.0:
                break
            step *= 0.5
            if step < 2.0**-20:
                raise NonConvergence(
                    "Newton damping hit the 2^-20 floor while enforcing "
                    f"cellwise convexity (min det {np.min(det):.3e})"
                )
        q = q_try
        mu += step * dmu
        iters += 1
        residual = float(np.max(np.abs(det - rho - mu)))

    diagnostics = {
        "residual": residual,
        "gauge": mu,
        "newton_iters": iters,
        "tol": tol,
    }
    pot = ConvexPotential(grid, q, lam=lam, Lam=Lam, diagnostics=diagnostics)
    ok, bounds = pot.check_det_bounds()
    if not ok:
        raise LostConvexity(
            f"solved determinant range {bounds} escapes "
            f"[{lam}, {Lam}] beyond tolerance {pot.bound_tolerance:.3e}"
        )
    return pot


# --- Legendre transform -----------------------------------------------------

def legendre(pot, refine=True):
    """Discrete Legendre transform P(x) = sup_y (x.y - P*(y)).

    The sup runs over the 3x3 block of periodic copies (enough because
    optimal displacements are at most half a period), evaluated exactly by
    two separable 1D passes; the gradient map is the argmax refined by one
    Newton step on the inner objective.  The result is re-expressed in the
    quadratic-plus-periodic split and mean-normalized.

    Raises NonConvexInput if the input is not discretely convex.
    """
    if pot.convexity_margin <= 0.0:
        raise NonConvexInput("legendre transform needs a discretely convex input")
    grid = pot.grid
    n, h = grid.n, grid.spacing
    x = grid.axis_centers()
    y = (np.arange(3 * n) + 0.5) / n - 1.0  # tiled centers in [-1, 2)
    q3 = np.tile(pot.q, (3, 3))

    # stage 1: for each tiled row y1_k, conjugate in the second variable:
    # H[k, j] = max_m (x2_j * y_m - P*(y_k, y_m))
    stage1_vals = np.empty((3 * n, n))
    stage1_arg = np.empty((3 * n, n), dtype=int)
    p_row = 0.5 * y[None, :] ** 2 + q3  # |y2|^2/2 + q along a row, (3n, 3n)
    for k in range(3 * n):
        scores = np.outer(x, y) - (0.5 * y[k] ** 2 + p_row[k])[None, :]
        arg = np.argmax(scores, axis=1)
        stage1_arg[k] = arg
        stage1_vals[k] = scores[np.arange(n), arg]

    # stage 2: conjugate in the first variable
    p_vals = np.empty((n, n))
    arg1 = np.empty((n, n), dtype=int)
    for j in range(n):
        scores = np.outer(x, y) + stage1_vals[:, j][None, :]
        arg = np.argmax(scores, axis=1)
        arg1[:, j] = arg
        p_vals[:, j] = scores[np.arange(n), arg]

    arg2 = stage1_arg[arg1, np.arange(n)[None, :]]
    y1 = y[arg1]
    y2 = y[arg2]

    if refine:
        i = arg1 % n
        j = arg2 % n
        r1 = grid.axis_centers()[:, None] - (y1 + pot.g1[i, j])
        r2 = grid.axis_centers()[None, :] - (y2 + pot.g2[i, j])
        a, b, c = pot.p11[i, j], pot.p12[i, j], pot.p22[i, j]
        det = a * c - b * b
        y1 = y1 + (c * r1 - b * r2) / det
        y2 = y2 + (-b * r1 + a * r2) / det

    x1, x2 = grid.centers()
    r = mean_zero(p_vals - 0.5 * (x1**2 + x2**2))
    d1 = gridmod.wrap_delta(y1 - x1)
    d2 = gridmod.wrap_delta(y2 - x2)

    # inversion certificate: grad P*(grad P(x)) should return to x
    targets = np.stack([x1 + d1, x2 + d2], axis=-1)
    back = pot.sample_gradient(targets)
    dist = gridmod.periodic_distance(back, np.stack([x1, x2], axis=-1))
    inversion = float(np.max(dist))

    diagnostics = {
        "inversion_residual": inversion,
        "tol_inv": 5.0 * h,
        "refined": bool(refine),
    }
    return LegendrePotential(grid, r, d1, d2, diagnostics=diagnostics)
