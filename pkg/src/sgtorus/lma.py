"""Divergence-form linearized Monge-Ampere operator and Green's functions.

The operator L u = -div(Phi grad u) is assembled from the discrete energy

    E(u, v) = sum_faces  Phi_f (Du)_f (Dv)_f h^2
            + sum_corners Phi12_c [(D1 u)(D2 v) + (D2 u)(D1 v)]_c h^2,

with harmonic face averages for the diagonal coefficients and arithmetic
corner averages for the off-diagonal one (a symmetric 9-point stencil).
The matrix is symmetric by construction, has exactly the constants in its
periodic kernel, and collapses to the standard 5-point Laplacian when
Phi is the identity.  Dirichlet problems live on a cell mask with the
one-cell ring outside held at zero (or at supplied boundary values).
"""

import dataclasses

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import LinearOperator, cg

from . import grid as gridmod
from .errors import (
    GridMismatch,
    IndefiniteOperator,
    InvariantViolation,
    SolverStall,
    ZeroEnergy,
)
from .fitting import PowerLawFit, linear_fit, loglog_fit

DEFAULT_CG_TOL = 1e-10


def _coeff_arrays(coeffs):
    """Accept a CofactorField-like object or a (c11, c12, c22) triple."""
    if hasattr(coeffs, "c11"):
        return (
            np.asarray(coeffs.c11, dtype=float),
            np.asarray(coeffs.c12, dtype=float),
            np.asarray(coeffs.c22, dtype=float),
        )
    c11, c12, c22 = coeffs
    return (
        np.asarray(c11, dtype=float),
        np.asarray(c12, dtype=float),
        np.asarray(c22, dtype=float),
    )


def _harmonic(a, b):
    return 2.0 * a * b / (a + b)


def _assemble_full(grid, c11, c12, c22):
    n, h = grid.n, grid.spacing
    ids = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []

    def add(r, c, w):
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(w.ravel())

    # faces normal to x1: cells (i,j) and (i+1,j)
    a, b = ids, np.roll(ids, -1, 0)
    w = _harmonic(c11, np.roll(c11, -1, 0)) / h**2
    add(a, a, w)
    add(b, b, w)
    add(a, b, -w)
    add(b, a, -w)

    # faces normal to x2: cells (i,j) and (i,j+1)
    a, b = ids, np.roll(ids, -1, 1)
    w = _harmonic(c22, np.roll(c22, -1, 1)) / h**2
    add(a, a, w)
    add(b, b, w)
    add(a, b, -w)
    add(b, a, -w)

    # corners: cells a=(i,j), b=(i+1,j), c=(i,j+1), d=(i+1,j+1)
    ca, cb = ids, np.roll(ids, -1, 0)
    cc, cd = np.roll(ids, -1, 1), np.roll(ids, (-1, -1), (0, 1))
    p12c = (
        c12
        + np.roll(c12, -1, 0)
        + np.roll(c12, -1, 1)
        + np.roll(c12, (-1, -1), (0, 1))
    ) / 4.0
    w = p12c / (2.0 * h**2)
    add(ca, ca, w)
    add(cd, cd, w)
    add(cb, cb, -w)
    add(cc, cc, -w)
    add(ca, cd, -w)
    add(cd, ca, -w)
    add(cb, cc, w)
    add(cc, cb, w)

    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * n, n * n),
    )
    return mat.tocsr()


class DivergenceFormOperator:
    """Sparse symmetric assembly of L u = -div(Phi grad u).

    Parameters
    ----------
    grid : TorusGrid
    coeffs : CofactorField or (c11, c12, c22) arrays
        Cellwise symmetric positive coefficient tensor.
    mask : (N, N) bool array, optional
        None for the periodic operator on the whole torus; otherwise the
        Dirichlet operator on the masked cells with u = 0 outside.
    """

    def __init__(self, grid, coeffs, mask=None, probe_definiteness=True, rng=None):
        self.grid = grid
        c11, c12, c22 = _coeff_arrays(coeffs)
        for c in (c11, c12, c22):
            if c.shape != (grid.n, grid.n):
                raise GridMismatch("coefficient shape does not match grid")
        det = c11 * c22 - c12**2
        if min(np.min(c11), np.min(c22)) <= 0.0 or np.min(det) <= 0.0:
            raise IndefiniteOperator(
                f"coefficient tensor is not positive definite cellwise "
                f"(min diag {min(np.min(c11), np.min(c22)):.3e}, "
                f"min det {np.min(det):.3e})"
            )
        full = _assemble_full(grid, c11, c12, c22)
        self.mask = None
        self.cells = None
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != (grid.n, grid.n):
                raise GridMismatch("mask shape does not match grid")
            self.mask = mask
            self.cells = np.flatnonzero(mask.ravel())
            self._full_matrix = full
            self.matrix = full[self.cells][:, self.cells].tocsr()
        else:
            self.matrix = full
        self.symmetry_defect = self._symmetry_defect()
        if probe_definiteness:
            self._probe_definiteness(rng)

    # -- structure checks ----------------------------------------------------

    def _symmetry_defect(self):
        d = self.matrix - self.matrix.T
        return 0.0 if d.nnz == 0 else float(np.max(np.abs(d.data)))

    def _probe_definiteness(self, rng, n_probes=4):
        rng = rng or np.random.default_rng(0)
        size = self.matrix.shape[0]
        scale = float(np.max(np.abs(self.matrix.diagonal()))) or 1.0
        self.min_ritz = np.inf
        for _ in range(n_probes):
            x = rng.standard_normal(size)
            if self.mask is None:
                x -= x.mean()  # probe orthogonal to the periodic kernel
            ritz = float(x @ (self.matrix @ x)) / float(x @ x)
            self.min_ritz = min(self.min_ritz, ritz)
            if ritz < -1e-10 * scale:
                raise IndefiniteOperator(
                    f"negative Ritz value {ritz:.3e} on random probe"
                )

    # -- actions ---------------------------------------------------------

    def apply(self, u):
        """L u; full-grid array in periodic mode, mask vector otherwise."""
        if self.mask is None:
            u = np.asarray(u, dtype=float)
            return (self.matrix @ u.ravel()).reshape(self.grid.n, self.grid.n)
        return self.matrix @ np.asarray(u, dtype=float)

    def apply_full(self, u_full):
        """L u for a full-grid field, restricted to the mask cells."""
        if self.mask is None:
            return self.apply(u_full)
        return self._full_matrix[self.cells] @ np.asarray(u_full, float).ravel()

    def energy(self, u, v=None):
        """Discrete Dirichlet energy integral Phi grad u . grad v."""
        uv = np.asarray(u, dtype=float).ravel()
        vv = uv if v is None else np.asarray(v, dtype=float).ravel()
        return float(vv @ (self.matrix @ uv)) * self.grid.cell_area

    def solve(self, rhs, tol=DEFAULT_CG_TOL, x0=None):
        """Conjugate gradients with diagonal preconditioning.

        Periodic mode solves in the mean-zero complement of the kernel.
        Raises SolverStall if the Krylov iteration does not converge.
        """
        b = np.asarray(rhs, dtype=float).ravel()
        if self.mask is None:
            b = b - b.mean()
        diag = self.matrix.diagonal().copy()
        diag[diag <= 0] = 1.0
        precond = LinearOperator(self.matrix.shape, matvec=lambda v: v / diag)
        x, info = cg(self.matrix, b, x0=x0, rtol=tol, atol=0.0, M=precond)
        if info != 0:
            raise SolverStall(f"CG failed to reach rtol={tol} (info={info})")
        if self.mask is None:
            x = x - x.mean()
            return x.reshape(self.grid.n, self.grid.n)
        return x

    # -- right-hand sides --------------------------------------------------

    def divergence_rhs(self, F1, F2, faces=False):
        """Discrete div F for cell-centered F (averaged to faces) or for
        face-sampled F (F1 on faces normal to x1, F2 normal to x2)."""
        h = self.grid.spacing
        F1 = np.asarray(F1, dtype=float)
        F2 = np.asarray(F2, dtype=float)
        if self.mask is not None and not faces:
            F1 = np.where(self.mask, F1, 0.0)
            F2 = np.where(self.mask, F2, 0.0)
        if faces:
            div = (F1 - np.roll(F1, 1, 0)) / h + (F2 - np.roll(F2, 1, 1)) / h
        else:
            div = gridmod.periodic_divergence(F1, F2, self.grid)
        if self.mask is not None:
            return div.ravel()[self.cells]
        return div

    def point_source(self, pole_index):
        """Discrete delta at a cell: 1/h^2 scaled unit vector."""
        flat = pole_index[0] * self.grid.n + pole_index[1]
        if self.mask is None:
            b = np.zeros(self.grid.n**2)
            b[flat] = 1.0 / self.grid.cell_area
            return b.reshape(self.grid.n, self.grid.n)
        b = np.zeros(self.cells.size)
        where = np.nonzero(self.cells == flat)[0]
        if where.size == 0:
            raise ValueError("pole cell is not inside the mask")
        b[where[0]] = 1.0 / self.grid.cell_area
        return b

    def scatter(self, vec):
        """Mask vector -> full grid array with zeros outside."""
        if self.mask is None:
            return np.asarray(vec, dtype=float).reshape(self.grid.n, self.grid.n)
        out = np.zeros(self.grid.n**2)
        out[self.cells] = vec
        return out.reshape(self.grid.n, self.grid.n)


def boundary_ring(mask):
    """One-cell ring outside the mask (8-connected, matching the stencil)."""
    grown = ndimage.binary_dilation(np.asarray(mask, bool), structure=np.ones((3, 3)))
    return grown & ~np.asarray(mask, bool)


def solve_periodic_lma(coeffs, F, grid, tol=DEFAULT_CG_TOL, faces=False,
                       operator=None):
    """Solve div(Phi grad u) = div F on the torus, mean-zero u.

    Returns (u, info) with info carrying the relative residual.
    """
    op = operator or DivergenceFormOperator(grid, coeffs)
    div = op.divergence_rhs(F[0], F[1], faces=faces)
    rhs = -np.asarray(div, dtype=float)
    rhs = rhs - rhs.mean()  # compatibility with the constant kernel
    u = op.solve(rhs, tol=tol)
    scale = float(np.linalg.norm(rhs.ravel())) or 1.0
    rel = float(np.linalg.norm(op.apply(u).ravel() - rhs.ravel())) / scale
    info = {"relative_residual": rel, "rhs_norm": scale}
    if rel > max(100.0 * tol, 1e-8):
        raise SolverStall(f"periodic solve residual {rel:.3e} above tolerance")
    return u, info


def solve_dirichlet_lma(coeffs, mask, grid, F=None, rhs=None,
                        boundary_values=None, tol=DEFAULT_CG_TOL,
                        operator=None):
    """Solve L u = div F (or a supplied rhs) on a mask, u = ring values.

    The Dirichlet boundary is the one-cell ring outside the mask, held at
    zero unless boundary_values (a full-grid array) is given.  Returns
    (u_full, info) with u zero-extended outside the mask.  For homogeneous
    interiors with boundary data the discrete maximum principle
    min b <= u <= max b is asserted.
    """
    mask = np.asarray(mask, dtype=bool)
    op = operator or DivergenceFormOperator(grid, coeffs, mask=mask)
    if rhs is not None:
        rhs = np.asarray(rhs, dtype=float)
        b = rhs.ravel()[op.cells] if rhs.size == grid.n**2 else rhs.ravel()
    elif F is not None:
        b = -op.divergence_rhs(F[0], F[1])
    else:
        b = np.zeros(op.cells.size)

    homogeneous = F is None and rhs is None
    bring = None
    if boundary_values is not None:
        ring = boundary_ring(mask)
        bvals = np.where(ring, np.asarray(boundary_values, dtype=float), 0.0)
        bring = bvals[ring]
        # lift: move known ring values to the right-hand side
        b = b - op._full_matrix[op.cells] @ bvals.ravel()

    u = op.solve(b, tol=tol)
    res = float(np.linalg.norm(op.matrix @ u - b))
    scale = float(np.linalg.norm(b)) or 1.0
    info = {"relative_residual": res / scale, "cells": int(op.cells.size)}

    if homogeneous and bring is not None and bring.size:
        lo, hi = float(np.min(bring)), float(np.max(bring))
        slack = 1e-8 * (hi - lo + 1e-30)
        if np.min(u) < lo - slack or np.max(u) > hi + slack:
            raise InvariantViolation(
                "maximum_principle",
                f"homogeneous solution range [{np.min(u):.6e}, {np.max(u):.6e}] "
                f"escapes boundary range [{lo:.6e}, {hi:.6e}]",
            )
    full = op.scatter(u)
    if boundary_values is not None:
        ring = boundary_ring(mask)
        full = np.where(ring, np.asarray(boundary_values, dtype=float), full)
    return full, info


# --- Green's functions -------------------------------------------------------

@dataclasses.dataclass
class GreenFunction:
    """Green's function of the Dirichlet operator on a section mask."""

    grid: gridmod.TorusGrid
    mask: np.ndarray
    pole_index: tuple
    values: np.ndarray  # full grid, zero outside mask

    def integral_p(self, p):
        """integral over the mask of g^p (midpoint quadrature)."""
        g = self.values[self.mask]
        return float(np.sum(np.abs(g) ** p)) * self.grid.cell_area

    def gradient_norm(self, kappa):
        """L^(1+kappa) norm of grad g over the mask (zero extension)."""
        g1, g2 = gridmod.periodic_gradient(
            gridmod.TorusField(self.grid, self.values)
        )
        mag = np.hypot(g1, g2)[self.mask]
        p = 1.0 + kappa
        return float(np.sum(mag**p) * self.grid.cell_area) ** (1.0 / p)

    def min_value(self):
        return float(np.min(self.values[self.mask]))

    def max_value(self):
        return float(np.max(self.values[self.mask]))

    def level_area(self, tau):
        return float(np.count_nonzero(self.values > tau)) * self.grid.cell_area


def green_function(coeffs, mask, pole_index, grid, tol=1e-12, operator=None):
    """Green's function with pole at a cell: L g = delta, g = 0 on the ring."""
    mask = np.asarray(mask, dtype=bool)
    op = operator or DivergenceFormOperator(grid, coeffs, mask=mask)
    rhs = op.point_source(pole_index)
    g = op.solve(rhs, tol=tol)
    return GreenFunction(grid, mask, tuple(pole_index), op.scatter(g))


def level_set_decay(green, n_taus=30, refit_span=5.0):
    """Fit area{g > tau} = K 2^(-tau/tau0).

    An initial fit over mid-range level sets estimates tau0; the final fit
    runs over tau in [tau0, min(refit_span*tau0, 0.95 max g)].
    """
    gmax = green.max_value()
    taus = np.linspace(0.05, 0.9, n_taus) * gmax
    areas = np.array([green.level_area(t) for t in taus])
    keep = areas > 0
    first = linear_fit(taus[keep], np.log2(areas[keep]))
    tau0 = -1.0 / first.slope if first.slope < 0 else float("nan")
    lo, hi = tau0, min(refit_span * tau0, 0.95 * gmax)
    window = keep & (taus >= lo) & (taus <= hi)
    if np.count_nonzero(window) >= 4:
        fit = linear_fit(taus[window], np.log2(areas[window]))
        tau0 = -1.0 / fit.slope if fit.slope < 0 else float("nan")
    else:
        fit = first
    return {
        "tau0": tau0,
        "K": float(2.0 ** fit.intercept),
        "r2": fit.r2,
        "n_points": fit.n_points,
    }


def sobolev_ratio(coeffs, mask, w, p, grid, operator=None):
    """Ratio ||w||_{L^p(S)} / (integral Phi grad w . grad w)^(1/2).

    The numerator uses midpoint quadrature, the denominator the assembled
    operator's energy (w is zero-extended outside the mask).  Raises
    ZeroEnergy when the energy vanishes for a nonzero w.
    """
    mask = np.asarray(mask, dtype=bool)
    op = operator or DivergenceFormOperator(grid, coeffs, mask=mask)
    wfull = np.where(mask, np.asarray(w, dtype=float), 0.0)
    wvec = wfull.ravel()[op.cells]
    num = float(np.sum(np.abs(wvec) ** p) * grid.cell_area) ** (1.0 / p)
    energy = float(wvec @ (op.matrix @ wvec)) * grid.cell_area
    if energy <= 0.0:
        if num == 0.0:
            return 0.0
        raise ZeroEnergy(f"vanishing energy for nonzero field (||w||={num:.3e})")
    return num / np.sqrt(energy)


def green_integrability_report(pot, x0, heights, ps=(1.0, 2.0),
                               kappas=(0.1, 0.2), tol=1e-12):
    """Green's-function integrability ladder on sections of a potential.

    For each section height h computes integral g^p (expected to scale
    linearly in h) and the L^(1+kappa) norms of grad g, plus a symmetry
    defect, a positivity floor, and the level-set decay fit at the top
    height.  Returns a dict with per-(h, p) and per-(h, kappa) rows (slope
    and R^2 of the h-ladder fits repeated on each row of a group).
    """
    from . import sections as sectionsmod
    from .ma import cofactor

    cof = cofactor(pot)
    grid = pot.grid
    greens, masks = [], []
    for h in heights:
        sec = sectionsmod.extract_section(pot, x0, h)
        pole = sec.center_index
        g = green_function(cof, sec.mask, pole, grid, tol=tol)
        greens.append(g)
        masks.append(sec)

    def ladder_fit(norms):
        # a single rung carries no slope information
        if len(heights) < 2:
            return PowerLawFit(float("nan"), float("nan"), float("nan"),
                               len(heights), float("nan"))
        return loglog_fit(heights, norms, min_points=min(4, len(heights)))

    rows = []
    for p in ps:
        norms = [g.integral_p(p) for g in greens]
        fit = ladder_fit(norms)
        for h, nm in zip(heights, norms):
            rows.append({"h": h, "p": p, "kappa": None, "norm": nm,
                         "slope": fit.slope, "r2": fit.r2})
    for kappa in kappas:
        norms = [g.gradient_norm(kappa) for g in greens]
        fit = ladder_fit(norms)
        for h, nm in zip(heights, norms):
            rows.append({"h": h, "p": None, "kappa": kappa, "norm": nm,
                         "slope": fit.slope, "r2": fit.r2})

    top = greens[0]
    sec = masks[0]
    # symmetry: swap pole with an interior cell a few cells away
    offset = max(2, int(np.sqrt(np.count_nonzero(sec.mask)) / 4))
    i0, j0 = sec.center_index
    cand = ((i0 + offset) % grid.n, j0)
    if not sec.mask[cand]:
        inside = np.argwhere(sec.mask)
        k = len(inside) // 3
        cand = tuple(inside[k])
    other = green_function(cofactor(pot), sec.mask, cand, grid, tol=tol)
    sym_defect = abs(top.values[cand] - other.values[i0, j0])
    positivity_floor = min(g.min_value() for g in greens)
    decay = level_set_decay(top)
    return {
        "rows": rows,
        "heights": list(heights),
        "symmetry_defect": float(sym_defect),
        "positivity_floor": float(positivity_floor),
        "level_set_decay": decay,
    }
