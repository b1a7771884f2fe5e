"""Oscillation decay, pointwise Holder fits, and Harnack quotients.

These diagnostics quantify interior regularity of solutions of the
linearized operator on section ladders: geometric decay of oscillations
down a dyadic ladder, power-law growth of |u - u(x0)| in shells around a
point, and sup/inf quotients of nonnegative solutions.
"""

import dataclasses

import numpy as np
from scipy import ndimage

from . import grid as gridmod
from .errors import NegativeInput, ResidualTooLarge
from .fitting import CONSTANT_SENTINEL, loglog_fit
from .lma import DivergenceFormOperator
from .ma import cofactor
from .sections import extract_section

# fields whose total variation falls below this fraction of machine scale
# count as constant
_CONSTANT_FLOOR = 1e-13


def interior_cells(mask):
    """Cells whose full 9-point stencil stays inside the mask."""
    return ndimage.binary_erosion(np.asarray(mask, bool),
                                  structure=np.ones((3, 3)))


def oscillation(values, mask):
    """max - min of a field over a cell mask."""
    v = np.asarray(values, dtype=float)[np.asarray(mask, bool)]
    if v.size == 0:
        return 0.0
    return float(np.max(v) - np.min(v))


def homogeneity_residual(u, pot, mask, operator=None):
    """Sup norm of L u over the interior of the mask (L from pot)."""
    op = operator or DivergenceFormOperator(pot.grid, cofactor(pot))
    res = op.apply(np.asarray(u, dtype=float))
    core = interior_cells(mask)
    if not np.any(core):
        return 0.0
    return float(np.max(np.abs(res[core])))


def _require_homogeneous(u, pot, mask, tol, operator=None):
    res = homogeneity_residual(u, pot, mask, operator=operator)
    scale = max(1.0, float(np.max(np.abs(np.asarray(u)[mask]))))
    bound = tol * scale / pot.grid.spacing**2
    if res > bound:
        raise ResidualTooLarge(
            f"field is not a homogeneous solution on the section: "
            f"interior residual {res:.3e} > {bound:.3e}"
        )
    return res


@dataclasses.dataclass
class DecayRow:
    h: float
    osc_h: float
    osc_half: float
    ratio: float


@dataclasses.dataclass
class DecayReport:
    rows: list
    beta_max: float
    constant: bool
    interior_residual: float

    def ratios(self):
        return [r.ratio for r in self.rows if np.isfinite(r.ratio)]


def oscillation_decay(u, pot, x0, h0, rungs=4, residual_tol=1e-6,
                      operator=None):
    """Oscillation of a homogeneous solution down a dyadic section ladder.

    Requires L u = 0 on the interior of S(x0, h0) up to residual_tol
    (relative, scaled by sup|u| / spacing^2); otherwise ResidualTooLarge.
    Rows pair each height with its half: ratio = osc(S(h/2)) / osc(S(h)).
    Zero oscillation at a rung yields the constant sentinel ratio (inf)
    and sets the constant flag.
    """
    u = np.asarray(u, dtype=float)
    sections = [extract_section(pot, x0, h0 * 0.5**k) for k in range(rungs)]
    res = _require_homogeneous(u, pot, sections[0].mask, residual_tol,
                               operator=operator)
    oscs = [oscillation(u, s.mask) for s in sections]
    scale = max(float(np.max(np.abs(u[sections[0].mask]))), 1.0)
    rows, constant = [], False
    for k in range(rungs - 1):
        if oscs[k] <= _CONSTANT_FLOOR * scale:
            rows.append(DecayRow(sections[k].height, oscs[k], oscs[k + 1],
                                 CONSTANT_SENTINEL))
            constant = True
        else:
            rows.append(DecayRow(sections[k].height, oscs[k], oscs[k + 1],
                                 oscs[k + 1] / oscs[k]))
    finite = [r.ratio for r in rows if np.isfinite(r.ratio)]
    beta = max(finite) if finite else CONSTANT_SENTINEL
    return DecayReport(rows, beta, constant, res)


@dataclasses.dataclass
class HolderFit:
    """Result of a pointwise Holder-exponent fit at x0.

    gamma is the fitted exponent, prefactor the fitted constant C in
    m(r) ~ C r^gamma, shells the (r, m) pairs used (r is the largest
    sampled distance inside each shell, which is the abscissa the shell
    maximum is achieved near; the nominal shell edge would bias the slope
    by O(spacing/r)).
    """

    gamma: float
    prefactor: float
    r2: float
    shells: list
    constant: bool

    @property
    def c_hat(self):
        return self.prefactor


def holder_fit(u, x0, grid, radii=None, min_points=4):
    """Fit max_{shell(r)} |u - u(x0)| ~ C r^gamma around x0.

    Shells are periodic-distance annuli [r, r + spacing).  A field that is
    constant to machine precision returns the sentinel gamma = inf with
    constant=True instead of fitting noise.
    """
    u = np.asarray(u, dtype=float)
    h = grid.spacing
    i0, j0 = grid.index_of(np.asarray(x0, dtype=float))
    x0c = np.array([(i0 + 0.5) * h, (j0 + 0.5) * h])
    x1, x2 = grid.centers()
    dist = np.hypot(gridmod.wrap_delta(x1 - x0c[0]),
                    gridmod.wrap_delta(x2 - x0c[1]))
    diff = np.abs(u - u[i0, j0])

    if radii is None:
        radii = np.geomspace(3.0 * h, 0.3, 8)
    shells = {}
    for r in radii:
        sel = (dist >= r) & (dist < r + h)
        if not np.any(sel):
            continue
        m = float(np.max(diff[sel]))
        r_achieved = float(np.max(dist[sel]))
        # overlapping windows can share their farthest sample; keep one point
        shells[r_achieved] = max(m, shells.get(r_achieved, 0.0))
    shells = sorted(shells.items())

    scale = max(float(np.max(np.abs(u))), 1.0)
    if not shells or max(m for _, m in shells) <= _CONSTANT_FLOOR * scale:
        return HolderFit(CONSTANT_SENTINEL, 0.0, 1.0, shells, True)
    fit = loglog_fit([r for r, _ in shells], [m for _, m in shells],
                     min_points=min_points)
    return HolderFit(fit.slope, fit.prefactor, fit.r2, shells, False)


def harnack_quotient(u, pot, x0, h, residual_tol=1e-6, operator=None):
    """sup/inf of a nonnegative homogeneous solution over S(x0, h).

    Preconditions are checked on the double section S(x0, 2h): u >= 0
    there (NegativeInput otherwise) and L u = 0 on its interior
    (ResidualTooLarge otherwise).  Returns a dict with sup, inf, center
    value, and the quotient (inf result gives quotient = inf).
    """
    u = np.asarray(u, dtype=float)
    outer = extract_section(pot, x0, 2.0 * h)
    floor = -1e-12 * max(1.0, float(np.max(np.abs(u[outer.mask]))))
    if float(np.min(u[outer.mask])) < floor:
        raise NegativeInput(
            f"field dips to {np.min(u[outer.mask]):.3e} on the double section"
        )
    _require_homogeneous(u, pot, outer.mask, residual_tol, operator=operator)
    inner = extract_section(pot, x0, h)
    vals = u[inner.mask]
    sup, inf = float(np.max(vals)), float(np.min(vals))
    center = float(u[inner.center_index])
    quotient = sup / inf if inf > 0 else float("inf")
    return {"sup": sup, "inf": inf, "center": center, "quotient": quotient}


# --- report containers --------------------------------------------------------

@dataclasses.dataclass
class RegularityReport:
    """Bundle of decay rows, shell fits, and summary exponents."""

    decay_rows: list  # DecayRow
    shell_rows: list  # (r, m) pairs
    gamma_hat: float
    c_hat: float
    r2: float
    beta_hat_max: float

    def summary_dict(self):
        return {
            "gamma_hat": self.gamma_hat,
            "C_hat": self.c_hat,
            "r2": self.r2,
            "beta_hat_max": self.beta_hat_max,
        }
