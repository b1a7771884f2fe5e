"""Sections of convex potentials and their affine normalization.

A section S(x0, h) is the sublevel set of the potential under its tangent
plane at x0 raised by h.  Everything is computed on the periodic lift
around x0: a member cell is represented by the periodic copy of its
center nearest to x0, which is unambiguous while the section diameter
stays below half a period (otherwise SectionWrapsTorus).

John normalization produces T z = A z + b with B_1 inside T^{-1}(S)
inside B_2 up to one cell width: A comes from the second-moment ellipse
of the member cells, outer-calibrated so the farthest member sits exactly
on the radius-2 sphere, and is verified constructively; if verification
fails the minimum-area enclosing ellipse of the hull (Khachiyan) is used
with the John factor 2.
"""

import dataclasses

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError

from . import grid as gridmod
from .errors import DegenerateSection, EmptySection, SectionWrapsTorus


@dataclasses.dataclass
class Section:
    """Connected cell mask of a potential sublevel set around a center."""

    grid: gridmod.TorusGrid
    center: np.ndarray  # snapped cell center, shape (2,)
    center_index: tuple
    height: float
    mask: np.ndarray  # (N, N) bool
    offsets: np.ndarray  # (M, 2) lifted member offsets from the center
    discarded_cells: int = 0

    @property
    def n_cells(self):
        return int(np.count_nonzero(self.mask))

    @property
    def area(self):
        return self.n_cells * self.grid.cell_area

    def diameter(self):
        ext1 = self.offsets[:, 0].max() - self.offsets[:, 0].min()
        ext2 = self.offsets[:, 1].max() - self.offsets[:, 1].min()
        return float(np.hypot(ext1, ext2))

    def contains_point(self, point, pad_cells=0):
        """Does the (wrapped) point land on a member cell (or its
        pad_cells-neighborhood)?"""
        i, j = self.grid.index_of(np.asarray(point))
        if pad_cells == 0:
            return bool(self.mask[i, j])
        n = self.grid.n
        for di in range(-pad_cells, pad_cells + 1):
            for dj in range(-pad_cells, pad_cells + 1):
                if self.mask[(i + di) % n, (j + dj) % n]:
                    return True
        return False


def extract_section(pot, x0, height):
    """Cells of S(x0, h) = {phi < tangent_at_x0 + h}, connected around x0.

    The tangent deficit at the lifted representative y = x0 + delta is
    |delta|^2/2 + q(y) - q(x0) - grad q(x0) . delta, so only the periodic
    part of the potential enters.

    Raises
    ------
    EmptySection
        Height below one-cell resolution (only the center cell qualifies).
    SectionWrapsTorus
        The sublevel set reaches half a period from the center.
    """
    if height <= 0.0:
        raise EmptySection(f"section height must be positive, got {height}")
    grid = pot.grid
    n, h = grid.n, grid.spacing
    i0, j0 = grid.index_of(np.asarray(x0, dtype=float))
    x0c = np.array([(i0 + 0.5) * h, (j0 + 0.5) * h])

    x1, x2 = grid.centers()
    d1 = gridmod.wrap_delta(x1 - x0c[0])
    d2 = gridmod.wrap_delta(x2 - x0c[1])
    deficit = (
        0.5 * (d1**2 + d2**2)
        + pot.q
        - pot.q[i0, j0]
        - pot.g1[i0, j0] * d1
        - pot.g2[i0, j0] * d2
    )
    raw = deficit < height
    if not raw[i0, j0]:
        raise EmptySection("center cell fails its own tangent test")

    # if the sublevel reaches the edge of the half-period window the lift
    # is ambiguous
    edge = 0.5 - 1.5 * h
    if np.any(raw & ((np.abs(d1) >= edge) | (np.abs(d2) >= edge))):
        raise SectionWrapsTorus(
            f"section at height {height} reaches half a period from {x0c}"
        )

    # keep the 4-connected component containing the center (rolled so the
    # component cannot straddle the array seam)
    shift = (n // 2 - i0, n // 2 - j0)
    rolled = np.roll(raw, shift, axis=(0, 1))
    labels, _ = ndimage.label(rolled)
    keep = labels == labels[n // 2, n // 2]
    discarded = int(np.count_nonzero(rolled) - np.count_nonzero(keep))
    mask = np.roll(keep, (-shift[0], -shift[1]), axis=(0, 1))

    count = int(np.count_nonzero(mask))
    if count < 2:
        raise EmptySection(
            f"height {height} is below one-cell resolution at spacing {h}"
        )
    offsets = np.column_stack([d1[mask], d2[mask]])
    return Section(grid, x0c, (int(i0), int(j0)), float(height), mask,
                   offsets, discarded)


def section_ladder(pot, x0, top_height, rungs):
    """Sections at heights top, top/2, ..., top/2^(rungs-1)."""
    return [extract_section(pot, x0, top_height * 0.5**k) for k in range(rungs)]


# --- John normalization -------------------------------------------------------

@dataclasses.dataclass
class JohnNormalization:
    """Affine map T z = A z + b normalizing a section.

    b is expressed in lifted offset coordinates relative to the section
    center; containment_ok records the constructive sandwich check
    B_1 in T^{-1}(S) in B_2 (one-cell tolerance).
    """

    A: np.ndarray
    b: np.ndarray
    det_A: float
    semi_axes: np.ndarray
    containment_ok: bool
    outer_ok: bool
    inner_ok: bool
    method: str

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "det_A": self.det_A,
            "semi_axes": self.semi_axes.tolist(),
            "containment_ok": self.containment_ok,
            "method": self.method,
        }


def verify_containment(section, A, b, n_angles=64):
    """Constructive sandwich check with one-cell tolerance.

    Outer: every member offset maps into B_2 (padded by a cell diagonal).
    Inner: the image of the unit circle lands on member cells (or within
    one cell of one); convexity of the section covers the interior.
    """
    h = section.grid.spacing
    Ainv = np.linalg.inv(A)
    z = (section.offsets - b) @ Ainv.T
    pad = 0.5 * np.sqrt(2.0) * h * np.linalg.norm(Ainv, 2)
    outer_ok = bool(np.max(np.hypot(z[:, 0], z[:, 1])) <= 2.0 + pad)

    angles = np.linspace(0.0, 2.0 * np.pi, n_angles, endpoint=False)
    circle = np.column_stack([np.cos(angles), np.sin(angles)])
    ys = circle @ A.T + b
    inner_ok = all(
        section.contains_point(gridmod.wrap(section.center + y), pad_cells=1)
        for y in ys
    )
    return outer_ok, inner_ok


def _principal_frame(pts, cell_h):
    b = pts.mean(axis=0)
    centered = pts - b
    cov = centered.T @ centered / len(pts) + (cell_h**2 / 12.0) * np.eye(2)
    w, v = np.linalg.eigh(cov)
    if np.linalg.det(v) < 0:
        v = v[:, ::-1].copy()
        w = w[::-1].copy()
    return b, w, v


def _min_area_ellipse(pts, tol=1e-8, max_iter=1000):
    """Khachiyan's algorithm: minimal enclosing ellipse of a point set.

    Returns (center, E) with the ellipse {x: (x-c)^T E (x-c) <= 1}.
    """
    m = len(pts)
    q = np.column_stack([pts, np.ones(m)]).T  # (3, m)
    u = np.full(m, 1.0 / m)
    for _ in range(max_iter):
        x = (q * u) @ q.T
        xin = np.linalg.inv(x)
        marg = np.sum(q * (xin @ q), axis=0)
        jmax = int(np.argmax(marg))
        step = (marg[jmax] - 3.0) / (3.0 * (marg[jmax] - 1.0))
        if step <= tol:
            break
        u = u * (1.0 - step)
        u[jmax] += step
    c = pts.T @ u
    s = (pts * u[:, None]).T @ pts - np.outer(c, c)
    return c, np.linalg.inv(s) / 2.0


def john_normalize(section):
    """Normalizing map from the second-moment ellipse of the member cells.

    Principal axes are matched to the covariance (exact for an ellipse),
    then the axes are scaled so the farthest member cell sits, including a
    one-cell pad, exactly on radius 2 -- this pins the outer inclusion and
    leaves the inner one to verify.  If verification fails the Khachiyan
    minimum-area ellipse of the hull replaces the moment estimate with the
    John shrink factor 2.
    """
    grid = section.grid
    h = grid.spacing
    pts = section.offsets
    b, w, v = _principal_frame(pts, h)
    semi = 2.0 * np.sqrt(w)
    if np.min(semi) < 1.5 * h:
        raise DegenerateSection(
            f"section thinner than 3 cells across (semi-axes {semi})"
        )
    z = (pts - b) @ v / semi[None, :]
    pad = 0.5 * np.sqrt(2.0) * h / np.min(semi)
    rmax = float(np.max(np.hypot(z[:, 0], z[:, 1]))) + pad
    semi = semi * (rmax / 2.0)
    A = v @ np.diag(semi)
    outer_ok, inner_ok = verify_containment(section, A, b)
    method = "moments"

    if not (outer_ok and inner_ok):
        method = "hull"
        try:
            hull = ConvexHull(pts)
            hull_pts = pts[hull.vertices]
        except QhullError as exc:
            raise DegenerateSection(f"hull construction failed: {exc}") from exc
        c, emat = _min_area_ellipse(hull_pts)
        ew, ev = np.linalg.eigh(emat)
        if np.min(ew) <= 0:
            raise DegenerateSection("enclosing ellipse is degenerate")
        axes = 1.0 / np.sqrt(ew)
        if np.linalg.det(ev) < 0:
            ev = ev[:, ::-1].copy()
            axes = axes[::-1].copy()
        if np.min(axes) < 1.5 * h:
            raise DegenerateSection(
                f"section thinner than 3 cells across (axes {axes})"
            )
        # T(B_2) is the enclosing ellipse; John gives T(B_1) inside the hull
        semi = axes / 2.0
        A = ev @ np.diag(semi)
        b = c
        outer_ok, inner_ok = verify_containment(section, A, b)

    return JohnNormalization(
        A=A,
        b=np.asarray(b, dtype=float),
        det_A=float(np.linalg.det(A)),
        semi_axes=np.asarray(semi, dtype=float),
        containment_ok=bool(outer_ok and inner_ok),
        outer_ok=bool(outer_ok),
        inner_ok=bool(inner_ok),
        method=method,
    )


# --- rescaling ---------------------------------------------------------------

@dataclasses.dataclass
class RescaledSection:
    """Fields pulled back to normalized coordinates z in [-box, box]^2.

    phi is the tilted potential divided by det A (2D normalization), so
    det D^2 phi_tilde keeps the original pinch bounds; u is composed with
    T unchanged; F picks up the factor det A * A^{-1}.
    """

    box: float
    m: int
    z_spacing: float
    phi: np.ndarray
    mask: np.ndarray
    u: np.ndarray = None
    F1: np.ndarray = None
    F2: np.ndarray = None
    det_A: float = 0.0

    def det_hessian_range(self):
        """(min, max) of det D^2 phi_tilde over interior mask points."""
        p11, p12, p22 = gridmod.second_differences(self.phi, self.z_spacing)
        det = p11 * p22 - p12**2
        core = ndimage.binary_erosion(self.mask, structure=np.ones((3, 3)))
        if not np.any(core):
            raise DegenerateSection("no interior points after rescaling")
        return float(np.min(det[core])), float(np.max(det[core]))

    def lq_norm_u(self, qexp):
        vals = np.abs(self.u[self.mask]) ** qexp
        return float(np.sum(vals) * self.z_spacing**2) ** (1.0 / qexp)

    def sup_F(self):
        return float(np.max(np.hypot(self.F1, self.F2)[self.mask]))


def rescale_problem(pot, section, john, u=None, F=None, resolution=None,
                    box=2.2):
    """Pull a potential (and optionally a field u and flux F) back by T.

    Samples are taken on a uniform local grid covering [-box, box]^2 with
    bilinear interpolation of the periodic parts; the quadratic part of
    the potential is evaluated analytically on the lift, so no wrap
    artifacts enter.
    """
    grid = pot.grid
    h = grid.spacing
    if resolution is None:
        resolution = int(np.clip(2 * box * np.max(john.semi_axes) / h, 48, 256))
    zs = np.linspace(-box, box, resolution)
    dz = zs[1] - zs[0]
    z1, z2 = np.meshgrid(zs, zs, indexing="ij")
    zpts = np.stack([z1, z2], axis=-1)
    y = zpts @ john.A.T + john.b  # lifted offsets from the section center
    pts_abs = section.center + y  # lifted absolute coordinates
    pts_torus = gridmod.wrap(pts_abs)

    qv = gridmod.sample_bilinear(pot.q, pts_torus, grid)
    phi_lift = 0.5 * np.sum(pts_abs**2, axis=-1) + qv
    i0, j0 = section.center_index
    phi0 = 0.5 * np.sum(section.center**2) + pot.q[i0, j0]
    grad0 = section.center + np.array([pot.g1[i0, j0], pot.g2[i0, j0]])
    tilted = phi_lift - phi0 - y @ grad0 - section.height
    phi = tilted / john.det_A

    member = np.empty(z1.shape, dtype=bool)
    ii, jj = grid.index_of(pts_torus)
    member = section.mask[ii, jj]

    out = RescaledSection(box=box, m=resolution, z_spacing=float(dz),
                          phi=phi, mask=member, det_A=john.det_A)
    if u is not None:
        out.u = gridmod.sample_bilinear(np.asarray(u, float), pts_torus, grid)
    if F is not None:
        f1 = gridmod.sample_bilinear(np.asarray(F[0], float), pts_torus, grid)
        f2 = gridmod.sample_bilinear(np.asarray(F[1], float), pts_torus, grid)
        ainv = np.linalg.inv(john.A)
        out.F1 = john.det_A * (ainv[0, 0] * f1 + ainv[0, 1] * f2)
        out.F2 = john.det_A * (ainv[1, 0] * f1 + ainv[1, 1] * f2)
    return out


def lq_norm_on_mask(values, mask, qexp, grid):
    vals = np.abs(np.asarray(values)[mask]) ** qexp
    return float(np.sum(vals) * grid.cell_area) ** (1.0 / qexp)


def section_w21_norm(pot, section, eps):
    """L^(1+eps) norm of the potential Laplacian over the section.

    The Laplacian of the split potential is 2 + Delta q; for the exact
    quadratic it is identically 2, so the norm reduces to
    2 * area^(1/(1+eps)).
    """
    lap = pot.p11 + pot.p22
    return lq_norm_on_mask(lap, section.mask, 1.0 + eps, pot.grid)
