"""Polar factorization of torus maps and its time regularity.

A map X on the torus factors as X = grad P o g with P convex (plus the
quadratic) and g Lebesgue-measure preserving.  The factors come from
optimal transport: push the uniform measure forward through X, solve the
Monge-Ampere equation for that density, and set g = grad P* o X.  For a
time-dependent family the same per-timestamp pipeline feeds time
differences of P* into the spatial regularity diagnostics.
"""

import dataclasses
import json
import os

import numpy as np

from . import grid as gridmod
from .errors import (
    DegenerateMap,
    FactorizationResidualTooLarge,
    InsufficientSamples,
)
from .grid import PeriodicDisplacement, TorusField, TorusGrid, mean_zero
from .ma import legendre, solve_ma_periodic
from .regularity import holder_fit


def pushforward_density(mapping, grid=None):
    """Density of the pushforward of the uniform measure through a map.

    Each source cell deposits its mass onto the four cells around the
    target point with bilinear weights (nearest-cell deposition leaves
    checkerboard noise that breaks pinch bounds).  Returns (field, factor)
    where factor is the unit-mass renormalization multiply, within
    rounding of 1 because bilinear weights sum to one per source.

    Raises DegenerateMap when some cell receives no mass at all.
    """
    if isinstance(mapping, PeriodicDisplacement):
        grid = mapping.grid
        targets = mapping.apply()
    else:
        targets = gridmod.wrap(np.asarray(mapping, dtype=float))
        if grid is None:
            raise ValueError("grid required when passing bare target points")
    n = grid.n
    coords = targets * n - 0.5
    base = np.floor(coords).astype(int)
    frac = coords - base

    accum = np.zeros((n, n))
    for di in (0, 1):
        for dj in (0, 1):
            w1 = frac[..., 0] if di else 1.0 - frac[..., 0]
            w2 = frac[..., 1] if dj else 1.0 - frac[..., 1]
            np.add.at(
                accum,
                ((base[..., 0] + di) % n, (base[..., 1] + dj) % n),
                w1 * w2,
            )
    if np.any(accum == 0.0):
        raise DegenerateMap(
            f"{np.count_nonzero(accum == 0.0)} cells received no mass"
        )
    factor = 1.0 / float(np.mean(accum))
    return TorusField(grid, accum * factor), factor


@dataclasses.dataclass
class PolarFactorization:
    """Factors X = grad P o g together with their quality certificates."""

    pot: object  # ConvexPotential P*
    leg: object  # LegendrePotential P
    g: PeriodicDisplacement  # measure-preserving factor as displacement
    density: TorusField  # pushforward of uniform through X
    residual_median: float  # periodic dist(grad P(g(x)), X(x)), median
    residual_max: float
    defect: float  # L1 distance of (uniform pushed through g) from 1
    tol_fact: float

    def summary_dict(self):
        return {
            "residual_median": self.residual_median,
            "residual_max": self.residual_max,
            "defect": self.defect,
            "ma_residual": self.pot.residual,
            "inversion_residual": self.leg.diagnostics["inversion_residual"],
        }


def factorize(mapping, lam=None, Lam=None, tol=None, tol_fact=None):
    """Polar-factor a torus map X given as a PeriodicDisplacement.

    The pushforward density must stay within the supplied pinch bounds for
    the Monge-Ampere solve to certify them.  The factorization residual
    (does grad P o g return X?) is checked against tol_fact, defaulting to
    twice the Legendre inversion tolerance.
    """
    grid = mapping.grid
    density, _ = pushforward_density(mapping)
    pot = solve_ma_periodic(density, lam=lam, Lam=Lam, tol=tol)
    leg = legendre(pot)

    x1, x2 = grid.centers()
    targets = mapping.apply()
    g_pts = pot.sample_gradient(targets)
    g = PeriodicDisplacement(grid, g_pts[..., 0] - x1, g_pts[..., 1] - x2)

    back = leg.sample_gradient(gridmod.wrap(g_pts))
    dist = gridmod.periodic_distance(back, targets)
    res_med = float(np.median(dist))
    res_max = float(np.max(dist))
    if tol_fact is None:
        tol_fact = 2.0 * leg.diagnostics["tol_inv"]
    if res_med > tol_fact:
        raise FactorizationResidualTooLarge(
            f"median factorization residual {res_med:.3e} > {tol_fact:.3e}"
        )

    g_density, _ = pushforward_density(g)
    defect = gridmod.integral(np.abs(g_density.values - 1.0), grid)
    return PolarFactorization(pot, leg, g, density, res_med, res_max,
                              defect, tol_fact)


# --- time series ---------------------------------------------------------------

@dataclasses.dataclass
class MapTimeSeries:
    """Time-stamped family of torus maps given as displacements."""

    grid: TorusGrid
    times: list
    maps: list  # PeriodicDisplacement per timestamp

    def __post_init__(self):
        if len(self.times) != len(self.maps):
            raise ValueError("times and maps differ in length")
        if any(t2 <= t1 for t1, t2 in zip(self.times, self.times[1:])):
            raise ValueError("timestamps must be strictly increasing")
        for m in self.maps:
            gridmod.check_same_grid(m.grid, self.grid)

    def dt_map(self, k):
        """Finite-difference dX/dt at timestamp k (centered inside)."""
        lo, hi = max(k - 1, 0), min(k + 1, len(self.times) - 1)
        span = self.times[hi] - self.times[lo]
        d1 = gridmod.wrap_delta(self.maps[hi].d1 - self.maps[lo].d1) / span
        d2 = gridmod.wrap_delta(self.maps[hi].d2 - self.maps[lo].d2) / span
        return d1, d2

    @classmethod
    def from_displacements(cls, grid, times, displacement_pairs):
        maps = [PeriodicDisplacement(grid, d1, d2) for d1, d2 in displacement_pairs]
        return cls(grid, list(times), maps)


def write_series(series, directory):
    """Manifest JSON plus per-timestamp displacement component files."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for k, (t, m) in enumerate(zip(series.times, series.maps)):
        names = (f"map_{k:04d}_d1.bin", f"map_{k:04d}_d2.bin")
        gridmod.field_to_binary(TorusField(series.grid, m.d1),
                                os.path.join(directory, names[0]))
        gridmod.field_to_binary(TorusField(series.grid, m.d2),
                                os.path.join(directory, names[1]))
        entries.append({"t": t, "d1": names[0], "d2": names[1]})
    manifest = {"n": series.grid.n, "times": list(series.times),
                "entries": entries}
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_series(directory):
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    grid = TorusGrid(int(manifest["n"]))
    maps = []
    for entry in manifest["entries"]:
        d1 = gridmod.field_from_binary(os.path.join(directory, entry["d1"]))
        d2 = gridmod.field_from_binary(os.path.join(directory, entry["d2"]))
        maps.append(PeriodicDisplacement(grid, d1.values, d2.values))
    return MapTimeSeries(grid, [float(e["t"]) for e in manifest["entries"]], maps)


def polar_time_regularity(series, lam=None, Lam=None, tol=None, n_centers=3,
                          kappas=(0.1, 0.2), seed=0):
    """Factorize every timestamp and fit the regularity of dP*/dt.

    Returns per-timestamp rows {t, defect, residual, gamma_hat, C_hat} and
    a summary with the min exponent and max prefactor over time.  Constant
    (steady) time derivatives are flagged rather than fitted.
    """
    if len(series.times) < 3:
        raise InsufficientSamples(
            f"time regularity needs >= 3 timestamps, got {len(series.times)}"
        )
    rng = np.random.default_rng(seed)
    centers = rng.random((n_centers, 2))
    grid = series.grid

    facts = [factorize(m, lam=lam, Lam=Lam, tol=tol) for m in series.maps]
    rows = []
    for k in range(1, len(series.times) - 1):
        span = series.times[k + 1] - series.times[k - 1]
        dtp = mean_zero((facts[k + 1].pot.q - facts[k - 1].pot.q) / span)
        g1, g2 = gridmod.periodic_gradient(TorusField(grid, dtp))
        mag = np.hypot(g1, g2)
        rho = facts[k].density.values
        lebesgue = {
            kappa: float(gridmod.integral(rho * mag ** (1.0 + kappa), grid))
            ** (1.0 / (1.0 + kappa))
            for kappa in kappas
        }
        fits = [holder_fit(dtp, c, grid) for c in centers]
        live = [f for f in fits if not f.constant]
        rows.append({
            "t": series.times[k],
            "defect": facts[k].defect,
            "residual": facts[k].residual_median,
            "constant": not live,
            "gamma_hat": float(np.median([f.gamma for f in live]))
            if live else float("inf"),
            "C_hat": float(np.median([f.prefactor for f in live]))
            if live else 0.0,
            "r2_min": min((f.r2 for f in live), default=1.0),
            **{f"l{1.0 + kappa:g}_dt_grad": lebesgue[kappa] for kappa in kappas},
        })
    active = [r for r in rows if not r["constant"]]
    summary = {
        "constant": not active,
        "gamma_min": min((r["gamma_hat"] for r in active), default=float("inf")),
        "c_max": max((r["C_hat"] for r in active), default=0.0),
        "defect_max": max(r["defect"] for r in rows),
        "residual_max": max(r["residual"] for r in rows),
        "n_timestamps": len(series.times),
    }
    return {"rows": rows, "summary": summary, "factorizations": facts}
