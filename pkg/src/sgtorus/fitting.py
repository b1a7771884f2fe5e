"""Shared power-law fitting helpers.

All exponent estimates in the package go through one ordinary least
squares fit in log-log coordinates so that reports agree on slope,
prefactor, and R^2 conventions.
"""

import dataclasses

import numpy as np

from .errors import InsufficientSamples

# Below this fraction of the data scale a field counts as constant and
# exponent fits return the sentinel instead of fitting noise.
CONSTANT_SENTINEL = float("inf")


@dataclasses.dataclass
class PowerLawFit:
    """Result of an OLS fit log(y) = slope*log(x) + intercept."""

    slope: float
    intercept: float
    r2: float
    n_points: int
    stderr: float

    @property
    def prefactor(self):
        return float(np.exp(self.intercept))


def loglog_fit(x, y, min_points=4):
    """Fit y ~ C * x^slope by least squares in log-log coordinates.

    Parameters
    ----------
    x, y : array_like
        Positive samples; pairs with a nonpositive entry are dropped.
    min_points : int
        Minimum surviving pairs; fewer raises InsufficientSamples.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < min_points:
        raise InsufficientSamples(
            f"power-law fit needs {min_points} positive samples, got {x.size}"
        )
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = max(x.size - 2, 1)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = float(np.sqrt(ss_res / dof / sxx)) if sxx > 0 else float("nan")
    return PowerLawFit(float(slope), float(intercept), r2, int(x.size), stderr)


def linear_fit(x, y, min_points=4):
    """Plain OLS fit y = slope*x + intercept with R^2 (no log transform)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    if x.size < min_points:
        raise InsufficientSamples(
            f"linear fit needs {min_points} samples, got {x.size}"
        )
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = max(x.size - 2, 1)
    sxx = float(np.sum((x - x.mean()) ** 2))
    stderr = float(np.sqrt(ss_res / dof / sxx)) if sxx > 0 else float("nan")
    return PowerLawFit(float(slope), float(intercept), r2, int(x.size), stderr)


def dyadic_ladder(top, rungs):
    """Heights top, top/2, ..., top/2^(rungs-1)."""
    return [top * 0.5**k for k in range(rungs)]
