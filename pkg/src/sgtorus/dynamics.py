"""Time integration of the dual semigeostrophic system on the torus.

One step of the loop: rotate the optimal-transport displacement into the
velocity U = (x - grad P*)^perp, advect the density semi-Lagrangially,
re-solve the Monge-Ampere equation warm-started from the previous
potential, and update the certificates (mass, density pinch, velocity
bound, solver residual).  Post-run diagnostics differentiate the
potential in time, check the linearized identity

    div(Phi grad dP*/dt) = div(-rho U),

and recover the Eulerian pressure and velocity by composition with the
Legendre gradient map.
"""

import dataclasses
import io
import csv

import numpy as np

from . import grid as gridmod
from .errors import CFLViolation, GridMismatch, InsufficientSamples
from .grid import PeriodicDisplacement, TorusField, mean_zero
from .lma import DivergenceFormOperator
from .ma import ConvexPotential, cofactor, legendre, solve_ma_periodic
from .regularity import holder_fit

CFL_NUMBER = 0.5
# per-step drift allowance of the conservative renormalization multiply
RENORM_DRIFT = 1e-6


def velocity_from_potential(pot):
    """Rotated transport displacement U = (x - grad P*)^perp.

    With grad P* = x + grad q this is U = (q_2, -q_1); a rotated gradient,
    hence discretely divergence-free up to the O(N^-2) commutator of the
    centered stencils.  The wrapped representative caps ||U||_inf at
    sqrt(2)/2.
    """
    d = pot.gradient_displacement()
    return PeriodicDisplacement(pot.grid, d.d2, -d.d1)


def cfl_limit(velocity, grid, cfl=CFL_NUMBER):
    u_inf = velocity.sup_norm()
    if u_inf == 0.0:
        return float("inf")
    return cfl * grid.spacing / u_inf


def transport_step(rho, velocity, dt, grid):
    """One semi-Lagrangian step of d rho/dt + div(rho U) = 0.

    Samples rho at the departure points x - dt U(x) with periodic bilinear
    interpolation (a convex combination, so cellwise min/max cannot grow),
    then applies one conservative renormalization multiply.  Returns
    (rho_new, factor); the factor is the caller's to log.
    """
    rho = np.asarray(rho, dtype=float)
    if dt <= 0.0:
        raise ValueError("time step must be positive")
    if dt > cfl_limit(velocity, grid) * (1.0 + 1e-12):
        raise CFLViolation(
            f"dt={dt:.3e} exceeds the CFL limit "
            f"{cfl_limit(velocity, grid):.3e} (||U||_inf={velocity.sup_norm():.3e})"
        )
    x1, x2 = grid.centers()
    departure = np.stack([x1 - dt * velocity.d1, x2 - dt * velocity.d2], axis=-1)
    advected = gridmod.sample_bilinear(rho, departure, grid)

    lo, hi = float(np.min(rho)), float(np.max(rho))
    slack = 1e-13 * max(1.0, hi)
    assert np.min(advected) >= lo - slack and np.max(advected) <= hi + slack, (
        "monotone interpolation escaped the input range"
    )

    factor = 1.0 / float(np.mean(advected))
    return advected * factor, factor


@dataclasses.dataclass
class SGState:
    """One snapshot of the dual system: density, potential, velocity."""

    grid: gridmod.TorusGrid
    t: float
    rho: np.ndarray
    pot: ConvexPotential
    velocity: PeriodicDisplacement
    certificates: dict
    lam_env: float  # running renormalization envelope around [lam, Lam]
    Lam_env: float

    @classmethod
    def from_density(cls, rho, grid, t=0.0, lam=None, Lam=None, tol=None,
                     initial=None, renorm_factor=1.0):
        if isinstance(rho, TorusField):
            grid, rho = rho.grid, rho.values
        rho = np.asarray(rho, dtype=float)
        lam = float(lam) if lam is not None else float(np.min(rho))
        Lam = float(Lam) if Lam is not None else float(np.max(rho))
        pot = solve_ma_periodic(rho, grid, lam=lam, Lam=Lam, tol=tol,
                                initial=initial)
        velocity = velocity_from_potential(pot)
        certificates = {
            "t": t,
            "mass": gridmod.integral(rho, grid),
            "min_rho": float(np.min(rho)),
            "max_rho": float(np.max(rho)),
            "u_inf": velocity.sup_norm(),
            "ma_residual": pot.residual,
            "renorm_factor": renorm_factor,
            "newton_iters": pot.newton_iters,
            "w2_proxy": w2_proxy(rho, pot),
        }
        return cls(grid, t, rho, pot, velocity, certificates, lam, Lam)

    def check_certificates(self, steps_taken=0):
        """Invariant checks; returns a list of (name, ok, detail) tuples."""
        c = self.certificates
        env_lo = self.lam_env * (1.0 - RENORM_DRIFT) ** steps_taken
        env_hi = self.Lam_env * (1.0 + RENORM_DRIFT) ** steps_taken
        return [
            ("mass", abs(c["mass"] - 1.0) <= 1e-8, f"mass={c['mass']!r}"),
            ("density_bounds",
             c["min_rho"] >= env_lo - 1e-12 and c["max_rho"] <= env_hi + 1e-12,
             f"[{c['min_rho']:.6f}, {c['max_rho']:.6f}] vs envelope "
             f"[{env_lo:.6f}, {env_hi:.6f}]"),
            ("velocity_bound",
             c["u_inf"] <= gridmod.MAX_DISPLACEMENT_NORM + 1e-15,
             f"u_inf={c['u_inf']:.6f}"),
        ]


def w2_proxy(rho, pot):
    """integral rho |x - grad P*|^2: transport-cost proxy to uniform."""
    d = pot.gradient_displacement()
    return gridmod.integral(rho * (d.d1**2 + d.d2**2), pot.grid)


def step(state, dt, tol=None):
    """Advance one step: transport rho, re-solve MA, refresh certificates.

    The density pinch envelope [lam, Lam] is widened by the logged
    renormalization factor, so the re-solve never rejects a density the
    scheme itself produced.
    """
    rho_new, factor = transport_step(state.rho, state.velocity, dt, state.grid)
    lam_env = state.lam_env * min(factor, 1.0)
    Lam_env = state.Lam_env * max(factor, 1.0)
    new = SGState.from_density(
        rho_new, state.grid, t=state.t + dt, lam=lam_env, Lam=Lam_env,
        tol=tol, initial=state.pot, renorm_factor=factor,
    )
    return new


@dataclasses.dataclass
class RunResult:
    """Recorded history of a run: per-step densities, potentials, certificates."""

    grid: gridmod.TorusGrid
    dt: float
    lam: float
    Lam: float
    times: list
    rho_history: list
    q_history: list
    certificates: list  # one dict per recorded time, index-aligned
    final_state: SGState

    @property
    def n_steps(self):
        return len(self.times) - 1

    def potential_at(self, k):
        return ConvexPotential(self.grid, self.q_history[k], strict=True)

    def dtp_field(self, k):
        """d P*/dt at record k: centered in time, one-sided at the ends."""
        q = self.q_history
        if len(q) < 2:
            raise InsufficientSamples("need at least two records for a time derivative")
        if 0 < k < len(q) - 1:
            return mean_zero((q[k + 1] - q[k - 1]) / (2.0 * self.dt))
        if k == 0:
            return mean_zero((q[1] - q[0]) / self.dt)
        return mean_zero((q[-1] - q[-2]) / self.dt)

    def dt_gradient(self, k):
        """d(grad P*)/dt at record k (gradient of the time derivative)."""
        g1, g2 = gridmod.periodic_gradient(TorusField(self.grid, self.dtp_field(k)))
        return g1, g2


def run(rho0, grid=None, dt=2e-3, t_end=0.1, lam=None, Lam=None, tol=None,
        check_invariants=True):
    """Integrate the dual system from rho0 until t_end.

    Records every step.  With check_invariants, a failed certificate
    raises InvariantViolation through SGState.check_certificates upstream
    consumers; here failures are collected into the certificate dicts as
    'violations' so callers decide hard/soft handling.
    """
    if isinstance(rho0, TorusField):
        grid, rho0 = rho0.grid, rho0.values
    if grid is None:
        raise ValueError("grid required when rho0 is a bare array")
    state = SGState.from_density(rho0, grid, lam=lam, Lam=Lam, tol=tol)
    n_steps = int(round(t_end / dt))

    times = [0.0]
    rho_history = [state.rho.copy()]
    q_history = [state.pot.q.copy()]
    certificates = [dict(state.certificates)]
    if check_invariants:
        certificates[-1]["violations"] = [
            name for name, ok, _ in state.check_certificates(0) if not ok
        ]
    for k in range(n_steps):
        state = step(state, dt, tol=tol)
        times.append(state.t)
        rho_history.append(state.rho.copy())
        q_history.append(state.pot.q.copy())
        certificates.append(dict(state.certificates))
        if check_invariants:
            certificates[-1]["violations"] = [
                name for name, ok, _ in state.check_certificates(k + 1) if not ok
            ]
    result = RunResult(grid, dt, state.lam_env, state.Lam_env, times,
                       rho_history, q_history, certificates, state)
    fill_lma_residuals(result)
    return result


def time_derivative_potential(prev, next_state):
    """(q_next - q_prev) / dt as a mean-zero field; quadratic parts cancel."""
    gridmod.check_same_grid(prev.grid, next_state.grid)
    dt = next_state.t - prev.t
    if dt <= 0.0:
        raise ValueError("states must be in increasing time order")
    return mean_zero((next_state.pot.q - prev.pot.q) / dt)


def lma_residual(pot, rho, velocity, dtp, operator=None):
    """Relative L2 residual of div(Phi grad dtp) = div(-rho U).

    The assembled operator computes -div(Phi grad .), so the identity
    reads  L dtp = div(rho U).
    """
    op = operator or DivergenceFormOperator(pot.grid, cofactor(pot),
                                            probe_definiteness=False)
    rhs = op.divergence_rhs(rho * velocity.d1, rho * velocity.d2)
    lhs = op.apply(dtp)
    scale = float(np.linalg.norm(rhs.ravel())) or 1.0
    return float(np.linalg.norm((lhs - rhs).ravel())) / scale


def fill_lma_residuals(result):
    """Annotate each certificate row with the linearized-identity residual."""
    if len(result.times) < 2:
        for c in result.certificates:
            c["lma_residual"] = float("nan")
        return result
    for k, c in enumerate(result.certificates):
        pot = result.potential_at(k)
        velocity = velocity_from_potential(pot)
        c["lma_residual"] = lma_residual(pot, result.rho_history[k], velocity,
                                         result.dtp_field(k))
    return result


def legendre_time_derivative(dtp, leg):
    """dP/dt from dP*/dt by composition: dP/dt(x) = -dP*/dt(grad P(x))."""
    pts = leg.gradient_displacement().apply()
    return -gridmod.sample_bilinear(np.asarray(dtp, dtype=float), pts, leg.grid)


def recover_eulerian(state, dt_g1, dt_g2, leg=None):
    """Eulerian pressure and velocity from the dual solution.

    u(x) = (d grad P*/dt)(grad P(x)) + D^2 P*(grad P(x)) (grad P(x) - x)^perp
    and p = periodic part of P.  Also returns the geostrophic wind
    u_g = (grad p)^perp.  dt_g1, dt_g2 are the components of d(grad P*)/dt
    on the grid (time differences of the dual gradient).
    """
    pot, grid = state.pot, state.grid
    leg = leg or legendre(pot)
    disp = leg.gradient_displacement()
    pts = disp.apply()

    a1, a2 = gridmod.sample_vector_bilinear(dt_g1, dt_g2, pts, grid)
    h11 = gridmod.sample_bilinear(pot.p11, pts, grid)
    h12 = gridmod.sample_bilinear(pot.p12, pts, grid)
    h22 = gridmod.sample_bilinear(pot.p22, pts, grid)
    w1, w2 = -disp.d2, disp.d1  # (grad P - x)^perp
    u1 = a1 + h11 * w1 + h12 * w2
    u2 = a2 + h12 * w1 + h22 * w2

    p = leg.q.copy()
    gp1, gp2 = gridmod.periodic_gradient(TorusField(grid, p))
    return p, (u1, u2), (-gp2, gp1)


# --- time-regularity reporting ------------------------------------------------

@dataclasses.dataclass
class TimeSeriesDiagnostics:
    """Per-step regularity records of dP*/dt along a run."""

    rows: list  # per (step, center) fit dicts
    step_rows: list  # per-step aggregates
    summary: dict


def holder_in_time_report(result, n_centers=5, kappas=(0.1, 0.2), seed=0,
                          min_steps=20):
    """Spatial Holder fits of dP*/dt at sampled centers, per recorded step.

    Aggregates the per-step median exponent and prefactor, the min/max over
    time, the fraction of fits with R^2 >= 0.8, and the rho-weighted
    L^(1+kappa) norms of d(grad P*)/dt.  Steps whose dP*/dt is constant to
    machine precision are flagged and excluded from the fit statistics.
    """
    n_records = len(result.times)
    if n_records < min_steps:
        raise InsufficientSamples(
            f"time-regularity report needs >= {min_steps} records, got {n_records}"
        )
    rng = np.random.default_rng(seed)
    centers = rng.random((n_centers, 2))
    grid = result.grid

    rows, step_rows = [], []
    for k in range(1, n_records - 1):
        dtp = result.dtp_field(k)
        g1, g2 = result.dt_gradient(k)
        mag = np.hypot(g1, g2)
        rho = result.rho_history[k]
        lebesgue = {
            kappa: float(gridmod.integral(rho * mag ** (1.0 + kappa), grid))
            ** (1.0 / (1.0 + kappa))
            for kappa in kappas
        }
        gammas, prefs, n_ok = [], [], 0
        constant_step = True
        for c in centers:
            fit = holder_fit(dtp, c, grid)
            rows.append({
                "step": k, "t": result.times[k],
                "center": (float(c[0]), float(c[1])),
                "gamma": fit.gamma, "C": fit.prefactor, "r2": fit.r2,
                "constant": fit.constant,
            })
            if fit.constant:
                continue
            constant_step = False
            gammas.append(fit.gamma)
            prefs.append(fit.prefactor)
            if fit.r2 >= 0.8:
                n_ok += 1
        step_rows.append({
            "step": k,
            "t": result.times[k],
            "gamma_hat": float(np.median(gammas)) if gammas else float("inf"),
            "C_hat": float(np.median(prefs)) if prefs else 0.0,
            "constant": constant_step,
            "r2_ok": n_ok,
            **{f"l{1.0 + kappa:g}_dt_grad": lebesgue[kappa] for kappa in kappas},
        })

    active = [r for r in step_rows if not r["constant"]]
    n_fits = sum(1 for r in rows if not r["constant"])
    summary = {
        "constant": not active,
        "gamma_min": min((r["gamma_hat"] for r in active), default=float("inf")),
        "gamma_max": max((r["gamma_hat"] for r in active), default=float("inf")),
        "c_max": max((r["C_hat"] for r in active), default=0.0),
        "r2_ok_fraction": (
            sum(r["r2_ok"] for r in step_rows) / n_fits if n_fits else 1.0
        ),
        "n_steps": len(step_rows),
        "n_centers": n_centers,
    }
    return TimeSeriesDiagnostics(rows, step_rows, summary)


CERTIFICATE_COLUMNS = ("t", "mass", "min_rho", "max_rho", "u_inf",
                       "ma_residual", "lma_residual")


def certificates_csv(result, columns=CERTIFICATE_COLUMNS):
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(columns)
    for c in result.certificates:
        writer.writerow([repr(float(c.get(col, float("nan")))) for col in columns])
    return buf.getvalue()
