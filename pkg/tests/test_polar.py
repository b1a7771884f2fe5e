import numpy as np
import pytest

from sgtorus import polar, presets
from sgtorus.errors import (
    DegenerateMap,
    FactorizationResidualTooLarge,
    InsufficientSamples,
)
from sgtorus.grid import PeriodicDisplacement, TorusGrid, periodic_distance

TWO_PI = 2.0 * np.pi


def identity_map(grid):
    z = np.zeros((grid.n, grid.n))
    return PeriodicDisplacement(grid, z, z.copy())


class TestPushforward:
    def test_identity_gives_uniform_exactly(self):
        grid = TorusGrid(32)
        rho, factor = polar.pushforward_density(identity_map(grid))
        assert np.array_equal(rho.values, np.ones((32, 32)))
        assert factor == 1.0

    def test_translation_gives_uniform(self):
        grid = TorusGrid(32)
        d = PeriodicDisplacement(grid, np.full((32, 32), 0.3),
                                 np.full((32, 32), -0.2))
        rho, _ = polar.pushforward_density(d)
        assert np.max(np.abs(rho.values - 1.0)) <= 1e-12

    def test_gradient_map_matches_change_of_variables(self):
        # X = grad potential pushes uniform to 1/det(D^2 potential) o X^{-1};
        # deposition aliasing is h-independent and proportional to eps,
        # so a small amplitude keeps the relative L1 gap tight
        grid = TorusGrid(64)
        eps = 0.003
        mapping = presets.cosine_gradient_map(grid, eps)
        rho, _ = polar.pushforward_density(mapping)

        x1inv = presets.cosine_inverse_first_coordinate(grid, eps)
        det_at_inv = 1.0 - eps * TWO_PI**2 * np.cos(TWO_PI * x1inv)
        oracle = 1.0 / det_at_inv
        oracle = oracle / oracle.mean()
        rel_l1 = np.mean(np.abs(rho.values - oracle)) / np.mean(np.abs(oracle))
        assert rel_l1 <= 0.02

    def test_mass_renormalization_near_one(self):
        grid = TorusGrid(64)
        rho, factor = polar.pushforward_density(presets.shear_map(grid, 0.05))
        assert abs(factor - 1.0) <= 1e-12
        assert np.mean(rho.values) == pytest.approx(1.0, abs=1e-14)

    def test_collapsing_map_rejected(self):
        grid = TorusGrid(32)
        x1, x2 = grid.centers()
        # send every cell to the same point
        d = PeriodicDisplacement(grid, 0.5 - x1, 0.5 - x2)
        with pytest.raises(DegenerateMap):
            polar.pushforward_density(d)


class TestFactorize:
    def test_identity_factors_trivially(self):
        grid = TorusGrid(32)
        fact = polar.factorize(identity_map(grid))
        assert fact.residual_median <= 1e-10
        assert fact.defect <= 1e-10
        assert float(np.max(fact.g.norm())) <= 1e-10
        assert np.max(np.abs(fact.pot.q)) <= 1e-10

    def test_gradient_map_has_trivial_rotation_factor(self):
        # X already a gradient: P recovers it and g stays near the identity
        grid = TorusGrid(64)
        mapping = presets.cosine_gradient_map(grid, 0.01)
        fact = polar.factorize(mapping)
        assert fact.residual_median <= fact.tol_fact
        assert float(np.median(fact.g.norm())) <= 5.0 * grid.spacing
        summary = fact.summary_dict()
        assert set(summary) == {"residual_median", "residual_max", "defect",
                                "ma_residual", "inversion_residual"}

    def test_shear_composition_recovers_both_factors(self):
        # X = grad potential o shear: the measure factor is the shear itself
        grid = TorusGrid(64)
        shear = presets.shear_map(grid, 0.05)
        outer = presets.cosine_gradient_map(grid, 0.005)
        fact = polar.factorize(presets.compose_maps(outer, shear))
        x1, x2 = grid.centers()
        g_pts = fact.g.apply()
        s_pts = shear.apply()
        err = periodic_distance(g_pts, s_pts)
        assert float(np.median(err)) <= 5.0 * grid.spacing
        assert fact.defect <= 0.05

    def test_unreachable_tolerance_raises(self):
        grid = TorusGrid(32)
        mapping = presets.cosine_gradient_map(grid, 0.01)
        with pytest.raises(FactorizationResidualTooLarge):
            polar.factorize(mapping, tol_fact=1e-14)


class TestSeries:
    def test_validation(self):
        grid = TorusGrid(16)
        m = identity_map(grid)
        with pytest.raises(ValueError):
            polar.MapTimeSeries(grid, [0.0, 0.0], [m, m])
        with pytest.raises(ValueError):
            polar.MapTimeSeries(grid, [0.0], [m, m])

    def test_dt_map_centered_oracle(self):
        grid = TorusGrid(32)
        times = [0.1, 0.2, 0.3]
        series = presets.cosine_family_series(grid, times, eps_scale=0.03)
        d1, _ = series.dt_map(1)
        # analytic time derivative of the map family
        x1, _ = grid.centers()
        shape = -TWO_PI * np.sin(TWO_PI * x1)
        eps_dot = 0.03 * (np.sin(times[2]) - np.sin(times[0])) / 0.2
        assert np.max(np.abs(d1 - eps_dot * shape)) <= 1e-12

    def test_write_read_roundtrip(self, tmp_path):
        grid = TorusGrid(16)
        series = presets.cosine_family_series(grid, [0.1, 0.4, 0.7])
        manifest = polar.write_series(series, tmp_path / "series")
        assert len(manifest["entries"]) == 3
        back = polar.read_series(tmp_path / "series")
        assert back.times == series.times
        for a, b in zip(back.maps, series.maps):
            assert np.array_equal(a.d1, b.d1)
            assert np.array_equal(a.d2, b.d2)


class TestTimeRegularity:
    def test_needs_three_timestamps(self):
        grid = TorusGrid(32)
        series = presets.cosine_family_series(grid, [0.1, 0.2])
        with pytest.raises(InsufficientSamples):
            polar.polar_time_regularity(series)

    def test_report_rows_and_summary(self):
        grid = TorusGrid(32)
        series = presets.cosine_family_series(grid, [0.1, 0.2, 0.3, 0.4])
        out = polar.polar_time_regularity(series, seed=1)
        assert len(out["rows"]) == 2  # interior timestamps only
        assert len(out["factorizations"]) == 4
        row = out["rows"][0]
        assert {"t", "defect", "residual", "gamma_hat", "C_hat"} <= set(row)
        s = out["summary"]
        assert s["n_timestamps"] == 4
        assert s["defect_max"] < 0.05
        assert s["residual_max"] <= 2.0 * 5.0 * grid.spacing
        assert np.isfinite(s["gamma_min"])
