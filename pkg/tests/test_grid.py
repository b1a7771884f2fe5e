import io

import numpy as np
import pytest

from sgtorus import grid as gridmod
from sgtorus.errors import GridMismatch
from sgtorus.grid import PeriodicDisplacement, TorusField, TorusGrid

TWO_PI = 2.0 * np.pi


def trig_field(grid):
    x1, x2 = grid.centers()
    return (np.sin(TWO_PI * x1) + 0.5 * np.cos(2 * TWO_PI * x2)
            + 0.25 * np.sin(TWO_PI * x1) * np.cos(TWO_PI * x2))


class TestWrapping:
    def test_wrap_into_unit_square(self):
        out = gridmod.wrap([[1.25, -0.25], [0.5, 3.0]])
        assert np.allclose(out, [[0.25, 0.75], [0.5, 0.0]])

    def test_wrap_delta_shortest_representative(self):
        assert gridmod.wrap_delta(0.8) == pytest.approx(-0.2)
        assert gridmod.wrap_delta(-0.6) == pytest.approx(0.4)
        assert np.all(gridmod.wrap_delta(np.linspace(-3, 3, 101)) >= -0.5)
        assert np.all(gridmod.wrap_delta(np.linspace(-3, 3, 101)) < 0.5)

    def test_periodic_distance_crosses_seam(self):
        d = gridmod.periodic_distance([0.05, 0.05], [0.95, 0.95])
        assert d == pytest.approx(np.hypot(0.1, 0.1))
        assert gridmod.periodic_distance([0.3, 0.4], [0.3, 0.4]) == 0.0

    def test_periodic_delta_antisymmetric(self, rng):
        a, b = rng.random((2, 7, 2))
        assert np.allclose(gridmod.periodic_delta(a, b),
                           gridmod.wrap_delta(-gridmod.periodic_delta(b, a)))


class TestGrid:
    def test_minimum_size(self):
        with pytest.raises(ValueError):
            TorusGrid(3)

    def test_centers_and_spacing(self):
        grid = TorusGrid(4)
        assert grid.spacing == 0.25
        assert grid.cell_area == 0.0625
        assert np.allclose(grid.axis_centers(), [0.125, 0.375, 0.625, 0.875])

    def test_index_of_floors_to_cell(self):
        grid = TorusGrid(10)
        i, j = grid.index_of([0.999, 0.0])
        assert (i, j) == (9, 0)
        assert np.allclose(grid.nearest_center([0.999, 0.0]), [0.95, 0.05])

    def test_field_shape_guard(self):
        with pytest.raises(GridMismatch):
            TorusField(TorusGrid(8), np.zeros((4, 4)))

    def test_check_same_grid(self):
        a = TorusField(TorusGrid(8), np.zeros((8, 8)))
        b = TorusField(TorusGrid(16), np.zeros((16, 16)))
        with pytest.raises(GridMismatch):
            gridmod.check_same_grid(a, b)


class TestDifferenceOperators:
    def test_gradient_second_order(self):
        errs = []
        for n in (32, 64):
            grid = TorusGrid(n)
            x1, x2 = grid.centers()
            f = TorusField(grid, np.sin(TWO_PI * x1) + np.cos(2 * TWO_PI * x2))
            g1, g2 = gridmod.periodic_gradient(f)
            e1 = np.max(np.abs(g1 - TWO_PI * np.cos(TWO_PI * x1)))
            e2 = np.max(np.abs(g2 + 2 * TWO_PI * np.sin(2 * TWO_PI * x2)))
            errs.append(max(e1, e2))
        assert 3.5 < errs[0] / errs[1] < 4.5

    def test_gradient_divergence_adjoint(self, rng):
        grid = TorusGrid(16)
        u = rng.standard_normal((16, 16))
        v1, v2 = rng.standard_normal((2, 16, 16))
        g1, g2 = gridmod.periodic_gradient(TorusField(grid, u))
        lhs = np.sum(g1 * v1 + g2 * v2)
        rhs = -np.sum(u * gridmod.periodic_divergence(v1, v2, grid))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)

    def test_perp_gradient_is_divergence_free(self):
        # centered stencils commute, so the rotated gradient has exactly
        # zero discrete divergence; the transport scheme leans on this
        grid = TorusGrid(32)
        g1, g2 = gridmod.periodic_gradient(TorusField(grid, trig_field(grid)))
        div = gridmod.periodic_divergence(g2, -g1, grid)
        assert np.max(np.abs(div)) <= 1e-10

    def test_second_differences_discrete_eigenvalue(self):
        grid = TorusGrid(32)
        h = grid.spacing
        x1, x2 = grid.centers()
        f = np.cos(TWO_PI * x1)
        f11, f12, f22 = gridmod.second_differences(f, h)
        eig = 2.0 * (np.cos(TWO_PI * h) - 1.0) / h**2
        assert np.max(np.abs(f11 - eig * f)) <= 1e-11
        assert np.max(np.abs(f22)) <= 1e-11
        assert np.max(np.abs(f12)) <= 1e-11

    def test_second_differences_mixed_eigenvalue(self):
        grid = TorusGrid(32)
        h = grid.spacing
        x1, x2 = grid.centers()
        f = np.cos(TWO_PI * x1) * np.cos(TWO_PI * x2)
        _, f12, _ = gridmod.second_differences(f, h)
        factor = (np.sin(TWO_PI * h) / h) ** 2
        expected = factor * np.sin(TWO_PI * x1) * np.sin(TWO_PI * x2)
        assert np.max(np.abs(f12 - expected)) <= 1e-11


class TestQuadrature:
    def test_integral_and_mean(self):
        grid = TorusGrid(8)
        f = TorusField(grid, np.full((8, 8), 3.0))
        assert gridmod.integral(f) == pytest.approx(3.0)
        assert gridmod.mean_value(f) == pytest.approx(3.0)

    def test_mean_zero(self, rng):
        vals = rng.standard_normal((8, 8)) + 5.0
        out = gridmod.mean_zero(vals)
        assert abs(np.mean(out)) <= 1e-14


class TestSampling:
    def test_exact_at_cell_centers(self, rng):
        grid = TorusGrid(16)
        vals = rng.standard_normal((16, 16))
        x1, x2 = grid.centers()
        pts = np.stack([x1, x2], axis=-1)
        out = gridmod.sample_bilinear(vals, pts, grid)
        assert np.max(np.abs(out - vals)) <= 1e-13

    def test_convex_combination_bounds(self, rng):
        grid = TorusGrid(16)
        vals = rng.standard_normal((16, 16))
        pts = rng.random((200, 2))
        out = gridmod.sample_bilinear(vals, pts, grid)
        assert np.min(out) >= vals.min() - 1e-12
        assert np.max(out) <= vals.max() + 1e-12

    def test_linear_reproduction_away_from_seam(self, rng):
        grid = TorusGrid(32)
        x1, x2 = grid.centers()
        vals = 0.3 + 1.7 * x1 - 0.9 * x2
        pts = 0.1 + 0.8 * rng.random((100, 2))
        out = gridmod.sample_bilinear(vals, pts, grid)
        expected = 0.3 + 1.7 * pts[:, 0] - 0.9 * pts[:, 1]
        assert np.max(np.abs(out - expected)) <= 1e-12

    def test_vector_sampling_matches_componentwise(self, rng):
        grid = TorusGrid(16)
        v1, v2 = rng.standard_normal((2, 16, 16))
        pts = rng.random((50, 2))
        s1, s2 = gridmod.sample_vector_bilinear(v1, v2, pts, grid)
        assert np.array_equal(s1, gridmod.sample_bilinear(v1, pts, grid))
        assert np.array_equal(s2, gridmod.sample_bilinear(v2, pts, grid))


class TestDisplacement:
    def test_components_wrapped_to_shortest(self):
        grid = TorusGrid(8)
        d = PeriodicDisplacement(grid, np.full((8, 8), 0.75), np.zeros((8, 8)))
        assert np.allclose(d.d1, -0.25)
        assert d.sup_norm() <= gridmod.MAX_DISPLACEMENT_NORM

    def test_apply_wraps_targets(self):
        grid = TorusGrid(8)
        d = PeriodicDisplacement(grid, np.full((8, 8), 0.4), np.zeros((8, 8)))
        pts = d.apply()
        assert np.all(pts >= 0.0) and np.all(pts < 1.0)
        x1, _ = grid.centers()
        assert np.allclose(pts[..., 0], (x1 + 0.4) % 1.0)

    def test_perp_rotation(self, rng):
        grid = TorusGrid(8)
        d1, d2 = 0.3 * rng.standard_normal((2, 8, 8))
        d = PeriodicDisplacement(grid, d1, d2)
        p = d.perp()
        assert np.allclose(p.d1, -d.d2)
        assert np.allclose(p.d2, d.d1)
        assert np.allclose(p.norm(), d.norm())


class TestSerialization:
    def test_binary_roundtrip(self, tmp_path, rng):
        grid = TorusGrid(16)
        field = TorusField(grid, rng.standard_normal((16, 16)))
        path = tmp_path / "field.bin"
        gridmod.field_to_binary(field, path)
        back = gridmod.field_from_binary(path)
        assert back.grid.n == 16
        assert np.array_equal(back.values, field.values)

    def test_binary_truncated_raises(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(np.array([8.0, 1.0, 2.0], dtype="<f8").tobytes())
        with pytest.raises(ValueError):
            gridmod.field_from_binary(path)

    def test_csv_roundtrip_full_precision(self, rng):
        grid = TorusGrid(8)
        field = TorusField(grid, rng.standard_normal((8, 8)) / 3.0)
        back = gridmod.field_from_csv(io.StringIO(gridmod.field_to_csv_string(field)))
        assert np.array_equal(back.values, field.values)

    def test_csv_rejects_foreign_header(self):
        with pytest.raises(ValueError):
            gridmod.field_from_csv(io.StringIO("a,b,c\n0,0,1.0\n"))
