import numpy as np
import pytest

from homogbl.cell import solve_first_cell
from homogbl.errors import UnsupportedScale
from homogbl.grid import build_cell_grid, build_domain_grid
from homogbl.assembly import assemble_mass
from homogbl.unfolding import (
    NodalField,
    averaging_ratios,
    cell_average,
    distance_to_boundary,
    gradient_rule_check,
    identity_errors,
    integrate_unfolded,
    local_average_inequality_check,
    q_interp,
    reciprocal_integer,
    rho_cutoff,
    strip_measure,
    unfold,
)

SWEEP = (1 / 4, 1 / 8, 1 / 16, 1 / 32)


def x1(x):
    return x[..., 0]


def sin_field(x):
    return np.sin(np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])


def sin_grad(x):
    return np.pi * np.stack([np.cos(np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1]),
                             2 * np.sin(np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1])], axis=-1)


def spread(values):
    values = np.asarray(values)
    return values.max() / values.min()


class TestScale:
    @pytest.mark.parametrize("eps,k", [(0.25, 4), (1 / 3, 3), (1 / 32, 32), (1.0, 1)])
    def test_reciprocal(self, eps, k):
        assert reciprocal_integer(eps) == k

    @pytest.mark.parametrize("eps", [0.3, 0.0, -0.25, 2 / 7])
    def test_unsupported(self, eps):
        with pytest.raises(UnsupportedScale):
            unfold(x1, eps)


class TestUnfold:
    def test_constant(self):
        u = unfold(lambda x: np.full(x.shape[:-1], 2.5), 1 / 4)
        assert np.all(u.values == 2.5)

    def test_definition_sample(self):
        # sample at y = (1/2, 1/2), which is a node of the n = 2 sample grid's Gauss layout
        u = unfold(x1, 1 / 2, build_cell_grid(2))
        c = np.flatnonzero((u.cells == [1, 0]).all(axis=1))[0]
        assert np.allclose(u.values[c], 0.5 + 0.5 * u.points[:, 0])
        assert 0.5 + 0.5 * 0.5 == 0.75

    def test_product_rule_random_fields(self, rng):
        g = build_domain_grid(16)
        v = NodalField(g, rng.normal(size=g.node_count))
        w = NodalField(g, rng.normal(size=g.node_count))
        vw = lambda x: v(x) * w(x)
        sg = build_cell_grid(4)
        tv, tw, tvw = unfold(v, 1 / 8, sg), unfold(w, 1 / 8, sg), unfold(vw, 1 / 8, sg)
        assert np.array_equal((tv * tw).values, tvw.values)
        assert tvw.values.shape == (64, 64)

    def test_continuous_field_agrees_across_cells(self):
        g = build_cell_grid(2)
        # shared edge points: x = 1/4 seen from cell 0 (y = 1) and cell 1 (y = 0)
        f = lambda x: np.cos(3 * x[..., 0]) + x[..., 1] ** 2
        left = f(np.array([[(0 + 1.0) / 4, 0.3]]))
        right = f(np.array([[(1 + 0.0) / 4, 0.3]]))
        assert left == right
        assert unfold(f, 1 / 4, g).values.shape == (16, 16)

    def test_mismatched_product(self):
        with pytest.raises(ValueError):
            unfold(x1, 1 / 4) * unfold(x1, 1 / 8)


class TestIntegration:
    def test_one(self):
        assert integrate_unfolded(unfold(lambda x: np.ones(x.shape[:-1]), 1 / 4)) == pytest.approx(1.0, abs=1e-15)

    def test_bilinear(self):
        assert abs(integrate_unfolded(unfold(lambda x: x[..., 0] * x[..., 1], 1 / 4)) - 0.25) <= 1e-12

    def test_random_q1_vs_mass(self, rng):
        g = build_domain_grid(16)
        vals = rng.normal(size=g.node_count)
        direct = np.ones(g.node_count) @ (assemble_mass(g) @ vals)
        u = unfold(NodalField(g, vals), 1 / 8)
        assert abs(integrate_unfolded(u) - direct) <= 1e-12


class TestGradientRule:
    def test_affine(self):
        g = build_domain_grid(8)
        vals = 0.3 + 2 * g.coords[:, 0] - 0.7 * g.coords[:, 1]
        assert gradient_rule_check(NodalField(g, vals), 1 / 4) <= 1e-13

    def test_random_q1(self, rng):
        g = build_domain_grid(16)
        f = NodalField(g, rng.normal(size=g.node_count))
        assert gradient_rule_check(f, 1 / 4) <= 1e-12
        assert gradient_rule_check(f, 1 / 4, build_cell_grid(8)) <= 1e-12

    def test_analytic(self):
        f = lambda x: np.sin(np.pi * x[..., 0])
        grad = lambda x: np.stack([np.pi * np.cos(np.pi * x[..., 0]), np.zeros(x.shape[:-1])], -1)
        for eps in SWEEP:
            assert gradient_rule_check(f, eps, grad=grad) <= 1e-12

    def test_analytic_needs_gradient(self):
        with pytest.raises(ValueError):
            gradient_rule_check(x1, 1 / 4)


class TestAverages:
    def test_constant(self):
        avg = cell_average(lambda x: np.full(x.shape[:-1], -1.5), 1 / 8)
        assert np.all(avg.averages == -1.5)

    def test_x1_first_cell(self):
        avg = cell_average(x1, 1 / 2)
        assert avg.averages[0, 0] == pytest.approx(0.25, abs=1e-15)
        assert avg.averages[1, 0] == pytest.approx(0.75, abs=1e-15)
        assert avg.at(np.array([0.6, 0.1])) == avg.averages[1, 0]

    def test_mean_defect_ratio_bounded(self):
        r = [averaging_ratios(sin_field, sin_grad, e).mean_defect for e in SWEEP[:3]]
        assert spread(r) <= 4


class TestQ:
    def test_constant(self):
        q = q_interp(lambda x: np.full(x.shape[:-1], 3.0), 1 / 4)
        pts = np.random.default_rng(1).random((40, 2))
        assert np.all(q(pts) == 3.0)

    def test_affine_shift(self, rng):
        c = np.array([1.5, -0.5])
        phi = lambda x: 0.2 + x @ c
        eps = 1 / 8
        q = q_interp(phi, eps)
        pts = rng.random((100, 2))
        assert np.allclose(q(pts), phi(pts + eps / 2), atol=1e-13)

    def test_nodal_edge_extension(self, rng):
        g = build_domain_grid(8)
        f = NodalField(g, np.full(g.node_count, 0.7))
        assert np.allclose(q_interp(f, 1 / 4)(rng.random((20, 2))), 0.7)

    def test_q_defect_ratio_bounded(self):
        r = [averaging_ratios(sin_field, sin_grad, e).q_defect for e in SWEEP]
        assert spread(r) <= 4

    def test_unfold_defect_ratio_bounded(self):
        r = [averaging_ratios(sin_field, sin_grad, e).unfold_defect for e in SWEEP]
        assert spread(r) <= 4


class TestCutoff:
    def test_values(self):
        rho = rho_cutoff(1 / 4)
        assert rho(np.array([0.5, 0.5])) == 1.0
        assert rho(np.array([1 / 8, 0.5])) == pytest.approx(0.5)
        pts = np.random.default_rng(2).random((500, 2))
        v = rho(pts)
        assert v.min() >= 0 and v.max() <= 1
        assert np.all(v[distance_to_boundary(pts) >= 0.25] == 1)

    def test_lipschitz(self, rng):
        eps = 1 / 8
        rho = rho_cutoff(eps)
        a, b = rng.random((300, 2)), rng.random((300, 2))
        assert np.all(np.abs(rho(a) - rho(b)) <= np.linalg.norm(a - b, axis=1) / eps + 1e-12)

    @pytest.mark.parametrize("eps", [1 / 4, 1 / 8, 1 / 16])
    def test_strip_measure(self, eps):
        assert strip_measure(eps, 256) == pytest.approx(4 * eps - 4 * eps ** 2, abs=1e-12)

    def test_invalid(self):
        with pytest.raises(UnsupportedScale):
            rho_cutoff(0.0)


class TestLocalAverage:
    def test_constant_phi(self):
        g = build_cell_grid(8)
        assert local_average_inequality_check(g, np.ones(64), sin_field, sin_grad, 1 / 4) == 0.0

    def test_constant_psi(self, layered):
        g = build_cell_grid(8, layered)
        chi = solve_first_cell(g, layered).chi[0]
        one = lambda x: np.ones(x.shape[:-1])
        assert local_average_inequality_check(g, chi, one, lambda x: np.zeros(x.shape), 1 / 4) == pytest.approx(0, abs=1e-28)

    def test_layered_chi_ratio_bounded(self, layered):
        g = build_cell_grid(16, layered)
        chi = solve_first_cell(g, layered).chi[0]
        psi = lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
        grad = lambda x: np.pi * np.stack([np.cos(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1]),
                                           np.sin(np.pi * x[..., 0]) * np.cos(np.pi * x[..., 1])], -1)
        r = [local_average_inequality_check(g, chi, psi, grad, e) for e in SWEEP]
        assert spread(r) <= 4


class TestIdentityErrors:
    def test_all_exact(self):
        w = lambda x: np.exp(x[..., 0] * x[..., 1])
        for eps in SWEEP:
            e = identity_errors(sin_field, w, sin_grad, eps)
            assert max(e.product, e.integration, e.gradient) <= 1e-12
