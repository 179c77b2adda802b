import numpy as np
import pytest
from dataclasses import replace

from homogbl.assembly import apply_periodic_zero_mean, assemble_mass, assemble_stiffness, coefficient_at_quadrature
from homogbl.cell import (
    HomogenizedTensor,
    _galerkin_loads,
    compute_b,
    energy_tensor,
    homogenized_tensor,
    solve_cell_problems,
    solve_first_cell,
    solve_second_cell,
    stencil_homogenized_tensor,
)
from homogbl.errors import GridIncompatibility, Inconsistency
from homogbl.grid import CoefficientField, build_cell_grid, build_domain_grid
from homogbl.solver import dense

LAYERED_HOM = np.diag([8 / 5, 5 / 2])


def layered_chi1(y):
    """Zero-mean periodic solution of (a (chi' + 1))' = 0 for a = 1 | 4."""
    y = np.asarray(y) % 1.0
    return np.where(y < 0.5, 0.6 * (y - 0.25), -0.6 * (y - 0.75))


@pytest.fixture(scope="module")
def layered64(layered):
    g = build_cell_grid(64, layered)
    cells, a_hom = solve_cell_problems(g, layered, scheme="galerkin")
    return g, cells, a_hom


@pytest.fixture(scope="module")
def trig_family(trig):
    out = {}
    for n in (32, 64, 128):
        g = build_cell_grid(n)
        out[n] = solve_cell_problems(g, trig, scheme="galerkin")
    return out


class TestIdentity:
    def test_all_fields_vanish(self):
        g = build_cell_grid(8)
        cells, a_hom = solve_cell_problems(g, CoefficientField.identity())
        assert np.abs(a_hom.matrix - np.eye(2)).max() <= 1e-10
        assert not cells.chi.any() and not cells.chi2.any()
        assert np.allclose(cells.b.pointwise, -np.eye(2)[:, :, None, None])
        assert not cells.b.flux.any()
        assert np.allclose(cells.b.average, -a_hom.matrix)


class TestLayered:
    def test_chi_exact(self, layered64):
        g, cells, _ = layered64
        y1 = (np.arange(64 ** 2) % 64) / 64
        assert np.abs(cells.chi[0] - layered_chi1(y1)).max() <= 1e-10
        assert np.abs(cells.chi[1]).max() <= 1e-10

    def test_tensor(self, layered64):
        _, _, a_hom = layered64
        assert np.abs(a_hom.matrix - LAYERED_HOM).max() <= 1e-10
        assert a_hom.is_symmetric and a_hom.is_elliptic

    def test_flux_constancy(self, layered64, layered):
        g, cells, _ = layered64
        a = coefficient_at_quadrature(g, layered)[..., 0, 0]
        flux = a * (cells.grad_chi[0][..., 0] + 1)
        assert np.abs(flux - 8 / 5).max() <= 1e-8

    def test_b_average(self, layered64):
        _, cells, a_hom = layered64
        assert abs(cells.b.average[0, 0] + 8 / 5) <= 1e-8
        assert np.abs(cells.b.average + a_hom.matrix).max() <= 1e-8
        assert np.abs(cells.b.divergence_average).max() <= 1e-10

    def test_second_cell_vs_dense(self, layered):
        g = build_cell_grid(16, layered)
        cells, a_hom = solve_cell_problems(g, layered, scheme="galerkin")
        Kp = np.linalg.pinv(dense(assemble_stiffness(g, layered)))
        loads = _galerkin_loads(g, cells.b, a_hom)
        for i in range(2):
            for j in range(2):
                ref = Kp @ loads[i, j]
                ref -= ref.mean()
                assert np.abs(cells.chi2[i, j] - ref).max() <= 1e-8


class TestTrig:
    def test_self_convergence_chi(self, trig_family):
        def at_coarse(n, vals, m):
            ij = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="xy"), -1).reshape(-1, 2) * (n // m)
            return vals[..., ij[:, 0] + n * ij[:, 1]]

        e1 = np.abs(at_coarse(64, trig_family[64][0].chi, 32) - trig_family[32][0].chi).max()
        e2 = np.abs(at_coarse(128, trig_family[128][0].chi, 32) - at_coarse(64, trig_family[64][0].chi, 32)).max()
        assert 3.0 < e1 / e2 < 5.0
        f1 = np.abs(at_coarse(64, trig_family[64][0].chi2, 32) - trig_family[32][0].chi2).max()
        f2 = np.abs(at_coarse(128, trig_family[128][0].chi2, 32) - at_coarse(64, trig_family[64][0].chi2, 32)).max()
        assert 3.0 < f1 / f2 < 5.0

    def test_tensor_isotropic_and_bounded(self, trig_family):
        a = trig_family[64][1]
        assert abs(a.matrix[0, 1]) < 1e-10 and abs(a.matrix[0, 0] - a.matrix[1, 1]) < 1e-10
        # between the harmonic and arithmetic means of a(y)
        assert 1.7 < a.matrix[0, 0] < 2.0
        assert a.is_elliptic

    def test_energy_form_agrees(self, trig_family, trig):
        g = build_cell_grid(64)
        cells, a_hom = trig_family[64]
        assert np.abs(energy_tensor(g, trig, cells) - a_hom.matrix).max() <= 1e-8

    def test_stencil_solvability_matches_galerkin_tensor(self, trig_family, trig):
        g = build_cell_grid(32)
        cells, a_hom = trig_family[32]
        assert np.abs(stencil_homogenized_tensor(g, trig, cells) - a_hom.matrix).max() <= 1e-10

    def test_schemes_share_their_limit(self, trig):
        diffs = []
        for n in (16, 32):
            g = build_cell_grid(n)
            gal, _ = solve_cell_problems(g, trig, scheme="galerkin")
            sten = solve_second_cell(g, trig, replace(gal, chi2=None), scheme="stencil")
            sym = 0.5 * (gal.chi2 + gal.chi2.transpose(1, 0, 2))
            diffs.append(np.abs(sten.chi2 - sym).max())
        assert diffs[1] < 0.5 * diffs[0]


class TestInvariants:
    @pytest.mark.parametrize("scheme", ["galerkin", "stencil"])
    def test_zero_mean_and_periodicity(self, trig, scheme):
        g = build_cell_grid(16)
        cells, _ = solve_cell_problems(g, trig, scheme=scheme)
        w = np.asarray(assemble_mass(g).sum(axis=1)).ravel()
        for field in list(cells.chi) + list(cells.chi2.reshape(4, -1)):
            assert abs(w @ field) <= 1e-10
            raw = cells.nodal(field)
            for node, partner in g.periodic_pairs.items():
                assert raw[node] == raw[partner]

    def test_scaling(self, trig):
        g = build_cell_grid(16)
        c1, a1 = solve_cell_problems(g, trig, second_order=False)
        c2, a2 = solve_cell_problems(g, trig.scaled(2.5), second_order=False)
        assert np.allclose(a2.matrix, 2.5 * a1.matrix, rtol=1e-12, atol=1e-14)
        assert np.abs(c1.chi - c2.chi).max() <= 1e-9

    def test_needs_periodic_grid(self, trig):
        with pytest.raises(GridIncompatibility):
            solve_first_cell(build_domain_grid(8), trig)

    def test_average_mismatch_detected(self, trig):
        g = build_cell_grid(8)
        cells = solve_first_cell(g, trig)
        wrong = HomogenizedTensor(np.eye(2), np.ones(2), 1.0, 3.0)
        with pytest.raises(Inconsistency):
            compute_b(g, trig, cells, wrong)

    def test_unknown_scheme(self, trig):
        g = build_cell_grid(8)
        with pytest.raises(ValueError):
            solve_second_cell(g, trig, solve_first_cell(g, trig), scheme="spectral")

    def test_homogenized_tensor_helpers(self, trig):
        g = build_cell_grid(8)
        cells = solve_first_cell(g, trig)
        a = homogenized_tensor(g, trig, cells)
        assert isinstance(a.as_coefficient(), CoefficientField)
        assert np.allclose(a.as_coefficient().evaluate(np.zeros(2)), a.matrix)
