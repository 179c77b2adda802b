"""First- and second-order cell problems on the periodic unit cell.

All cell fields are stored per periodic class (``grid.n**2`` values) and
gradients per Gauss point. The divergence part of the second-order source
``b_ij`` is never differentiated numerically: it is carried as the flux
``A_ik chi_j`` and moved onto the test function.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from homogbl.assembly import (
    apply_periodic_zero_mean,
    assemble_flux_load,
    assemble_source_load,
    assemble_stiffness,
    coefficient_at_quadrature,
    element_stiffness,
    nodal_at_quadrature,
    nodal_gradients,
)
from homogbl.errors import GridIncompatibility, IncompatibleRHS, Inconsistency
from homogbl.grid import CoefficientField, Grid
from homogbl.solver import SolverConfig, solve_system

B_AVERAGE_TOL = 1e-6


@dataclass(frozen=True)
class HomogenizedTensor:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    m: float
    M: float

    @property
    def is_symmetric(self) -> bool:
        return abs(self.matrix[0, 1] - self.matrix[1, 0]) <= 1e-10 * np.abs(self.matrix).max()

    @property
    def is_elliptic(self) -> bool:
        tol = 1e-10 * self.M
        return bool(self.eigenvalues[0] >= self.m - tol and self.eigenvalues[1] <= self.M + tol)

    def as_coefficient(self) -> CoefficientField:
        return CoefficientField.constant(self.matrix)


@dataclass(frozen=True)
class BData:
    """Second-order source ``b_ij = pointwise_ij - d/dy_k (flux_ij)_k``.

    ``pointwise`` has shape (2, 2, E, 4) and ``flux`` (2, 2, E, 4, 2).
    """

    pointwise: np.ndarray
    flux: np.ndarray
    average: np.ndarray  # M_Y(b_ij) from the pointwise part
    divergence_average: np.ndarray  # quadrature realisation of M_Y(div flux)


@dataclass(frozen=True)
class CellSolutions:
    grid: Grid
    coeff: CoefficientField
    chi: np.ndarray  # (2, n**2)
    grad_chi: np.ndarray  # (2, E, 4, 2)
    chi2: np.ndarray | None = None  # (2, 2, n**2)
    grad_chi2: np.ndarray | None = None
    b: BData | None = None

    def nodal(self, values: np.ndarray) -> np.ndarray:
        """Expand class values to all ``(n + 1)**2`` raw nodes."""
        return values[..., self.grid.periodic_map]

    def mean(self, values: np.ndarray) -> np.ndarray:
        return values.mean(axis=-1)


def _check_grid(grid: Grid):
    if not grid.is_periodic:
        raise GridIncompatibility("cell problems need a cell-periodic grid")


def solve_first_cell(grid: Grid, coeff: CoefficientField, cfg: SolverConfig = SolverConfig()) -> CellSolutions:
    """Solve ``-div_y(A (grad chi_j + e_j)) = 0`` for ``j = 1, 2`` in ``W_per(Y)``."""
    _check_grid(grid)
    K = assemble_stiffness(grid, coeff)
    A_q = coefficient_at_quadrature(grid, coeff)
    chi = np.empty((2, grid.dof_count))
    for j in range(2):
        load = -assemble_flux_load(grid, A_q[..., :, j])
        chi[j] = solve_system(apply_periodic_zero_mean(K, load, grid), cfg)
    grad = np.stack([nodal_gradients(grid, c) for c in chi])
    return CellSolutions(grid, coeff, chi, grad)


def _unit_strain_fluxes(cells: CellSolutions, A_q):
    # column j: A (e_j + grad chi_j) at every Gauss point, shape (E, 4, 2, 2)
    strain = np.moveaxis(cells.grad_chi, 0, -1) + np.eye(2)
    return np.einsum("eqik,eqkj->eqij", A_q, strain), strain


def homogenized_tensor(grid: Grid, coeff: CoefficientField, cells: CellSolutions) -> HomogenizedTensor:
    """Cell average of ``A_ij + A_ik d chi_j / dy_k``."""
    A_q = coefficient_at_quadrature(grid, coeff)
    flux, _ = _unit_strain_fluxes(cells, A_q)
    a_hom = flux.mean(axis=(0, 1))
    return HomogenizedTensor(a_hom, np.linalg.eigvalsh(0.5 * (a_hom + a_hom.T)), coeff.m, coeff.M)


def energy_tensor(grid: Grid, coeff: CoefficientField, cells: CellSolutions) -> np.ndarray:
    """The equivalent energy form ``M_Y((grad chi_i + e_i) . A (grad chi_j + e_j))``."""
    A_q = coefficient_at_quadrature(grid, coeff)
    flux, strain = _unit_strain_fluxes(cells, A_q)
    return np.einsum("eqki,eqkj->ij", strain, flux) / (grid.element_count * 4)


def compute_b(grid: Grid, coeff: CoefficientField, cells: CellSolutions,
              a_hom: HomogenizedTensor | None = None) -> BData:
    A_q = coefficient_at_quadrature(grid, coeff)
    flux, _ = _unit_strain_fluxes(cells, A_q)
    pointwise = -np.moveaxis(flux, (2, 3), (0, 1))  # -(A_ij + A_ik d_k chi_j)
    chi_q = np.stack([nodal_at_quadrature(grid, c) for c in cells.chi])  # (2, E, 4)
    # flux[i, j, e, q, k] = A_ik chi_j
    bflux = np.einsum("eqik,jeq->ijeqk", A_q, chi_q)
    average = pointwise.mean(axis=(2, 3))
    # int div(F) = sum over elements of the boundary flux; on the periodic cell
    # it is realised by pairing F with grad(1) = 0
    ones = np.ones(grid.dof_count)
    div_avg = np.array([[ones @ assemble_flux_load(grid, bflux[i, j]) for j in range(2)]
                        for i in range(2)])
    if a_hom is None:
        a_hom = homogenized_tensor(grid, coeff, cells)
    mismatch = np.abs(average + a_hom.matrix).max()
    if mismatch > B_AVERAGE_TOL:
        raise Inconsistency(f"M_Y(b) differs from -A_hom by {mismatch:.3e}")
    return BData(pointwise, bflux, average, div_avg)


SCHEMES = ("galerkin", "stencil")


def _galerkin_loads(grid, b: BData, a_hom: HomogenizedTensor):
    loads = np.empty((2, 2, grid.dof_count))
    for i in range(2):
        for j in range(2):
            source = b.pointwise[i, j] + a_hom.matrix[i, j]
            loads[i, j] = -assemble_source_load(grid, source) - assemble_flux_load(grid, b.flux[i, j])
    return loads


def _stencil_loads(grid, coeff, cells: CellSolutions, a_hom: HomogenizedTensor):
    # (K chi_ij)_p = -A_hom_ij |supp| - sum_q K_pq [d_i d_j / 2 + (chi_j(q) d_i + chi_i(q) d_j) / 2]
    # with d = y_q - y_p taken inside each element, i.e. the second-order term of
    # the assembled operator applied to u0 + eps chi_j d_j u0 + eps^2 chi_ij d_ij u0
    Ke = element_stiffness(grid, coefficient_at_quadrature(grid, coeff))
    corners = np.array([[0, 0], [1, 0], [1, 1], [0, 1]]) * grid.h
    d = corners[None, :, :] - corners[:, None, :]
    chi_e = cells.chi[:, grid.element_dofs]
    weights = np.bincount(grid.element_dofs.ravel(), minlength=grid.dof_count) * grid.h ** 2 / 4
    dofs = grid.element_dofs.ravel()
    loads = np.empty((2, 2, grid.dof_count))
    for i in range(2):
        for j in range(2):
            moment = np.einsum("eab,ab->ea", Ke, 0.5 * d[..., i] * d[..., j])
            cross = 0.5 * (np.einsum("eab,eb,ab->ea", Ke, chi_e[j], d[..., i])
                           + np.einsum("eab,eb,ab->ea", Ke, chi_e[i], d[..., j]))
            r = np.bincount(dofs, (moment + cross).ravel(), minlength=grid.dof_count)
            loads[i, j] = -r - a_hom.matrix[i, j] * weights
    return loads


def stencil_homogenized_tensor(grid: Grid, coeff: CoefficientField, cells: CellSolutions) -> np.ndarray:
    """Homogenized tensor implied by the stencil scheme's solvability condition."""
    zero = HomogenizedTensor(np.zeros((2, 2)), np.zeros(2), coeff.m, coeff.M)
    return _stencil_loads(grid, coeff, cells, zero).sum(axis=-1)


def solve_second_cell(grid: Grid, coeff: CoefficientField, cells: CellSolutions,
                      cfg: SolverConfig = SolverConfig(), scheme: str = "galerkin") -> CellSolutions:
    """Solve ``div_y(A grad chi_ij) = b_ij + A_hom_ij`` in ``W_per(Y)``.

    ``scheme="galerkin"`` uses the weak form
    ``int A grad chi_ij . grad psi = -int (p_ij + A_hom_ij) psi - int A_ik chi_j d_k psi``
    with ``p_ij`` the pointwise part of ``b_ij``.

    ``scheme="stencil"`` builds the right side from moments of the assembled
    stiffness instead. It is the second-order cell problem of the discrete
    operator itself, so fine-grid Q1 solutions on meshes with the same points
    per period carry no ``O(eps h^2 / eps^2)`` consistency defect against it.
    It returns the symmetric part ``(chi_ij + chi_ji) / 2``, which is all the
    expansion ``chi_ij d_ij u0`` sees. Both schemes converge to the same limit.
    """
    _check_grid(grid)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    a_hom = homogenized_tensor(grid, coeff, cells)
    try:
        b = cells.b if cells.b is not None else compute_b(grid, coeff, cells, a_hom)
    except Inconsistency as exc:
        raise IncompatibleRHS(str(exc)) from exc
    if scheme == "galerkin":
        loads = _galerkin_loads(grid, b, a_hom)
    else:
        loads = _stencil_loads(grid, coeff, cells, a_hom)
    K = assemble_stiffness(grid, coeff)
    chi2 = np.empty((2, 2, grid.dof_count))
    for i in range(2):
        for j in range(2):
            chi2[i, j] = solve_system(apply_periodic_zero_mean(K, loads[i, j], grid), cfg)
    grad2 = np.stack([np.stack([nodal_gradients(grid, chi2[i, j]) for j in range(2)])
                      for i in range(2)])
    return replace(cells, chi2=chi2, grad_chi2=grad2, b=b)


def solve_cell_problems(grid: Grid, coeff: CoefficientField, cfg: SolverConfig = SolverConfig(),
                        second_order: bool = True, scheme: str = "galerkin"):
    """Convenience driver: ``(cells, a_hom)`` with both cell orders solved."""
    cells = solve_first_cell(grid, coeff, cfg)
    a_hom = homogenized_tensor(grid, coeff, cells)
    if second_order:
        cells = replace(cells, b=compute_b(grid, coeff, cells, a_hom))
        cells = solve_second_cell(grid, coeff, cells, cfg, scheme)
    return cells, a_hom
