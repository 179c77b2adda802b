"""Q1 finite element assembly on structured grids and constraint handling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from homogbl.errors import BadConstraint, IncompatibleRHS, MissingScale
from homogbl.grid import GRAD_AT_GAUSS, SHAPE_AT_GAUSS, CoefficientField, Grid, sample_coefficient


def _finalize(grid: Grid, local: np.ndarray) -> sp.csr_matrix:
    dofs = grid.element_dofs
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    n = grid.dof_count
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def element_gradients(grid: Grid) -> np.ndarray:
    """Physical shape-function gradients at the Gauss points, shape (4q, 4a, 2)."""
    return GRAD_AT_GAUSS * grid.n


def coefficient_at_quadrature(grid: Grid, coeff: CoefficientField, eps=None) -> np.ndarray:
    if grid.is_periodic:
        return sample_coefficient(coeff, grid.quadrature_points)
    if eps is None and coeff.is_oscillatory:
        raise MissingScale(f"{coeff.family} coefficient on the domain needs eps")
    return sample_coefficient(coeff, grid.quadrature_points, eps)


def element_stiffness(grid: Grid, A_q: np.ndarray) -> np.ndarray:
    """Local stiffness blocks from coefficient samples ``A_q`` of shape (E, 4, 2, 2)."""
    G = element_gradients(grid)
    local = np.einsum("qak,eqkl,qbl->eab", G, A_q, G) * grid.quadrature_weight
    return 0.5 * (local + local.transpose(0, 2, 1))


def assemble_stiffness(grid: Grid, coeff: CoefficientField, eps: float | None = None) -> sp.csr_matrix:
    """Stiffness matrix of ``-div(A(x/eps) grad u)`` with 2x2 Gauss quadrature.

    On a cell grid the matrix acts on periodic classes and ``eps`` is ignored.
    """
    A_q = coefficient_at_quadrature(grid, coeff, eps)
    return _finalize(grid, element_stiffness(grid, A_q))


def assemble_mass(grid: Grid) -> sp.csr_matrix:
    w = grid.quadrature_weight
    local = np.einsum("qa,qb->ab", SHAPE_AT_GAUSS, SHAPE_AT_GAUSS) * w
    return _finalize(grid, np.broadcast_to(local, (grid.element_count, 4, 4)))


def assemble_load(grid: Grid, f) -> np.ndarray:
    """``int f phi_i`` for a vectorised callable ``f(x)`` with ``x`` of shape (..., 2)."""
    vals = np.asarray(f(grid.quadrature_points), dtype=float)
    vals = np.broadcast_to(vals, grid.quadrature_points.shape[:2])
    local = np.einsum("eq,qa->ea", vals, SHAPE_AT_GAUSS) * grid.quadrature_weight
    return np.bincount(grid.element_dofs.ravel(), local.ravel(), minlength=grid.dof_count)


def assemble_flux_load(grid: Grid, G_q: np.ndarray) -> np.ndarray:
    """``int G . grad phi_i`` for a vector field sampled at Gauss points, shape (E, 4, 2)."""
    local = np.einsum("eqk,qak->ea", G_q, element_gradients(grid)) * grid.quadrature_weight
    return np.bincount(grid.element_dofs.ravel(), local.ravel(), minlength=grid.dof_count)


def assemble_source_load(grid: Grid, s_q: np.ndarray) -> np.ndarray:
    """``int s phi_i`` for a scalar field sampled at Gauss points, shape (E, 4)."""
    local = np.einsum("eq,qa->ea", s_q, SHAPE_AT_GAUSS) * grid.quadrature_weight
    return np.bincount(grid.element_dofs.ravel(), local.ravel(), minlength=grid.dof_count)


def nodal_gradients(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Gradient of a Q1 field at every Gauss point, shape (E, 4, 2).

    ``values`` is indexed like the grid's unknowns (periodic classes on a cell grid).
    """
    local = values[grid.element_dofs]
    return np.einsum("ea,qak->eqk", local, element_gradients(grid))


def nodal_at_quadrature(grid: Grid, values: np.ndarray) -> np.ndarray:
    return values[grid.element_dofs] @ SHAPE_AT_GAUSS.T


@dataclass(frozen=True)
class BoundaryCondition:
    """Dirichlet data on a domain grid, or the periodic zero-mean constraint."""

    kind: str
    grid: Grid
    nodes: np.ndarray | None = None
    values: np.ndarray | None = None

    @classmethod
    def dirichlet(cls, grid: Grid, values=0.0):
        if grid.is_periodic:
            raise BadConstraint("Dirichlet data needs a domain grid")
        nodes = grid.boundary_nodes
        if callable(values):
            values = values(grid.coords[nodes])
        vals = np.broadcast_to(np.asarray(values, dtype=float), nodes.shape).copy()
        return cls("dirichlet", grid, nodes, vals)

    @classmethod
    def periodic_zero_mean(cls, grid: Grid):
        if not grid.is_periodic:
            raise BadConstraint("zero-mean periodic constraint needs a cell grid")
        return cls("periodic-zero-mean", grid)


@dataclass(frozen=True)
class ReducedSystem:
    """Interior system left after lifting Dirichlet data."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    interior: np.ndarray
    bc: BoundaryCondition

    def expand(self, x_interior: np.ndarray) -> np.ndarray:
        full = np.zeros(self.bc.grid.node_count)
        full[self.interior] = x_interior
        full[self.bc.nodes] = self.bc.values
        return full


def apply_dirichlet(K: sp.csr_matrix, load: np.ndarray, bc: BoundaryCondition) -> ReducedSystem:
    """Eliminate boundary unknowns; the lifting ``K_IB g`` is moved to the right side."""
    if bc.kind != "dirichlet":
        raise BadConstraint(f"expected Dirichlet data, got {bc.kind}")
    grid = bc.grid
    boundary = grid.boundary_nodes
    if bc.nodes.shape != boundary.shape or np.any(np.sort(bc.nodes) != boundary):
        raise BadConstraint("Dirichlet nodes must be exactly the grid boundary")
    if K.shape != (grid.node_count, grid.node_count):
        raise BadConstraint("matrix and grid sizes differ")
    interior = grid.interior_nodes
    K_I = K[interior]
    K_II = K_I[:, interior].tocsr()
    rhs = load[interior] - K_I[:, bc.nodes] @ bc.values
    return ReducedSystem(K_II, rhs, interior, bc)


def reduction(K: sp.csr_matrix, grid: Grid):
    """Pre-split ``K`` into interior and boundary-coupling blocks for repeated solves."""
    interior = grid.interior_nodes
    K_I = K[interior]
    return K_I[:, interior].tocsr(), K_I[:, grid.boundary_nodes].tocsr()


@dataclass(frozen=True)
class PeriodicSystem:
    """Singular periodic system restricted to zero-mean fields."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    weights: np.ndarray  # lumped mass of each periodic class

    def project(self, x: np.ndarray) -> np.ndarray:
        return x - (self.weights @ x) / self.weights.sum()

    def mean(self, x: np.ndarray) -> float:
        return float(self.weights @ x / self.weights.sum())


def apply_periodic_zero_mean(K: sp.csr_matrix, load: np.ndarray, grid: Grid, tol: float = 1e-10) -> PeriodicSystem:
    if not grid.is_periodic:
        raise BadConstraint("zero-mean periodic constraint needs a cell grid")
    total = float(np.sum(load))
    if abs(total) > tol * max(1.0, float(np.abs(load).sum())):
        raise IncompatibleRHS(f"periodic load has nonzero sum {total:.3e}")
    weights = np.asarray(assemble_mass(grid).sum(axis=1)).ravel()
    return PeriodicSystem(K, load - total / load.size, weights)
