"""Periodic unfolding, cell averages, the Q_eps interpolant and the boundary cutoff.

Scales are restricted to ``eps = 1/K`` with integer ``K`` so the unit square is
tiled exactly by the cells ``eps * (xi + Y)``. Cells are numbered
``c = xi_1 + K * xi_2``. Fields are either vectorised callables ``f(x)`` with
``x`` of shape (..., 2), or :class:`NodalField` instances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from homogbl.assembly import nodal_gradients
from homogbl.errors import UnsupportedScale
from homogbl.grid import GRAD_AT_GAUSS, Grid, build_cell_grid, build_domain_grid, shape_gradients, shape_values


def reciprocal_integer(eps: float, tol: float = 1e-12) -> int:
    """Return ``K = 1/eps``; raise unless ``K`` is an integer."""
    if not eps > 0:
        raise UnsupportedScale(f"eps must be positive, got {eps}")
    k = int(round(1.0 / eps))
    if k < 1 or abs(k * eps - 1.0) > tol:
        raise UnsupportedScale(f"eps={eps} is not the reciprocal of an integer")
    return k


@dataclass(frozen=True)
class NodalField:
    """Continuous Q1 field given by its node values on a domain grid."""

    grid: Grid
    values: np.ndarray

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        n = self.grid.n
        u = x * n
        e = np.clip(np.floor(u).astype(int), 0, n - 1)
        return self._corner_nodes(e), u - e

    def _corner_nodes(self, e):
        i, j = e[..., 0], e[..., 1]
        g = self.grid
        return np.stack([g.node_index(i, j), g.node_index(i + 1, j),
                         g.node_index(i + 1, j + 1), g.node_index(i, j + 1)], axis=-1)

    def __call__(self, x) -> np.ndarray:
        nodes, st = self._locate(x)
        N = shape_values(st[..., 0], st[..., 1])
        return np.sum(self.values[nodes] * N, axis=-1)

    def gradient(self, x) -> np.ndarray:
        nodes, st = self._locate(x)
        dN = shape_gradients(st[..., 0], st[..., 1]) * self.grid.n
        return np.einsum("...a,...ak->...k", self.values[nodes], dN)


def _evaluate(field, x):
    return np.asarray(field(x), dtype=float)


def _default_sample_grid(field) -> Grid:
    if isinstance(field, NodalField):
        return build_cell_grid(max(2, field.grid.n))
    return build_cell_grid(8)


def _cell_origins(k: int, extra: int = 0) -> np.ndarray:
    idx = np.arange(k + extra)
    x1, x2 = np.meshgrid(idx, idx, indexing="xy")
    return np.stack([x1.ravel(), x2.ravel()], axis=-1)


@dataclass(frozen=True)
class UnfoldedField:
    """Samples of ``T_eps(phi)(xi, y) = phi(eps * xi + eps * y)``.

    ``values[c, s]`` belongs to cell ``cells[c]`` and reference point ``points[s]``.
    """

    eps: float
    k: int
    cells: np.ndarray
    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def __mul__(self, other: UnfoldedField) -> UnfoldedField:
        if other.values.shape != self.values.shape or other.eps != self.eps:
            raise ValueError("unfolded fields live on different samplings")
        return UnfoldedField(self.eps, self.k, self.cells, self.points, self.weights,
                             self.values * other.values)

    def cell_means(self) -> np.ndarray:
        return self.values @ self.weights / self.weights.sum()


def _sample_layout(sample_grid: Grid):
    pts = sample_grid.quadrature_points.reshape(-1, 2)
    w = np.full(len(pts), sample_grid.quadrature_weight)
    return pts, w


def unfold(field, eps: float, sample_grid: Grid | None = None) -> UnfoldedField:
    """Sample the unfolded field at the Gauss points of ``sample_grid`` in every cell."""
    k = reciprocal_integer(eps)
    if sample_grid is None:
        sample_grid = _default_sample_grid(field)
    pts, w = _sample_layout(sample_grid)
    cells = _cell_origins(k)
    x = (cells[:, None, :] + pts[None, :, :]) / k
    return UnfoldedField(1.0 / k, k, cells, pts, w, _evaluate(field, x))


def integrate_unfolded(u: UnfoldedField) -> float:
    """``(1/|Y|) int_{Omega x Y} T_eps(u)``, which equals ``int_Omega u`` on a tiled square."""
    return float(u.eps ** 2 * np.sum(u.values @ u.weights))


def gradient_rule_check(field, eps: float, sample_grid: Grid | None = None, grad=None) -> float:
    """Largest deviation ``|grad_y T_eps(u) - eps T_eps(grad_x u)|`` over interior Gauss points.

    For a :class:`NodalField` the left side is obtained by rebuilding each
    unfolded cell as a Q1 function on ``sample_grid`` (exact when the sample grid
    refines the field's mesh). For a callable it is taken by complex-step
    differentiation in ``y``, so ``field`` must accept complex input and ``grad``
    must be supplied.
    """
    k = reciprocal_integer(eps)
    if sample_grid is None:
        sample_grid = _default_sample_grid(field)
    pts, _ = _sample_layout(sample_grid)
    cells = _cell_origins(k)
    x = (cells[:, None, :] + pts[None, :, :]) / k
    if isinstance(field, NodalField):
        m = field.grid.n // k
        if field.grid.n % k or sample_grid.n % m:
            raise UnsupportedScale("sample grid must refine the field mesh inside every cell")
        node_x = (cells[:, None, :] + sample_grid.coords[None, :, :]) / k
        local = field(node_x)[:, sample_grid.elements]  # (C, E, 4a)
        grad_y = np.einsum("cea,qak->ceqk", local, GRAD_AT_GAUSS * sample_grid.n)
        grad_y = grad_y.reshape(len(cells), -1, 2)
        ref = eps * field.gradient(x)
    else:
        if grad is None:
            raise ValueError("an analytic field needs its gradient")
        step = 1e-30
        grad_y = np.stack([
            np.imag(field((cells[:, None, :] + pts[None, :, :] + 1j * step * e) / k)) / step
            for e in np.eye(2)], axis=-1)
        ref = eps * np.asarray(grad(x), dtype=float)
    return float(np.abs(grad_y - ref).max())


@dataclass(frozen=True)
class CellAverageField:
    """``M_Y^eps(phi)`` per cell; ``averages[xi_1, xi_2]``."""

    eps: float
    averages: np.ndarray

    def at(self, x) -> np.ndarray:
        """Piecewise-constant evaluation with the half-open cell convention."""
        x = np.asarray(x, dtype=float)
        k = self.averages.shape[0]
        xi = np.clip(np.floor(x * k).astype(int), 0, k - 1)
        return self.averages[xi[..., 0], xi[..., 1]]


def _means(field, k: int, sample_grid: Grid, extra: int = 0) -> np.ndarray:
    pts, w = _sample_layout(sample_grid)
    cells = _cell_origins(k, extra)
    vals = _evaluate(field, (cells[:, None, :] + pts[None, :, :]) / k)
    means = vals @ w / w.sum()
    side = k + extra
    return means.reshape(side, side).T  # -> [xi_1, xi_2]


def cell_average(field, eps: float, sample_grid: Grid | None = None) -> CellAverageField:
    k = reciprocal_integer(eps)
    if sample_grid is None:
        sample_grid = _default_sample_grid(field)
    return CellAverageField(1.0 / k, _means(field, k, sample_grid))


@dataclass(frozen=True)
class QInterpolant:
    """Multilinear interpolation of cell averages placed at cell corners.

    ``averages`` has shape (K + 1, K + 1): the last row and column hold the
    averages of the cells just outside the square.
    """

    eps: float
    averages: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        k = self.averages.shape[0] - 1
        u = x * k
        xi = np.clip(np.floor(u).astype(int), 0, k - 1)
        t = u - xi
        a = self.averages
        i, j = xi[..., 0], xi[..., 1]
        s, r = t[..., 0], t[..., 1]
        a00, a10, a01, a11 = a[i, j], a[i + 1, j], a[i, j + 1], a[i + 1, j + 1]
        # difference form: reproduces constants without rounding
        return a00 + s * (a10 - a00) + r * (a01 - a00) + s * r * (a11 - a10 - a01 + a00)


def q_interp(field, eps: float, sample_grid: Grid | None = None) -> QInterpolant:
    """``Q_eps(phi)``: continuous, multilinear in each cell, built from cell averages.

    Averages of the exterior cells come from evaluating an analytic field beyond
    the square, or from the nearest interior cell for a :class:`NodalField`.
    """
    k = reciprocal_integer(eps)
    if sample_grid is None:
        sample_grid = _default_sample_grid(field)
    if isinstance(field, NodalField):
        inner = _means(field, k, sample_grid)
        avg = np.pad(inner, ((0, 1), (0, 1)), mode="edge")
    else:
        avg = _means(field, k, sample_grid, extra=1)
    return QInterpolant(1.0 / k, avg)


def distance_to_boundary(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.minimum(np.minimum(x[..., 0], 1 - x[..., 0]), np.minimum(x[..., 1], 1 - x[..., 1]))


def rho_cutoff(eps: float):
    """``rho_eps(x) = min(dist(x, boundary) / eps, 1)`` as a callable."""
    if not eps > 0:
        raise UnsupportedScale("eps must be positive")

    def rho(x):
        return np.minimum(distance_to_boundary(x) / eps, 1.0)

    return rho


def strip_measure(eps: float, n: int) -> float:
    """Area of ``{dist(x, boundary) < eps}`` by midpoint sums on an aligned n x n grid."""
    g = np.arange(n)
    c1, c2 = np.meshgrid((g + 0.5) / n, (g + 0.5) / n, indexing="xy")
    centers = np.stack([c1, c2], axis=-1)
    return float(np.count_nonzero(distance_to_boundary(centers) < eps)) / (n * n)


@dataclass(frozen=True)
class AveragingRatios:
    eps: float
    mean_defect: float  # |v - M v| / (eps |grad v|)
    unfold_defect: float  # |v - T v|_{Omega x Y} / (eps |grad v|)
    q_defect: float  # |Q v - M v| / (eps |grad v|)


def averaging_ratios(v, grad_v, eps: float, sample_grid: Grid | None = None,
                     inner_grid: Grid | None = None) -> AveragingRatios:
    """Normalised defects of the averaging operators for a smooth field ``v``."""
    k = reciprocal_integer(eps)
    sample_grid = sample_grid or build_cell_grid(8)
    inner_grid = inner_grid or build_cell_grid(2)
    u = unfold(v, eps, sample_grid)
    means = u.cell_means()
    pts = u.points
    x = (u.cells[:, None, :] + pts[None, :, :]) / k
    w = u.weights * eps ** 2
    mean_sq = np.sum((u.values - means[:, None]) ** 2 @ w)
    grad_sq = np.sum(np.sum(np.asarray(grad_v(x)) ** 2, axis=-1) @ w)
    # |v(x) - v(eps[x/eps] + eps y)|^2 integrated over x in Omega and y in Y
    inner = unfold(v, eps, inner_grid)
    diff = u.values[:, :, None] - inner.values[:, None, :]
    unf_sq = np.einsum("cst,s,t->", diff ** 2, w, inner.weights)
    q = q_interp(v, eps, sample_grid)
    q_sq = np.sum((q(x) - means[:, None]) ** 2 @ w)
    scale = eps * np.sqrt(grad_sq)
    return AveragingRatios(eps, np.sqrt(mean_sq) / scale, np.sqrt(unf_sq) / scale,
                           np.sqrt(q_sq) / scale)


def local_average_inequality_check(phi_grid: Grid, phi_values: np.ndarray, psi, grad_psi,
                                   eps: float) -> float:
    """``int |grad_y Phi(x/eps)|^2 (psi - M_eps psi)^2 dx / (eps^2 |psi|_{H^1}^2)``.

    ``phi_values`` are class values of a Q1 field on the periodic ``phi_grid``;
    its elementwise gradients are paired with ``psi`` at the same Gauss points.
    """
    k = reciprocal_integer(eps)
    grad_phi = nodal_gradients(phi_grid, phi_values).reshape(-1, 2)
    g2 = np.sum(grad_phi ** 2, axis=-1)
    u = unfold(psi, eps, phi_grid)
    x = (u.cells[:, None, :] + u.points[None, :, :]) / k
    w = u.weights * eps ** 2
    dev = u.values - u.cell_means()[:, None]
    lhs = np.sum((dev ** 2 * g2[None, :]) @ w)
    h1_sq = np.sum((u.values ** 2 + np.sum(np.asarray(grad_psi(x)) ** 2, axis=-1)) @ w)
    return float(lhs / (eps ** 2 * h1_sq))


@dataclass(frozen=True)
class IdentityErrors:
    eps: float
    product: float
    integration: float
    gradient: float


def identity_errors(v, w, grad_v, eps: float, sample_grid: Grid | None = None) -> IdentityErrors:
    """Deviations of the product rule, the integration identity and the gradient rule.

    ``v`` and ``w`` are callables; ``v`` must accept complex points. The
    integration identity is checked against the composite Gauss rule of the
    fine domain grid that has the same points.
    """
    k = reciprocal_integer(eps)
    sample_grid = sample_grid or build_cell_grid(8)
    tv, tw = unfold(v, eps, sample_grid), unfold(w, eps, sample_grid)
    tvw = unfold(lambda x: _evaluate(v, x) * _evaluate(w, x), eps, sample_grid)
    product = float(np.abs((tv * tw).values - tvw.values).max())
    fine = build_domain_grid(k * sample_grid.n)
    direct = _evaluate(v, fine.quadrature_points).sum() * fine.quadrature_weight
    integration = abs(integrate_unfolded(tv) - float(direct))
    return IdentityErrors(eps, product, integration, gradient_rule_check(v, eps, sample_grid, grad_v))
