"""Structured quadrilateral grids on the unit square and periodic coefficient fields.

Nodes are numbered lexicographically, ``index = i + (n + 1) * j`` with
coordinates ``(i / n, j / n)``. Elements are numbered ``ex + n * ey`` and list
their corners counter-clockwise starting at the lower-left node.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from homogbl.errors import InterfaceMisalignment, InvalidResolution

CELL = "cell-periodic"
DOMAIN = "domain-dirichlet"

# 2-point Gauss-Legendre abscissae on [0, 1]
GAUSS_1D = np.array([0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)])
# reference quadrature points, q = a + 2 * b with a the x1 index
GAUSS_REF = np.array([[GAUSS_1D[a], GAUSS_1D[b]] for b in range(2) for a in range(2)])
_CORNERS = np.array([[0, 0], [1, 0], [1, 1], [0, 1]])


def shape_values(s, t):
    """Bilinear shape functions on the reference square, last axis = local node."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.stack([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t], axis=-1)


def shape_gradients(s, t):
    """Reference gradients, shape (..., 4, 2)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    ds = np.stack([-(1 - t), 1 - t, t, -t], axis=-1)
    dt = np.stack([-(1 - s), -s, s, 1 - s], axis=-1)
    return np.stack([ds, dt], axis=-1)


SHAPE_AT_GAUSS = shape_values(GAUSS_REF[:, 0], GAUSS_REF[:, 1])  # (4q, 4a)
GRAD_AT_GAUSS = shape_gradients(GAUSS_REF[:, 0], GAUSS_REF[:, 1])  # (4q, 4a, 2)


@dataclass(frozen=True)
class Grid:
    """Uniform ``n x n`` quadrilateral mesh of the unit square.

    ``kind`` is either ``"cell-periodic"`` (the unit cell with opposite faces
    identified) or ``"domain-dirichlet"`` (the physical domain with a Dirichlet
    boundary).
    """

    n: int
    kind: str
    dimension: int = field(default=2, init=False)

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise InvalidResolution(f"need an integer n >= 2, got {self.n!r}")
        if self.kind not in (CELL, DOMAIN):
            raise ValueError(f"unknown grid kind {self.kind!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def node_count(self) -> int:
        return (self.n + 1) ** 2

    @property
    def element_count(self) -> int:
        return self.n * self.n

    @property
    def is_periodic(self) -> bool:
        return self.kind == CELL

    def node_index(self, i, j):
        return np.asarray(i) + (self.n + 1) * np.asarray(j)

    @cached_property
    def node_ij(self) -> np.ndarray:
        i, j = np.meshgrid(np.arange(self.n + 1), np.arange(self.n + 1), indexing="xy")
        return np.stack([i.ravel(), j.ravel()], axis=-1)

    @cached_property
    def coords(self) -> np.ndarray:
        return self.node_ij / self.n

    @cached_property
    def elements(self) -> np.ndarray:
        ex, ey = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="xy")
        ex, ey = ex.ravel(), ey.ravel()
        return np.stack(
            [self.node_index(ex + ci, ey + cj) for ci, cj in _CORNERS], axis=-1
        )

    @cached_property
    def element_ij(self) -> np.ndarray:
        ex, ey = np.meshgrid(np.arange(self.n), np.arange(self.n), indexing="xy")
        return np.stack([ex.ravel(), ey.ravel()], axis=-1)

    @cached_property
    def quadrature_points(self) -> np.ndarray:
        """Physical 2x2 Gauss points, shape (element_count, 4, 2)."""
        return (self.element_ij[:, None, :] + GAUSS_REF[None, :, :]) / self.n

    @property
    def quadrature_weight(self) -> float:
        return 0.25 * self.h * self.h

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        if self.is_periodic:
            raise AttributeError("periodic cell grids have no boundary nodes")
        ij = self.node_ij
        on = (ij == 0).any(axis=1) | (ij == self.n).any(axis=1)
        return np.flatnonzero(on)

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        ij = self.node_ij
        inside = ((ij > 0) & (ij < self.n)).all(axis=1)
        return np.flatnonzero(inside)

    @cached_property
    def periodic_map(self) -> np.ndarray:
        """Raw node -> periodic class index in ``[0, n**2)``."""
        if not self.is_periodic:
            raise AttributeError("only cell grids carry a periodic identification")
        ij = self.node_ij % self.n
        return ij[:, 0] + self.n * ij[:, 1]

    @cached_property
    def periodic_pairs(self) -> dict[int, int]:
        """Nodes on a face ``y_k = 1`` mapped to their partner with ``y_k`` reset to 0."""
        ij = self.node_ij
        pairs = {}
        for node in np.flatnonzero((ij == self.n).any(axis=1)):
            partner = np.where(ij[node] == self.n, 0, ij[node])
            pairs[int(node)] = int(self.node_index(*partner))
        return pairs

    @property
    def dof_count(self) -> int:
        return self.n * self.n if self.is_periodic else self.node_count

    @cached_property
    def dof_map(self) -> np.ndarray:
        """Raw node -> unknown index used by the assembly routines."""
        return self.periodic_map if self.is_periodic else np.arange(self.node_count)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        return self.dof_map[self.elements]


def build_cell_grid(n: int, coeff: CoefficientField | None = None) -> Grid:
    """Periodic grid of the unit cell; discontinuous coefficients need even ``n``."""
    grid = Grid(n, CELL)
    if coeff is not None and coeff.is_discontinuous and n % 2:
        raise InterfaceMisalignment(
            f"{coeff.family} interfaces at y=1/2 need an even resolution, got n={n}"
        )
    return grid


def build_domain_grid(n: int) -> Grid:
    return Grid(n, DOMAIN)


FAMILIES = ("identity", "trig-isotropic", "layered", "checkerboard", "constant")


@dataclass(frozen=True)
class CoefficientField:
    """Y-periodic symmetric coefficient matrix ``A(y)``.

    ``params`` depend on the family: ``(a0, a1)`` for trig-isotropic,
    ``(alpha, beta)`` for layered and checkerboard, ``(a11, a12, a22)`` for a
    constant matrix. ``scale`` multiplies the whole field.
    """

    family: str
    params: tuple = ()
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        p = self.params
        expected = {"identity": 0, "trig-isotropic": 2, "layered": 2,
                    "checkerboard": 2, "constant": 3}
        if self.family not in expected:
            raise ValueError(f"unknown coefficient family {self.family!r}")
        if len(p) != expected[self.family]:
            raise ValueError(f"{self.family} takes {expected[self.family]} parameters")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.family == "trig-isotropic" and not p[0] > abs(p[1]) > 0:
            raise ValueError("trig-isotropic needs a0 > |a1| > 0")
        if self.family in ("layered", "checkerboard") and min(p) <= 0:
            raise ValueError("phase coefficients must be positive")
        if self.family == "constant" and self.m <= 0:
            raise ValueError("constant matrix must be positive definite")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def trig_isotropic(cls, a0, a1):
        return cls("trig-isotropic", (a0, a1))

    @classmethod
    def layered(cls, alpha, beta):
        return cls("layered", (alpha, beta))

    @classmethod
    def checkerboard(cls, alpha, beta):
        return cls("checkerboard", (alpha, beta))

    @classmethod
    def constant(cls, matrix):
        a = np.asarray(matrix, dtype=float)
        return cls("constant", (a[0, 0], 0.5 * (a[0, 1] + a[1, 0]), a[1, 1]))

    def scaled(self, c: float) -> CoefficientField:
        return CoefficientField(self.family, self.params, self.scale * c)

    @property
    def is_discontinuous(self) -> bool:
        return self.family in ("layered", "checkerboard")

    @property
    def is_oscillatory(self) -> bool:
        return self.family not in ("identity", "constant")

    @property
    def bounds(self) -> tuple[float, float]:
        """Ellipticity bounds ``(m, M)``."""
        p = self.params
        if self.family == "identity":
            lo, hi = 1.0, 1.0
        elif self.family == "trig-isotropic":
            lo, hi = p[0] - abs(p[1]), p[0] + abs(p[1])
        elif self.family == "constant":
            lo, hi = np.linalg.eigvalsh(self._matrix())
        else:
            lo, hi = min(p), max(p)
        return float(lo * self.scale), float(hi * self.scale)

    @property
    def m(self) -> float:
        return self.bounds[0]

    @property
    def M(self) -> float:
        return self.bounds[1]

    def _matrix(self):
        a11, a12, a22 = self.params
        return np.array([[a11, a12], [a12, a22]])

    def scalar(self, y) -> np.ndarray:
        """Isotropic multiplier a(y) at points ``y`` of shape (..., 2)."""
        y = np.asarray(y, dtype=float)
        frac = y - np.floor(y)
        p = self.params
        if self.family == "trig-isotropic":
            a = p[0] + p[1] * np.sin(2 * np.pi * frac[..., 0]) * np.sin(2 * np.pi * frac[..., 1])
        elif self.family == "layered":
            a = np.where(frac[..., 0] < 0.5, p[0], p[1])
        elif self.family == "checkerboard":
            same = (frac[..., 0] < 0.5) == (frac[..., 1] < 0.5)
            a = np.where(same, p[0], p[1])
        else:
            a = np.ones(y.shape[:-1])
        return self.scale * a

    def evaluate(self, y) -> np.ndarray:
        """``A(y)`` with shape (..., 2, 2); ``y`` is reduced modulo 1."""
        y = np.asarray(y, dtype=float)
        if self.family == "constant":
            out = np.broadcast_to(self.scale * self._matrix(), y.shape[:-1] + (2, 2))
            return out.copy()
        a = self.scalar(y)
        return a[..., None, None] * np.eye(2)


def fractional_part(y):
    y = np.asarray(y, dtype=float)
    return y - np.floor(y)


def sample_coefficient(coeff: CoefficientField, x, eps: float | None = None) -> np.ndarray:
    """``A({x / eps})``, or ``A(x)`` on the cell when ``eps`` is None."""
    x = np.asarray(x, dtype=float)
    y = x if eps is None else x / eps
    return coeff.evaluate(fractional_part(y))
