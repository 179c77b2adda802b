"""Preconditioned conjugate gradients and inverse iteration for sparse SPD problems."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from homogbl.assembly import PeriodicSystem, ReducedSystem
from homogbl.errors import NoConvergence, NumericalBreakdown

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-10
    max_iter: int | None = None
    preconditioner: str = "jacobi"

    def __post_init__(self):
        if not 0 < self.rel_tol <= 1e-4:
            raise ValueError(f"rel_tol must lie in (0, 1e-4], got {self.rel_tol}")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be positive")
        if self.preconditioner not in ("jacobi", "none"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def iterations_for(self, dof: int) -> int:
        if self.max_iter is not None:
            return self.max_iter
        return max(500, int(20 * math.sqrt(dof)))


@dataclass(frozen=True)
class EigenPair:
    lam: float
    vector: np.ndarray
    residual: float
    iterations: int = 0


def cg_solve(K, rhs, cfg: SolverConfig = SolverConfig(), x0=None, project=None,
             callback=None, history=None, rel_tol=None):
    """Solve ``K x = rhs`` by (Jacobi-)preconditioned conjugate gradients.

    Stops once the true residual satisfies ``|K x - rhs| <= rel_tol |rhs|``.
    ``project`` restricts iterates to a subspace on which ``K`` is definite
    (used for the periodic zero-mean problems). ``callback(x)`` is called after
    every iteration and ``history`` receives the residual norms.
    """
    rhs = np.asarray(rhs, dtype=float)
    tol = cfg.rel_tol if rel_tol is None else rel_tol
    proj = project if project is not None else (lambda v: v)
    b = proj(rhs) if project is not None else rhs
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b) if x0 is None else proj(np.array(x0, dtype=float))
    if bnorm == 0.0:
        return np.zeros_like(b)
    if not np.isfinite(bnorm):
        raise NumericalBreakdown("non-finite right-hand side")
    if cfg.preconditioner == "jacobi":
        diag = K.diagonal()
        if np.any(diag <= 0):
            raise NumericalBreakdown("Jacobi preconditioner needs a positive diagonal")
        inv_diag = 1.0 / diag
    else:
        inv_diag = None

    target = tol * bnorm
    max_iter = cfg.iterations_for(b.size)
    r = b - K @ x if x0 is not None else b.copy()
    if project is not None:
        r = proj(r)
    rnorm = np.linalg.norm(r)
    if history is not None:
        history.append(rnorm)
    if rnorm <= target:
        return x
    z = r * inv_diag if inv_diag is not None else r.copy()
    if project is not None:
        z = proj(z)
    p = z.copy()
    rz = r @ z
    it = 0
    while it < max_iter:
        it += 1
        Kp = K @ p
        pKp = p @ Kp
        if not np.isfinite(pKp) or pKp <= 0.0:
            raise NumericalBreakdown(f"curvature {pKp!r} at CG iteration {it}")
        alpha = rz / pKp
        x += alpha * p
        r -= alpha * Kp
        rnorm = np.linalg.norm(r)
        if history is not None:
            history.append(rnorm)
        if callback is not None:
            callback(x)
        if not np.isfinite(rnorm):
            raise NumericalBreakdown(f"non-finite residual at CG iteration {it}")
        if rnorm <= target:
            # confirm with the true residual before returning
            r = b - K @ x
            if project is not None:
                r = proj(r)
            rnorm = np.linalg.norm(r)
            if rnorm <= target:
                return proj(x) if project is not None else x
        z = r * inv_diag if inv_diag is not None else r.copy()
        if project is not None:
            z = proj(z)
        rz_new = r @ z
        p *= rz_new / rz
        p += z
        rz = rz_new
    raise NoConvergence(
        f"CG stopped after {it} iterations at relative residual {rnorm / bnorm:.3e}",
        residual=rnorm / bnorm, iterations=it,
    )


def solve_system(system, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Solve a constrained system and return the full field.

    A :class:`ReducedSystem` yields all node values including the Dirichlet data;
    a :class:`PeriodicSystem` yields zero-mean class values.
    """
    if isinstance(system, ReducedSystem):
        return system.expand(cg_solve(system.matrix, system.rhs, cfg))
    if isinstance(system, PeriodicSystem):
        # Euclidean projection keeps the residual in the range of K; the final
        # shift fixes the mass-weighted mean
        x = cg_solve(system.matrix, system.rhs, cfg, project=lambda v: v - v.mean())
        return system.project(x)
    raise TypeError(f"cannot solve {type(system).__name__}")


def _m_inverse_norm(M, r, cfg):
    if not np.any(r):
        return 0.0
    y = cg_solve(M, r, cfg, rel_tol=1e-12)
    return math.sqrt(max(r @ y, 0.0))


def smallest_eigenpair(K, M, cfg: SolverConfig = SolverConfig(), start=None,
                       max_outer: int = 500) -> EigenPair:
    """Lowest eigenpair of ``K v = lam M v`` by inverse iteration.

    Inner CG solves are warm started from the previous iterate and run to a
    tolerance tied to the current eigen-residual. Convergence is declared when
    ``|K v - lam M v|_{M^-1} <= rel_tol * lam``; the returned vector is
    M-normalised with a nonnegative sum.
    """
    n = K.shape[0]
    if M.shape != K.shape:
        raise ValueError("K and M must have the same shape")
    mdiag = M.diagonal()
    if np.any(mdiag <= 0):
        raise NumericalBreakdown("mass matrix is not positive definite")
    lumped = np.asarray(M.sum(axis=1)).ravel()
    if np.any(lumped <= 0):
        lumped = mdiag

    x = np.ones(n) if start is None else np.array(start, dtype=float)
    Mx = M @ x
    nrm = math.sqrt(x @ Mx)
    if not nrm > 0:
        raise NumericalBreakdown("start vector has zero mass norm")
    x /= nrm
    Mx /= nrm
    Kx = K @ x
    lam = x @ Kx
    inner = min(1e-4, 10 * cfg.rel_tol)
    for it in range(1, max_outer + 1):
        r = Kx - lam * Mx
        res = math.sqrt(r @ (r / lumped))
        if res <= 0.1 * cfg.rel_tol * lam:
            break
        inner = min(1e-4, max(cfg.rel_tol * 1e-2, 0.01 * res / lam))
        y = cg_solve(K, Mx, cfg, x0=x / lam, rel_tol=inner)
        My = M @ y
        nrm = math.sqrt(y @ My)
        if not np.isfinite(nrm) or nrm == 0.0:
            raise NumericalBreakdown("inverse iteration produced a null vector")
        x = y / nrm
        Mx = My / nrm
        Kx = K @ x
        lam = x @ Kx
    else:
        raise NoConvergence(f"inverse iteration did not converge in {max_outer} steps",
                            residual=res / lam, iterations=max_outer)
    if x.sum() < 0:
        x, Mx, Kx = -x, -Mx, -Kx
    lam = (x @ Kx) / (x @ Mx)
    residual = _m_inverse_norm(M, Kx - lam * Mx, cfg)
    if residual > cfg.rel_tol * lam:
        raise NoConvergence(f"eigen-residual {residual:.3e} above tolerance",
                            residual=residual / lam, iterations=it)
    return EigenPair(float(lam), x, residual, it)


def dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)
