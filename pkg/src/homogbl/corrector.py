"""Fine-scale solves, two-scale expansions, boundary-layer correctors and rate studies.

Every quantity of one scale ``eps`` lives on a single fine domain grid with
``points_per_cell`` elements per period, so error fields are plain nodal
differences. The homogenized solution is manufactured (``u0 = sin sin``) and
its derivatives are evaluated analytically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from homogbl.assembly import assemble_load, assemble_mass, assemble_stiffness, reduction
from homogbl.cell import SCHEMES, CellSolutions, HomogenizedTensor, solve_cell_problems
from homogbl.errors import GridIncompatibility, HomogError, InsufficientData
from homogbl.grid import CoefficientField, Grid, build_cell_grid, build_domain_grid
from homogbl.solver import SolverConfig, cg_solve
from homogbl.unfolding import q_interp, reciprocal_integer

log = logging.getLogger(__name__)

PI = np.pi

KINDS = (
    "plain-first",          # u_eps - u0 - eps w1
    "plain-first-Q",        # u_eps - u0 - eps u1_q
    "first-with-theta",     # ... + eps theta
    "first-with-beta-Q",    # u_eps - u0 - eps u1_q + eps beta
    "second-with-both",     # ... + eps theta - eps^2 u2 + eps^2 phi
    "second-without-phi",   # ... + eps theta - eps^2 u2
    "eps-phi",              # eps phi itself
)


@dataclass(frozen=True)
class ManufacturedProblem:
    """``u0 = sin(pi x1) sin(pi x2)`` with the load making it the homogenized solution."""

    a_hom: np.ndarray

    def u0(self, x):
        x = np.asarray(x)
        return np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])

    def gradient(self, x):
        x = np.asarray(x)
        s1, s2 = np.sin(PI * x[..., 0]), np.sin(PI * x[..., 1])
        c1, c2 = np.cos(PI * x[..., 0]), np.cos(PI * x[..., 1])
        return PI * np.stack([c1 * s2, s1 * c2], axis=-1)

    def hessian(self, x):
        x = np.asarray(x)
        s1, s2 = np.sin(PI * x[..., 0]), np.sin(PI * x[..., 1])
        c1, c2 = np.cos(PI * x[..., 0]), np.cos(PI * x[..., 1])
        d11 = -PI ** 2 * s1 * s2
        d12 = PI ** 2 * c1 * c2
        return np.stack([np.stack([d11, d12], -1), np.stack([d12, d11], -1)], -2)

    def f(self, x):
        a = self.a_hom
        x = np.asarray(x)
        ss = np.sin(PI * x[..., 0]) * np.sin(PI * x[..., 1])
        cc = np.cos(PI * x[..., 0]) * np.cos(PI * x[..., 1])
        return PI ** 2 * ((a[0, 0] + a[1, 1]) * ss - (a[0, 1] + a[1, 0]) * cc)


def manufacture_problem(a_hom) -> ManufacturedProblem:
    mat = a_hom.matrix if isinstance(a_hom, HomogenizedTensor) else np.asarray(a_hom, float)
    return ManufacturedProblem(np.array(mat, dtype=float))


class FineOperator:
    """Stiffness of ``-div(A(x/eps) grad)`` on a domain grid, split for Dirichlet solves."""

    def __init__(self, grid: Grid, coeff: CoefficientField, eps: float | None):
        self.grid = grid
        self.coeff = coeff
        self.eps = eps
        self.K = assemble_stiffness(grid, coeff, eps)
        self.K_II, self.K_IB = reduction(self.K, grid)

    def solve(self, load, boundary_values, cfg: SolverConfig) -> np.ndarray:
        g = self.grid
        full = np.zeros(g.node_count)
        full[g.boundary_nodes] = boundary_values
        rhs = -(self.K_IB @ full[g.boundary_nodes])
        if load is not None:
            rhs = rhs + load[g.interior_nodes]
        full[g.interior_nodes] = cg_solve(self.K_II, rhs, cfg)
        return full


@dataclass
class NormOperators:
    mass: object
    laplace: object

    @classmethod
    def for_grid(cls, grid: Grid):
        return cls(assemble_mass(grid), assemble_stiffness(grid, CoefficientField.identity()))


def error_norms(fine_grid: Grid, diff: np.ndarray, ops: NormOperators | None = None):
    """``(L2, H1)`` norms of a nodal field; H1 uses the unweighted gradient."""
    ops = ops or NormOperators.for_grid(fine_grid)
    l2_sq = max(float(diff @ (ops.mass @ diff)), 0.0)
    semi_sq = max(float(diff @ (ops.laplace @ diff)), 0.0)
    return np.sqrt(l2_sq), np.sqrt(l2_sq + semi_sq)


def solve_fine(grid: Grid, coeff: CoefficientField, eps: float, f: Callable,
               cfg: SolverConfig = SolverConfig(), operator: FineOperator | None = None) -> np.ndarray:
    """Galerkin solution of ``-div(A(x/eps) grad u) = f`` with zero boundary values."""
    op = operator or FineOperator(grid, coeff, eps)
    return op.solve(assemble_load(grid, f), 0.0, cfg)


def solve_boundary_layer(coeff: CoefficientField, eps: float, fine_grid: Grid, boundary_data,
                         cfg: SolverConfig = SolverConfig(),
                         operator: FineOperator | None = None) -> np.ndarray:
    """Discrete ``A(x/eps)``-harmonic field with the given values on the boundary nodes."""
    op = operator or FineOperator(fine_grid, coeff, eps)
    data = np.asarray(boundary_data, dtype=float)
    if data.size == fine_grid.node_count:
        data = data[fine_grid.boundary_nodes]
    return op.solve(None, data, cfg)


def cell_values_at_fine_nodes(cell_grid: Grid, values: np.ndarray, eps: float, fine_grid: Grid) -> np.ndarray:
    """Transfer cell class values to the fine nodes as ``values(x / eps)``.

    When the cell resolution is a multiple of the points per cell this is a pure
    re-indexing; when it divides the points per cell the Q1 cell field is
    evaluated at the (rational) fine node positions.
    """
    k_cells = reciprocal_integer(eps)
    if fine_grid.n % k_cells:
        raise GridIncompatibility("fine grid does not tile the eps-cells")
    k = fine_grid.n // k_cells
    n = cell_grid.n
    loc = fine_grid.node_ij % k
    vals = np.asarray(values)
    if n % k == 0:
        ij = loc * (n // k)
        return vals[..., (ij[:, 0] % n) + n * (ij[:, 1] % n)]
    if k % n == 0:
        stride = k // n
        e = loc // stride
        st = (loc - e * stride) / stride
        i, j = e[:, 0], e[:, 1]
        c = lambda a, b: (a % n) + n * (b % n)
        s, t = st[:, 0], st[:, 1]
        return ((1 - s) * (1 - t) * vals[..., c(i, j)] + s * (1 - t) * vals[..., c(i + 1, j)]
                + s * t * vals[..., c(i + 1, j + 1)] + (1 - s) * t * vals[..., c(i, j + 1)])
    raise GridIncompatibility(f"cell resolution {n} and points per cell {k} are incommensurate")


def evaluate_expansions(cells: CellSolutions, problem: ManufacturedProblem, eps: float,
                        fine_grid: Grid, q_samples: Grid | None = None) -> dict:
    """Nodal ``w1``, ``u1_q`` and ``u2`` on the fine grid."""
    x = fine_grid.coords
    chi = cell_values_at_fine_nodes(cells.grid, cells.chi, eps, fine_grid)
    grad = problem.gradient(x)
    w1 = np.einsum("jn,nj->n", chi, grad)
    q_grad = np.stack([q_interp(lambda p, j=j: problem.gradient(p)[..., j], eps, q_samples)(x)
                       for j in range(2)], axis=-1)
    u1_q = np.einsum("jn,nj->n", chi, q_grad)
    out = {"w1": w1, "u1_q": u1_q}
    if cells.chi2 is not None:
        chi2 = cell_values_at_fine_nodes(cells.grid, cells.chi2, eps, fine_grid)
        out["u2"] = np.einsum("ijn,nij->n", chi2, problem.hessian(x))
    return out


@dataclass
class ExpansionBundle:
    eps: float
    fine_grid: Grid
    fields: dict
    provenance: dict
    energy_defect: float = 0.0


@dataclass(frozen=True)
class ErrorRecord:
    eps: float
    kind: str
    l2_error: float
    h1_error: float
    extra: dict = field(default_factory=dict)


def build_bundle(coeff: CoefficientField, cells: CellSolutions, problem: ManufacturedProblem,
                 eps: float, points_per_cell: int, cfg: SolverConfig = SolverConfig()) -> ExpansionBundle:
    k_cells = reciprocal_integer(eps)
    fine = build_domain_grid(k_cells * points_per_cell)
    op = FineOperator(fine, coeff, eps)
    load = assemble_load(fine, problem.f)
    u_eps = op.solve(load, 0.0, cfg)
    energy = float(u_eps @ (op.K @ u_eps))
    work = float(load @ u_eps)
    fields = {"u_eps": u_eps, "u0": problem.u0(fine.coords)}
    fields.update(evaluate_expansions(cells, problem, eps, fine))
    b = fine.boundary_nodes
    fields["theta"] = op.solve(None, fields["w1"][b], cfg)
    fields["beta"] = op.solve(None, fields["u1_q"][b], cfg)
    if "u2" in fields:
        fields["phi"] = op.solve(None, fields["u2"][b], cfg)
    provenance = {"u_eps": "discrete", "u0": "analytic", "w1": "cell x analytic",
                  "u1_q": "cell x Q_eps(analytic)", "u2": "cell x analytic",
                  "theta": "discrete", "beta": "discrete", "phi": "discrete"}
    return ExpansionBundle(eps, fine, fields, provenance,
                           abs(energy - work) / max(abs(work), 1e-300))


def expansion_differences(bundle: ExpansionBundle) -> dict:
    F = bundle.fields
    e = bundle.eps
    first = F["u_eps"] - F["u0"] - e * F["w1"]
    out = {
        "plain-first": first,
        "plain-first-Q": F["u_eps"] - F["u0"] - e * F["u1_q"],
        "first-with-theta": first + e * F["theta"],
        "first-with-beta-Q": F["u_eps"] - F["u0"] - e * F["u1_q"] + e * F["beta"],
    }
    if "u2" in F:
        out["second-without-phi"] = out["first-with-theta"] - e ** 2 * F["u2"]
        out["second-with-both"] = out["second-without-phi"] + e ** 2 * F["phi"]
        out["eps-phi"] = e * F["phi"]
    return out


def bundle_errors(bundle: ExpansionBundle) -> list[ErrorRecord]:
    ops = NormOperators.for_grid(bundle.fine_grid)
    records = []
    diffs = expansion_differences(bundle)
    for kind in KINDS:
        if kind in diffs:
            l2, h1 = error_norms(bundle.fine_grid, diffs[kind], ops)
            records.append(ErrorRecord(bundle.eps, kind, l2, h1))
    return records


def fit_rate(eps_list, error_list) -> float:
    """Least-squares slope of ``log(error)`` against ``log(eps)``; nonpositive errors are skipped."""
    eps = np.asarray(eps_list, dtype=float)
    err = np.asarray(error_list, dtype=float)
    keep = (err > 0) & np.isfinite(err) & (eps > 0)
    if np.count_nonzero(~keep):
        log.warning("fit_rate: skipping %d nonpositive or non-finite points", np.count_nonzero(~keep))
    if np.count_nonzero(keep) < 3:
        raise InsufficientData(f"need 3 usable points, have {np.count_nonzero(keep)}")
    slope, _ = np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)
    return float(slope)


DEFAULT_EPS = (1 / 4, 1 / 8, 1 / 16, 1 / 32)


@dataclass(frozen=True)
class SweepConfig:
    coeff: CoefficientField
    eps_list: tuple = DEFAULT_EPS
    points_per_cell: int = 16
    cell_n: int | None = None  # defaults to points_per_cell
    solver: SolverConfig = SolverConfig()
    cell_scheme: str = "stencil"

    def __post_init__(self):
        for e in self.eps_list:
            reciprocal_integer(e)
        k = self.points_per_cell
        if k < 8 or k % 2:
            raise ValueError(f"points_per_cell must be even and >= 8, got {k}")
        n = self.resolved_cell_n
        if n % k and k % n:
            raise GridIncompatibility(f"cell n={n} and points per cell {k} are incommensurate")
        if self.cell_scheme not in SCHEMES:
            raise ValueError(f"unknown cell scheme {self.cell_scheme!r}")

    @property
    def resolved_cell_n(self) -> int:
        return self.cell_n or self.points_per_cell


@dataclass
class SweepResult:
    config: SweepConfig
    a_hom: HomogenizedTensor
    records: list
    failures: dict
    energy_defects: dict

    def errors(self, kind: str, norm: str = "h1"):
        rows = [r for r in self.records if r.kind == kind]
        return [r.eps for r in rows], [getattr(r, f"{norm}_error") for r in rows]

    def rate(self, kind: str, norm: str = "h1") -> float:
        return fit_rate(*self.errors(kind, norm))


def cell_problems_for(config_coeff: CoefficientField, n: int, cfg: SolverConfig, scheme: str = "stencil"):
    return solve_cell_problems(build_cell_grid(n, config_coeff), config_coeff, cfg, scheme=scheme)


def run_sweep(config: SweepConfig, cells: CellSolutions | None = None,
              a_hom: HomogenizedTensor | None = None, executor=None) -> SweepResult:
    """Error records for every expansion variant at every ``eps``.

    A failing ``eps`` point is recorded in ``failures`` and the sweep moves on.
    ``executor`` (a ``concurrent.futures`` executor) may run the points in parallel;
    results are merged in the order of ``eps_list``.
    """
    if cells is None or a_hom is None:
        cells, a_hom = cell_problems_for(config.coeff, config.resolved_cell_n, config.solver,
                                         config.cell_scheme)
    problem = manufacture_problem(a_hom)

    def point(eps):
        bundle = build_bundle(config.coeff, cells, problem, eps, config.points_per_cell, config.solver)
        return bundle_errors(bundle), bundle.energy_defect

    mapper = executor.map if executor is not None else map
    records, failures, energy = [], {}, {}
    results = list(mapper(_guarded(point), config.eps_list))
    for eps, (ok, value) in zip(config.eps_list, results):
        if ok:
            records.extend(value[0])
            energy[eps] = value[1]
        else:
            failures[eps] = value
    return SweepResult(config, a_hom, records, failures, energy)


def _guarded(fn):
    def wrapped(eps):
        try:
            return True, fn(eps)
        except HomogError as exc:
            log.error("eps=%g failed: %s", eps, exc)
            return False, f"{type(exc).__name__}: {exc}"
    return wrapped


@dataclass
class OscillatingResult:
    records: list
    failures: dict

    def rate(self) -> float:
        return fit_rate([r.eps for r in self.records], [r.h1_error for r in self.records])


def oscillating_dirichlet_study(coeff: CoefficientField, eps_list=DEFAULT_EPS,
                                phi_star=None, z=None, cells: CellSolutions | None = None,
                                a_hom: HomogenizedTensor | None = None, points_per_cell: int = 16,
                                cfg: SolverConfig = SolverConfig()) -> OscillatingResult:
    """Error of ``y_eps - y* - eps chi_j Q_eps(d y*/dx_j)`` for oscillating Dirichlet data.

    ``y_eps`` has trace ``eps Phi*(x/eps) z(x)`` and load ``f``; ``y*`` is the
    homogenized solution with zero trace, which for the manufactured load is
    ``u0`` itself. ``phi_star`` is a class-value array on the cell grid
    (default ``chi_11``, or ``0`` to switch the data off); ``z`` a callable
    (default ``d^2 u0 / dx_1^2``).
    """
    if cells is None or a_hom is None:
        cells, a_hom = cell_problems_for(coeff, points_per_cell, cfg)
    problem = manufacture_problem(a_hom)
    if phi_star is None:
        phi_star = cells.chi2[0, 0]
    if z is None:
        z = lambda x: problem.hessian(x)[..., 0, 0]
    phi_star = np.broadcast_to(np.asarray(phi_star, dtype=float), (cells.grid.dof_count,))

    def point(eps):
        fine = build_domain_grid(reciprocal_integer(eps) * points_per_cell)
        op = FineOperator(fine, coeff, eps)
        b = fine.boundary_nodes
        trace = eps * cell_values_at_fine_nodes(cells.grid, phi_star, eps, fine) * z(fine.coords)
        y_eps = op.solve(assemble_load(fine, problem.f), trace[b], cfg)
        exp = evaluate_expansions(cells, problem, eps, fine)
        diff = y_eps - problem.u0(fine.coords) - eps * exp["u1_q"]
        l2, h1 = error_norms(fine, diff)
        return ErrorRecord(eps, "oscillating-dirichlet", l2, h1)

    records, failures = [], {}
    for eps in eps_list:
        ok, value = _guarded(point)(eps)
        if ok:
            records.append(value)
        else:
            failures[eps] = value
    return OscillatingResult(records, failures)
