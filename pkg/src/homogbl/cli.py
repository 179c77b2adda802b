"""Configuration-driven study runner with cached cell solves and CSV/JSON reports.

Exit status: 0 when every enabled threshold passes, 2 when a threshold fails,
1 on configuration or execution errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy

from homogbl import __version__
from homogbl.cell import SCHEMES, CellSolutions, HomogenizedTensor, compute_b, homogenized_tensor, solve_cell_problems
from homogbl.assembly import nodal_gradients
from homogbl.corrector import (
    DEFAULT_EPS,
    KINDS,
    SweepConfig,
    oscillating_dirichlet_study,
    run_sweep,
)
from homogbl.errors import ConfigError, HomogError, InsufficientData
from homogbl.grid import FAMILIES, CoefficientField, build_cell_grid
from homogbl.solver import SolverConfig
from homogbl.spectral import eigen_corrector_study
from homogbl.unfolding import (
    averaging_ratios,
    identity_errors,
    local_average_inequality_check,
    reciprocal_integer,
)

log = logging.getLogger("homogbl")

STUDIES = ("cell", "sweep", "oscillating", "spectral", "unfolding-checks")

# (kind, norm, lower, upper); ``None`` leaves a side open
SWEEP_THRESHOLDS = (
    ("plain-first", "h1", 0.4, 0.8),
    ("first-with-theta", "h1", 0.9, None),
    ("first-with-beta-Q", "h1", 0.9, None),
    ("second-without-phi", "h1", 1.35, None),
    ("second-with-both", "h1", 1.8, None),
    ("first-with-theta", "l2", 1.8, None),
)
PHI_SPREAD_MAX = 3.0
OSCILLATING_MIN = 0.45
RATIO_SPREAD_MAX = 4.0
IDENTITY_TOL = 1e-12
SPECTRAL_RESIDUAL_MIN = 1.0

SWEEP_COLUMNS = ("study", "family", "eps", "kind", "l2_error", "h1_error", "extra")
RATE_COLUMNS = ("study", "kind", "slope", "threshold", "verdict")
SPECTRAL_COLUMNS = ("eps", "lambda_eps", "lambda_hom", "corrector_integral", "residual")
CELL_COLUMNS = ("family", "params", "n", "a11", "a12", "a21", "a22", "oracle_error", "tolerance", "verdict")
UNFOLDING_COLUMNS = ("eps", "product_error", "integration_error", "gradient_error",
                     "mean_defect", "unfold_defect", "q_defect", "local_average_ratio")


@dataclass(frozen=True)
class RunConfig:
    coeff: CoefficientField
    cell_n: int | None = None
    eps_list: tuple = DEFAULT_EPS
    points_per_cell: int = 16
    rel_tol: float = 1e-10
    eigen_rel_tol: float = 1e-8
    cell_scheme: str = "stencil"
    studies: tuple = ("cell",)
    output: Path = Path("homogbl-out")
    cache: bool = True
    cache_dir: Path | None = None

    def __post_init__(self):
        for e in self.eps_list:
            reciprocal_integer(e)
        k = self.points_per_cell
        if k < 8 or k % 2:
            raise ConfigError(f"points_per_cell must be even and >= 8, got {k}")
        if self.needs_fine_cells and k % self.resolved_cell_n:
            raise ConfigError(f"cell n={self.resolved_cell_n} must divide points_per_cell={k}")
        if self.cell_scheme not in SCHEMES:
            raise ConfigError(f"unknown cell scheme {self.cell_scheme!r}")
        bad = set(self.studies) - set(STUDIES)
        if bad:
            raise ConfigError(f"unknown studies {sorted(bad)}")

    @property
    def needs_fine_cells(self) -> bool:
        return bool({"sweep", "oscillating", "spectral"} & set(self.studies))

    @property
    def resolved_cell_n(self) -> int:
        if self.cell_n:
            return self.cell_n
        return self.points_per_cell if self.needs_fine_cells else 64

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(rel_tol=self.rel_tol)

    @property
    def resolved_cache_dir(self) -> Path:
        return self.cache_dir or self.output / "cache"

    def echo(self) -> dict:
        return {
            "family": self.coeff.family, "params": list(self.coeff.params), "scale": self.coeff.scale,
            "cell_n": self.resolved_cell_n, "eps": [str(Fraction(e).limit_denominator()) for e in self.eps_list],
            "points_per_cell": self.points_per_cell, "rel_tol": self.rel_tol,
            "eigen_rel_tol": self.eigen_rel_tol, "cell_scheme": self.cell_scheme,
            "studies": list(self.studies),
        }


# -- configuration -----------------------------------------------------------

def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip().lower() == key:
            return no
    return None


def _floats(raw: str) -> tuple:
    return tuple(float(Fraction(p.strip())) for p in raw.split(",") if p.strip())


def parse_config(text: str, source: str = "<config>", base: Path | None = None) -> RunConfig:
    """Parse a ``key = value`` configuration.

    Sections: ``[coefficient]`` (family, params, scale), ``[grid]`` (cell_n,
    points_per_cell, eps), ``[solver]`` (rel_tol, eigen_rel_tol, cell_scheme),
    ``[study]`` (run) and ``[output]`` (directory, cache, cache_dir).
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc

    def where(section, key):
        line = _line_of(text, section, key)
        return f"{source}:{line} [{section}] {key}" if line else f"{source} [{section}] {key}"

    def get(section, key, convert, default):
        if not parser.has_option(section, key):
            return default
        raw = parser.get(section, key)
        try:
            return convert(raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{where(section, key)}: {exc}") from exc

    if not parser.has_section("coefficient"):
        raise ConfigError(f"{source}: missing [coefficient] section")
    family = get("coefficient", "family", str.strip, None)
    if family not in FAMILIES:
        raise ConfigError(f"{where('coefficient', 'family')}: expected one of {', '.join(FAMILIES)}")
    params = get("coefficient", "params", _floats, ())
    scale = get("coefficient", "scale", float, 1.0)
    try:
        coeff = CoefficientField(family, params, scale)
    except ValueError as exc:
        raise ConfigError(f"{where('coefficient', 'params')}: {exc}") from exc

    def boolean(raw):
        value = raw.strip().lower()
        if value not in ("true", "false", "yes", "no", "on", "off", "1", "0"):
            raise ValueError(f"not a boolean: {raw!r}")
        return value in ("true", "yes", "on", "1")

    def studies(raw):
        return tuple(s.strip() for s in raw.split(",") if s.strip())

    def path(raw):
        p = Path(raw.strip())
        return p if p.is_absolute() or base is None else base / p

    kwargs = dict(
        coeff=coeff,
        cell_n=get("grid", "cell_n", int, None),
        eps_list=get("grid", "eps", _floats, DEFAULT_EPS),
        points_per_cell=get("grid", "points_per_cell", int, 16),
        rel_tol=get("solver", "rel_tol", float, 1e-10),
        eigen_rel_tol=get("solver", "eigen_rel_tol", float, 1e-8),
        cell_scheme=get("solver", "cell_scheme", str.strip, "stencil"),
        studies=get("study", "run", studies, ("cell",)),
        output=get("output", "directory", path, path("homogbl-out")),
        cache=get("output", "cache", boolean, True),
        cache_dir=get("output", "cache_dir", path, None),
    )
    try:
        cfg = RunConfig(**kwargs)
    except (ConfigError, HomogError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for key, value in (("rel_tol", cfg.rel_tol), ("eigen_rel_tol", cfg.eigen_rel_tol)):
        try:
            SolverConfig(rel_tol=value)
        except ValueError as exc:
            raise ConfigError(f"{where('solver', key)}: {exc}") from exc
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, str(path), path.parent)


# -- cache -------------------------------------------------------------------

def cache_key(coeff: CoefficientField, n: int, scheme: str = "stencil", rel_tol: float = 1e-10) -> str:
    payload = json.dumps({"family": coeff.family, "params": [repr(p) for p in coeff.params],
                          "scale": repr(coeff.scale), "n": n, "scheme": scheme,
                          "rel_tol": repr(rel_tol)}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:24]


def _atomic_bytes(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def store_cell_solutions(path: Path, cells: CellSolutions, a_hom: HomogenizedTensor):
    buf = io.BytesIO()
    arrays = {"chi": cells.chi, "a_hom": a_hom.matrix}
    if cells.chi2 is not None:
        arrays["chi2"] = cells.chi2
    np.savez(buf, **arrays)
    _atomic_bytes(path, buf.getvalue())


def load_cell_solutions(path: Path, coeff: CoefficientField, n: int):
    grid = build_cell_grid(n, coeff)
    with np.load(path) as data:
        chi = data["chi"]
        chi2 = data["chi2"] if "chi2" in data.files else None
        matrix = data["a_hom"]
    if chi.shape != (2, grid.dof_count) or matrix.shape != (2, 2):
        raise ValueError("cached arrays have the wrong shape")
    grad = np.stack([nodal_gradients(grid, c) for c in chi])
    cells = CellSolutions(grid, coeff, chi, grad)
    a_hom = homogenized_tensor(grid, coeff, cells)
    if not np.array_equal(a_hom.matrix, matrix):
        raise ValueError("cached tensor does not match its cell fields")
    if chi2 is not None:
        grad2 = np.stack([np.stack([nodal_gradients(grid, chi2[i, j]) for j in range(2)])
                          for i in range(2)])
        cells = replace(cells, chi2=chi2, grad_chi2=grad2, b=compute_b(grid, coeff, cells, a_hom))
    return cells, a_hom


def cached_cell_problems(coeff: CoefficientField, n: int, cfg: SolverConfig, scheme: str = "stencil",
                         cache_dir: Path | None = None):
    """``(cells, a_hom, hit)``; a corrupt cache entry is recomputed with a warning."""
    if cache_dir is not None:
        path = Path(cache_dir) / f"cell-{cache_key(coeff, n, scheme, cfg.rel_tol)}.npz"
        if path.exists():
            try:
                cells, a_hom = load_cell_solutions(path, coeff, n)
                return cells, a_hom, True
            except Exception as exc:  # any unreadable entry is a miss
                log.warning("discarding corrupt cache entry %s: %s", path, exc)
    cells, a_hom = solve_cell_problems(build_cell_grid(n, coeff), coeff, cfg, scheme=scheme)
    if cache_dir is not None:
        store_cell_solutions(path, cells, a_hom)
    return cells, a_hom, False


# -- checks ------------------------------------------------------------------

def spread(values) -> float | None:
    """``max / min`` of a list of positive ratios; ``None`` when a ratio vanishes."""
    r = np.asarray(values, dtype=float)
    if r.size == 0 or r.min() <= 0:
        return None
    return float(r.max() / r.min())


def spread_row(study, kind, values, upper, zero_tol=1e-12):
    """Spread check of a ratio list; a list that vanishes identically satisfies any bound."""
    values = np.asarray(values, dtype=float)
    if values.size and np.abs(values).max() <= zero_tol:
        return rate_row(study, kind, float(np.abs(values).max()),
                        threshold=f"identically zero (<= {zero_tol})", verdict="pass")
    return rate_row(study, kind, spread(values), upper=upper)


def _interval(lower, upper) -> str:
    if upper is None:
        return f">={lower}"
    if lower is None:
        return f"<={upper}"
    return f"[{lower}, {upper}]"


def _verdict(value, lower, upper) -> str:
    if value is None or not np.isfinite(value):
        return "error"
    ok = (lower is None or value >= lower) and (upper is None or value <= upper)
    return "pass" if ok else "fail"


def rate_row(study, kind, value, lower=None, upper=None, threshold=None, verdict=None):
    return {"study": study, "kind": kind, "slope": value,
            "threshold": threshold or _interval(lower, upper),
            "verdict": verdict or _verdict(value, lower, upper)}


def cell_oracle(coeff: CoefficientField):
    """``(matrix, tolerance)`` for families with a closed-form tensor, else ``None``."""
    p, s = coeff.params, coeff.scale
    if coeff.family == "identity":
        return s * np.eye(2), 1e-10
    if coeff.family == "constant":
        return s * np.array([[p[0], p[1]], [p[1], p[2]]]), 1e-10
    if coeff.family == "layered":
        harmonic = 2 * p[0] * p[1] / (p[0] + p[1])
        return s * np.diag([harmonic, 0.5 * (p[0] + p[1])]), 1e-8
    if coeff.family == "checkerboard":
        return s * np.sqrt(p[0] * p[1]) * np.eye(2), 2e-2
    return None


# -- studies -----------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)
    rates: list = field(default_factory=list)
    failures: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


def _threads() -> int:
    raw = os.environ.get("HOMOGBL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring HOMOGBL_THREADS=%r", raw)
        return 1


def study_cell(cfg: RunConfig, out: Outcome, cells, a_hom):
    oracle = cell_oracle(cfg.coeff)
    m = a_hom.matrix
    if oracle is None:
        err, tol = None, None
        verdict = "pass" if a_hom.is_symmetric and a_hom.is_elliptic else "fail"
    else:
        err = float(np.abs(m - oracle[0]).max())
        tol = oracle[1]
        verdict = "pass" if err <= tol else "fail"
    out.tables["cell"] = [{
        "family": cfg.coeff.family, "params": " ".join(_fmt(p) for p in cfg.coeff.params),
        "n": cfg.resolved_cell_n, "a11": m[0, 0], "a12": m[0, 1], "a21": m[1, 0], "a22": m[1, 1],
        "oracle_error": "" if err is None else err, "tolerance": "" if tol is None else tol,
        "verdict": verdict}]
    out.summary["a_hom"] = m.tolist()
    out.summary["cell_verdict"] = verdict


def _fit_or_none(fn):
    try:
        return fn()
    except InsufficientData:
        return None


def study_sweep(cfg: RunConfig, out: Outcome, cells, a_hom):
    sweep_cfg = SweepConfig(cfg.coeff, tuple(cfg.eps_list), cfg.points_per_cell, cfg.resolved_cell_n,
                            cfg.solver, cfg.cell_scheme)
    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            result = run_sweep(sweep_cfg, cells, a_hom, executor=pool)
    else:
        result = run_sweep(sweep_cfg, cells, a_hom)
    rows = out.tables.setdefault("sweep", [])
    for r in result.records:
        rows.append({"study": "sweep", "family": cfg.coeff.family, "eps": r.eps, "kind": r.kind,
                     "l2_error": r.l2_error, "h1_error": r.h1_error,
                     "extra": json.dumps(r.extra, sort_keys=True) if r.extra else ""})
    for eps, msg in result.failures.items():
        rows.append({"study": "sweep", "family": cfg.coeff.family, "eps": eps, "kind": "FAILED",
                     "l2_error": "", "h1_error": "", "extra": msg})
        out.failures[f"sweep eps={eps!r}"] = msg
    for kind, norm, lo, hi in SWEEP_THRESHOLDS:
        label = kind if norm == "h1" else f"{kind}-{norm}"
        out.rates.append(rate_row("sweep", label, _fit_or_none(lambda: result.rate(kind, norm)), lo, hi))
    for kind in KINDS:
        if kind not in {k for k, *_ in SWEEP_THRESHOLDS}:
            out.rates.append(rate_row("sweep", kind, _fit_or_none(lambda: result.rate(kind)),
                                      threshold="report", verdict="info"))
    eps, phi = result.errors("eps-phi", "h1")
    if len(eps) >= 2:
        ratios = np.array(phi) / np.sqrt(eps)
        out.rates.append(spread_row("sweep", "eps-phi-ratio-spread", ratios, PHI_SPREAD_MAX))
    out.summary["energy_defects"] = {repr(k): v for k, v in result.energy_defects.items()}


def study_oscillating(cfg: RunConfig, out: Outcome, cells, a_hom):
    result = oscillating_dirichlet_study(cfg.coeff, tuple(cfg.eps_list), cells=cells, a_hom=a_hom,
                                         points_per_cell=cfg.points_per_cell, cfg=cfg.solver)
    rows = out.tables.setdefault("sweep", [])
    for r in result.records:
        rows.append({"study": "oscillating", "family": cfg.coeff.family, "eps": r.eps, "kind": r.kind,
                     "l2_error": r.l2_error, "h1_error": r.h1_error, "extra": ""})
    for eps, msg in result.failures.items():
        out.failures[f"oscillating eps={eps!r}"] = msg
    out.rates.append(rate_row("oscillating", "oscillating-dirichlet", _fit_or_none(result.rate),
                              OSCILLATING_MIN))


def study_spectral(cfg: RunConfig, out: Outcome, cells, a_hom):
    report = eigen_corrector_study(cfg.coeff, tuple(cfg.eps_list), cfg.points_per_cell, cells, a_hom,
                                   cfg.solver, SolverConfig(rel_tol=cfg.eigen_rel_tol))
    out.tables["spectral"] = [
        {"eps": e, "lambda_eps": le, "lambda_hom": lh, "corrector_integral": c, "residual": r}
        for e, le, lh, c, r in zip(report.eps_list, report.lambda_eps, report.lambda_hom,
                                   report.corrector_integral, report.residual)]
    for eps, msg in report.failures.items():
        out.failures[f"spectral eps={eps!r}"] = msg
    if len(report.eps_list) >= 2:
        gap_ratio = report.eigen_gap / np.array(report.eps_list)
        out.rates.append(spread_row("spectral", "gap-ratio-spread", gap_ratio, RATIO_SPREAD_MAX))
    rate = _fit_or_none(report.residual_rate)
    verdict = None
    if rate is not None:
        verdict = {"pass": "pass", "fail": "fail"}.get(report.corrector_verdict(SPECTRAL_RESIDUAL_MIN), "flagged")
    out.rates.append(rate_row("spectral", "corrector-residual", rate, threshold=f">{SPECTRAL_RESIDUAL_MIN}",
                              verdict=verdict or "error"))
    if verdict == "flagged":
        out.summary["spectral_flag"] = "possible non-uniqueness of theta*"


def _probe():
    def v(x):
        return np.sin(np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]) + x[..., 0] ** 2

    def grad_v(x):
        return np.stack([np.pi * np.cos(np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]) + 2 * x[..., 0],
                         -2 * np.pi * np.sin(np.pi * x[..., 0]) * np.sin(2 * np.pi * x[..., 1])], axis=-1)

    def w(x):
        return np.exp(x[..., 0] * x[..., 1])

    return v, grad_v, w


def study_unfolding(cfg: RunConfig, out: Outcome, cells):
    v, grad_v, w = _probe()
    rows = []
    for eps in cfg.eps_list:
        ident = identity_errors(v, w, grad_v, eps)
        avg = averaging_ratios(v, grad_v, eps)
        local = local_average_inequality_check(cells.grid, cells.chi[0], v, grad_v, eps)
        rows.append({"eps": eps, "product_error": ident.product, "integration_error": ident.integration,
                     "gradient_error": ident.gradient, "mean_defect": avg.mean_defect,
                     "unfold_defect": avg.unfold_defect, "q_defect": avg.q_defect,
                     "local_average_ratio": local})
    out.tables["unfolding"] = rows
    for key in ("product_error", "integration_error", "gradient_error"):
        out.rates.append(rate_row("unfolding", key, max(r[key] for r in rows), upper=IDENTITY_TOL))
    if len(rows) >= 2:
        for key in ("mean_defect", "unfold_defect", "q_defect", "local_average_ratio"):
            out.rates.append(spread_row("unfolding", f"{key}-spread", [r[key] for r in rows],
                                        RATIO_SPREAD_MAX))


# -- reports -----------------------------------------------------------------

def _csv_bytes(columns, rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in columns])
    return buf.getvalue().encode("utf-8")


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_fmt) + "\n").encode("utf-8")


def write_reports(cfg: RunConfig, out: Outcome, exit_code: int):
    d = cfg.output
    if "cell" in out.tables:
        _atomic_bytes(d / "cell.csv", _csv_bytes(CELL_COLUMNS, out.tables["cell"]))
    if "sweep" in out.tables:
        _atomic_bytes(d / "sweep.csv", _csv_bytes(SWEEP_COLUMNS, out.tables["sweep"]))
    if "spectral" in out.tables:
        _atomic_bytes(d / "spectral.csv", _csv_bytes(SPECTRAL_COLUMNS, out.tables["spectral"]))
    if "unfolding" in out.tables:
        _atomic_bytes(d / "unfolding.csv", _csv_bytes(UNFOLDING_COLUMNS, out.tables["unfolding"]))
    _atomic_bytes(d / "rates.csv", _csv_bytes(RATE_COLUMNS, out.rates))
    report = {
        "config": cfg.echo(),
        "versions": {"homogbl": __version__, "numpy": np.__version__, "scipy": scipy.__version__},
        "units": {"eps": "cell period", "errors": "L2 / H1 norms on (0,1)^2", "slope": "d log(error) / d log(eps)"},
        "columns": {"sweep.csv": SWEEP_COLUMNS, "rates.csv": RATE_COLUMNS, "spectral.csv": SPECTRAL_COLUMNS,
                    "cell.csv": CELL_COLUMNS, "unfolding.csv": UNFOLDING_COLUMNS},
        "rates": out.rates,
        "failures": out.failures,
        "summary": out.summary,
        "exit_code": exit_code,
    }
    _atomic_bytes(d / "report.json", _json_bytes(report))
    # wall-clock and cache data are kept apart so report.json is reproducible byte for byte
    _atomic_bytes(d / "timings.json", _json_bytes(out.timings))


def execute(cfg: RunConfig) -> tuple[int, Outcome]:
    """Run the selected studies and write every report; returns ``(exit_code, outcome)``."""
    out = Outcome()
    errored = False
    t0 = time.perf_counter()
    try:
        cells, a_hom, hit = cached_cell_problems(
            cfg.coeff, cfg.resolved_cell_n, cfg.solver, cfg.cell_scheme,
            cfg.resolved_cache_dir if cfg.cache else None)
        out.timings["cell-solve"] = time.perf_counter() - t0
        out.timings["cache_hit"] = hit
    except HomogError as exc:
        out.failures["cell"] = f"{type(exc).__name__}: {exc}"
        cells = None
        errored = True

    runners = {"cell": study_cell, "sweep": study_sweep, "oscillating": study_oscillating,
               "spectral": study_spectral}
    if cells is not None:
        for name in cfg.studies:
            t = time.perf_counter()
            try:
                if name == "unfolding-checks":
                    study_unfolding(cfg, out, cells)
                else:
                    runners[name](cfg, out, cells, a_hom)
            except HomogError as exc:
                log.error("study %s failed: %s", name, exc)
                out.failures[name] = f"{type(exc).__name__}: {exc}"
                errored = True
            out.timings[name] = time.perf_counter() - t

    if out.failures:
        errored = True
    verdicts = [r["verdict"] for r in out.rates]
    if "cell" in cfg.studies:
        verdicts.append(out.summary.get("cell_verdict", "error"))
    if errored or "error" in verdicts:
        code = 1
    elif all(v in ("pass", "info") for v in verdicts):
        code = 0
    else:
        code = 2
    out.timings["total"] = time.perf_counter() - t0
    write_reports(cfg, out, code)
    return code, out


# -- command line --------------------------------------------------------------

def _add_common(p, studies_default):
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--params", default="", help="comma-separated family parameters")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--n", type=int, default=None, help="cell grid resolution")
    p.add_argument("--eps", default=None, help="comma-separated reciprocal integers, e.g. 1/4,1/8")
    p.add_argument("--k", type=int, default=16, help="fine grid points per cell")
    p.add_argument("--out", type=Path, default=Path("homogbl-out"))
    p.add_argument("--no-cache", action="store_true")
    p.set_defaults(studies=studies_default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="homogbl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the studies selected in a config file")
    run.add_argument("config", type=Path)
    _add_common(sub.add_parser("cell", help="homogenized tensor"), ("cell",))
    _add_common(sub.add_parser("sweep", help="corrector rate sweep"), ("sweep", "oscillating"))
    _add_common(sub.add_parser("spectral", help="eigenvalue corrector study"), ("spectral",))
    _add_common(sub.add_parser("check-unfolding", help="unfolding identities and averaging ratios"),
                ("unfolding-checks",))
    return parser


def config_from_args(args) -> RunConfig:
    try:
        coeff = CoefficientField(args.family, _floats(args.params), args.scale)
        eps = _floats(args.eps) if args.eps else DEFAULT_EPS
        return RunConfig(coeff=coeff, cell_n=args.n, eps_list=eps, points_per_cell=args.k,
                         studies=args.studies, output=args.out, cache=not args.no_cache)
    except (ValueError, HomogError) as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.command == "run" else config_from_args(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        code, out = execute(cfg)
    except Exception as exc:  # last-resort guard for the exit-code contract
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for row in out.rates:
        print(f"{row['study']:<12} {row['kind']:<28} {_fmt(row['slope']):>22}  {row['threshold']:<12} {row['verdict']}")
    if "a_hom" in out.summary:
        print("A_hom =", np.array2string(np.array(out.summary["a_hom"]), precision=10))
    for key, msg in out.failures.items():
        print(f"FAILED {key}: {msg}", file=sys.stderr)
    print(f"reports written to {cfg.output}")
    return code


if __name__ == "__main__":
    sys.exit(main())
