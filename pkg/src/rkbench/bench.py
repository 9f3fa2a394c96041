"""Experiment harness: convergence studies, work-precision sweeps, Ritz values and step traces."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import problems as _problems
from .core import IntegrationConfig, IntegrationResult, OdeProblem, l2_error
from .integrators import adaptive_drive, fixed_drive
from .matfree import build_arnoldi, jacobian_operator
from .tableaus import registry_get

CSV_COLUMNS = (
    "method", "problem", "mode", "h", "tol", "M", "jvp_mode", "error_l2",
    "steps_accepted", "steps_rejected", "rhs_evals", "jvp_evals", "linear_iters",
    "newton_iters", "wall_seconds", "status",
)
TRACE_COLUMNS = ("method", "tol", "M", "step", "t", "h", "accepted", "status")
EIG_COLUMNS = ("index", "real", "imag", "residual", "M", "M_eff", "breakdown")

KINDS = ("convergence", "work-precision", "eigs", "integrate", "step-trace")
REFERENCE_METHOD = "DOPRI853"
REFERENCE_TOL = 1e-12
FIT_CEILING = 0.1
# errors within this factor of the reference tolerance are left out of slope fits;
# at 10x the reference error moves log2(error) by at most ~0.14
FLOOR_FACTOR = 10.0

# Jacobian products used when the experiment does not say otherwise
_DEFAULT_JVP = {"ERK": "fd", "SDIRK": "exact", "ROS": "exact", "ROW": "fd", "ROK": "fd"}


class ExperimentError(ValueError):
    """Malformed experiment description (bad names, lists or combinations)."""


@dataclass
class ExperimentSpec:
    """Everything needed to rerun one experiment grid.

    ``jvp_mode`` is either one mode for all methods or a ``{method: mode}``
    mapping; methods left out fall back to a per-family default (exact
    products for SDIRK/ROS, finite differences for ROW/ROK).
    ``options`` are extra :class:`IntegrationConfig` fields.
    """

    kind: str
    problem: str = "lorenz96"
    problem_params: dict = field(default_factory=dict)
    methods: list = field(default_factory=lambda: ["ERK4"])
    steps: Optional[list] = None
    tols: Optional[list] = None
    krylov_dims: list = field(default_factory=lambda: [4])
    jvp_mode: Union[None, str, dict] = None
    out: Optional[str] = None
    seed: int = 0
    reference_tol: Optional[float] = None
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        self.methods = [str(m) for m in self.methods]
        self.krylov_dims = [int(m) for m in self.krylov_dims]
        if self.steps is not None:
            self.steps = [float(h) for h in self.steps]
        if self.tols is not None:
            self.tols = [float(t) for t in self.tols]

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ExperimentError(f"unknown experiment fields: {', '.join(sorted(unknown))}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentSpec":
        if self.kind not in KINDS:
            raise ExperimentError(f"unknown experiment kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.problem.lower().replace("-", "").replace("_", "") not in _problems.available():
            raise ExperimentError(f"unknown problem {self.problem!r}; available: {', '.join(_problems.available())}")
        for m in self.methods:
            try:
                registry_get(m)
            except KeyError as exc:
                raise ExperimentError(exc.args[0]) from None
        if self.kind != "eigs" and not self.methods:
            raise ExperimentError("at least one method is required")
        for name, seq in (("step", self.steps), ("tolerance", self.tols)):
            if seq is None:
                continue
            if any(not (x > 0 and math.isfinite(x)) for x in seq):
                raise ExperimentError(f"{name} list must hold positive finite numbers")
            if any(b >= a for a, b in zip(seq, seq[1:])):
                raise ExperimentError(f"{name} list must be strictly decreasing")
        if any(m < 0 for m in self.krylov_dims) or not self.krylov_dims:
            raise ExperimentError("Krylov dimensions must be a non-empty list of non-negative integers")
        if self.kind == "convergence":
            if not self.steps or len(self.steps) < 4:
                raise ExperimentError("a convergence study needs at least 4 step sizes")
        if self.kind in ("work-precision", "step-trace") and not self.tols:
            raise ExperimentError(f"{self.kind} needs a tolerance list")
        if self.kind == "step-trace" and len(self.methods) != 1:
            raise ExperimentError("step-trace takes exactly one method")
        if isinstance(self.jvp_mode, dict):
            for k, v in self.jvp_mode.items():
                if v not in ("fd", "exact"):
                    raise ExperimentError(f"jvp mode for {k} must be 'fd' or 'exact'")
        elif self.jvp_mode not in (None, "fd", "exact"):
            raise ExperimentError("jvp_mode must be 'fd', 'exact' or a per-method mapping")
        return self

    # helpers -------------------------------------------------------------

    def build_problem(self) -> OdeProblem:
        return _problems.get_problem(self.problem, **self.problem_params)

    def jvp_for(self, method: str) -> str:
        tab = registry_get(method)
        if isinstance(self.jvp_mode, dict):
            for k, v in self.jvp_mode.items():
                if k.lower() == tab.name.lower():
                    return v
            return _DEFAULT_JVP[tab.family]
        return self.jvp_mode or _DEFAULT_JVP[tab.family]

    def grid(self):
        """``(method_name, M or None)`` pairs; only ROK methods fan out over M."""
        cells = []
        for m in self.methods:
            tab = registry_get(m)
            dims = self.krylov_dims if tab.family == "ROK" else [None]
            cells.extend((tab.name, M) for M in dims)
        return cells


@dataclass
class ExperimentRecord:
    method: str
    problem: str
    mode: str
    h: Optional[float]
    tol: Optional[float]
    M: Optional[int]
    jvp_mode: str
    error_l2: Optional[float]
    steps_accepted: int
    steps_rejected: int
    rhs_evals: int
    jvp_evals: int
    linear_iters: int
    newton_iters: int
    wall_seconds: float
    status: str

    @property
    def success(self) -> bool:
        return self.status == "success"

    def as_row(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(rows, path=None, columns=CSV_COLUMNS) -> str:
    """Write records or dicts as CSV (``%.17g`` floats, empty cells for missing values)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = r.as_row() if hasattr(r, "as_row") else r
        w.writerow([_fmt(d.get(c)) for c in columns])
    text = buf.getvalue()
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def write_json(rows, path=None) -> str:
    data = [r.as_row() if hasattr(r, "as_row") else dict(r) for r in rows]
    text = json.dumps(data, indent=1, default=_json_default)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    return text


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --- reference solutions ------------------------------------------------

@dataclass
class ReferenceSolution:
    y: np.ndarray
    tol: float
    meta: dict
    path: Optional[Path] = None


def reference_dir() -> Path:
    return Path(os.environ.get("RKBENCH_REFERENCE_DIR", "references"))


def reference_meta(problem: OdeProblem, tol: float) -> dict:
    return {
        "problem": problem.name,
        "params": json.loads(json.dumps(problem.params, sort_keys=True, default=_json_default)),
        "t0": problem.t0,
        "tF": problem.tF,
        "y0_sha256": hashlib.sha256(np.ascontiguousarray(problem.y0).tobytes()).hexdigest(),
        "tol": float(tol),
        "method": REFERENCE_METHOD,
    }


def reference_path(problem: OdeProblem, tol: float, directory=None) -> Path:
    meta = reference_meta(problem, tol)
    digest = hashlib.sha256(json.dumps(meta, sort_keys=True).encode()).hexdigest()[:16]
    base = reference_dir() if directory is None else Path(directory)
    return base / f"{problem.name}-{digest}.json"


def compute_reference(problem: OdeProblem, tol: float = REFERENCE_TOL) -> np.ndarray:
    res = adaptive_drive(problem, REFERENCE_METHOD,
                         IntegrationConfig(method=REFERENCE_METHOD, abs_tol=tol, rel_tol=tol,
                                           max_steps=10_000_000))
    if not res.success:
        raise RuntimeError(f"reference integration failed: {res.status}")
    return res.y


def get_reference(problem: OdeProblem, tol: float = REFERENCE_TOL, directory=None,
                  cache: bool = True) -> ReferenceSolution:
    """Load the stored reference for ``problem`` at ``tol``, computing and storing it if absent.

    The file name hashes the problem name, parameters, window, initial state
    and tolerance; the stored metadata is re-checked on load.
    """
    path = reference_path(problem, tol, directory)
    meta = reference_meta(problem, tol)
    if cache and path.exists():
        data = json.loads(path.read_text())
        if data.get("meta") != meta:
            raise RuntimeError(f"reference file {path} was built for different parameters")
        y = np.array(data["y"], dtype=float)
        if y.shape != (problem.dimension,):
            raise RuntimeError(f"reference file {path} has the wrong length")
        return ReferenceSolution(y, tol, meta, path)
    y = compute_reference(problem, tol)
    if cache:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"meta": meta, "y": y.tolist()}, indent=1) + "\n")
        tmp.replace(path)
    return ReferenceSolution(y, tol, meta, path if cache else None)


def reference_tol_for(spec: ExperimentSpec) -> float:
    """Reference tolerance: explicit, else 1e-12 or 100x tighter than the tightest run tolerance."""
    if spec.reference_tol is not None:
        return float(spec.reference_tol)
    if spec.tols:
        return min(REFERENCE_TOL, 0.01 * min(spec.tols))
    return REFERENCE_TOL


# --- slope fitting ------------------------------------------------------

@dataclass
class SlopeFit:
    slope: Optional[float]
    points: int
    used: list
    window: tuple

    @property
    def determinate(self) -> bool:
        return self.slope is not None

    def describe(self) -> str:
        if self.slope is None:
            return f"indeterminate ({self.points} usable point(s))"
        return f"{self.slope:.3f} over {self.points} points"


def fit_slope(hs, errors, floor: float = 0.0, ceiling: float = FIT_CEILING,
              min_points: int = 3) -> SlopeFit:
    """Least-squares slope of ``log2(error)`` against ``log2(h)``.

    Only points with ``floor <= error <= ceiling`` (and finite, positive
    errors) take part; with fewer than ``min_points`` the slope is ``None``.
    """
    hs = np.asarray(hs, dtype=float)
    errs = np.asarray([np.nan if e is None else e for e in errors], dtype=float)
    ok = np.isfinite(errs) & (errs > 0) & (errs >= floor) & (errs <= ceiling)
    idx = [int(i) for i in np.flatnonzero(ok)]
    if len(idx) < min_points:
        return SlopeFit(None, len(idx), idx, (floor, ceiling))
    slope, _ = np.polyfit(np.log2(hs[idx]), np.log2(errs[idx]), 1)
    return SlopeFit(float(slope), len(idx), idx, (floor, ceiling))


# --- runners ------------------------------------------------------------

def _config_for(spec: ExperimentSpec, method: str, M: Optional[int], **kw) -> IntegrationConfig:
    opts = dict(spec.options)
    opts.update(kw)
    opts.setdefault("jvp_mode", spec.jvp_for(method))
    if M is not None:
        opts["krylov_dim"] = M
    return IntegrationConfig(method=method, **opts)


def _record(spec, problem, method, M, cfg, res: IntegrationResult, wall, mode, h=None, tol=None,
            y_ref=None) -> ExperimentRecord:
    err = l2_error(res.y, y_ref) if (y_ref is not None and res.success) else None
    return ExperimentRecord(
        method=method, problem=problem.name, mode=mode, h=h, tol=tol, M=M,
        jvp_mode=cfg.jvp_mode, error_l2=err,
        steps_accepted=res.accepted_steps, steps_rejected=res.rejected_steps,
        rhs_evals=res.rhs_evals, jvp_evals=res.jvp_evals, linear_iters=res.linear_iters,
        newton_iters=res.newton_iters, wall_seconds=wall, status=res.status)


def _timed(fn, *args):
    t = time.perf_counter()
    res = fn(*args)
    return res, time.perf_counter() - t


@dataclass
class ConvergenceResult:
    records: list
    slopes: dict          # (method, M) -> SlopeFit
    reference: ReferenceSolution


def run_convergence(spec: ExperimentSpec, reference_dir_=None) -> ConvergenceResult:
    """Fixed-step runs at every step size, errors against the stored reference, fitted slopes.

    The fit window is ``[100 * reference tolerance, 0.1]``: points within
    100x of the reference accuracy or above 0.1 are left out.
    """
    spec.validate()
    if spec.kind != "convergence":
        raise ExperimentError("run_convergence needs a convergence spec")
    problem = spec.build_problem()
    ref = get_reference(problem, reference_tol_for(spec), reference_dir_)
    records, slopes = [], {}
    for method, M in spec.grid():
        errs = []
        for h in spec.steps:
            cfg = _config_for(spec, method, M, mode="fixed", h0=h)
            res, wall = _timed(fixed_drive, problem, method, h, cfg)
            rec = _record(spec, problem, method, M, cfg, res, wall, "fixed", h=h, y_ref=ref.y)
            records.append(rec)
            errs.append(rec.error_l2)
        slopes[(method, M)] = fit_slope(spec.steps, errs, FLOOR_FACTOR * ref.tol)
    return ConvergenceResult(records, slopes, ref)


def run_work_precision(spec: ExperimentSpec, reference_dir_=None) -> list:
    """Adaptive runs with ``abs_tol = rel_tol = tol`` for every method, M and tolerance.

    Failed runs are kept as rows with their status. Rows are ordered by
    method, then M, then decreasing tolerance.
    """
    spec.validate()
    problem = spec.build_problem()
    ref = get_reference(problem, reference_tol_for(spec), reference_dir_)
    records = []
    for method, M in spec.grid():
        for tol in spec.tols:
            cfg = _config_for(spec, method, M, abs_tol=tol, rel_tol=tol)
            res, wall = _timed(adaptive_drive, problem, method, cfg)
            records.append(_record(spec, problem, method, M, cfg, res, wall, "adaptive",
                                   tol=tol, y_ref=ref.y))
    records.sort(key=lambda r: (r.method, -1 if r.M is None else r.M, -r.tol))
    return records


def run_integrate(spec: ExperimentSpec, reference_dir_=None, with_error: bool = True) -> list:
    """One run per method (and M): fixed-step if ``steps`` is given, else adaptive at each tolerance."""
    spec.validate()
    problem = spec.build_problem()
    y_ref = get_reference(problem, reference_tol_for(spec), reference_dir_).y if with_error else None
    records = []
    for method, M in spec.grid():
        if spec.steps:
            for h in spec.steps:
                cfg = _config_for(spec, method, M, mode="fixed", h0=h)
                res, wall = _timed(fixed_drive, problem, method, h, cfg)
                records.append(_record(spec, problem, method, M, cfg, res, wall, "fixed", h=h, y_ref=y_ref))
        else:
            for tol in spec.tols or [1e-6]:
                cfg = _config_for(spec, method, M, abs_tol=tol, rel_tol=tol)
                res, wall = _timed(adaptive_drive, problem, method, cfg)
                records.append(_record(spec, problem, method, M, cfg, res, wall, "adaptive",
                                       tol=tol, y_ref=y_ref))
    return records


def run_step_trace(spec: ExperimentSpec) -> list:
    """Per-step ``(t, h, accepted)`` rows of adaptive runs, rejections included."""
    spec.validate()
    problem = spec.build_problem()
    rows = []
    for method, M in spec.grid():
        for tol in spec.tols:
            cfg = _config_for(spec, method, M, abs_tol=tol, rel_tol=tol)
            res = adaptive_drive(problem, method, cfg)
            for i, (t, h, acc) in enumerate(res.step_size_trace):
                rows.append({"method": method, "tol": tol, "M": M, "step": i, "t": t, "h": h,
                             "accepted": bool(acc), "status": res.status})
    return rows


def mean_accepted_step(rows, method=None, tol=None) -> float:
    hs = [r["h"] for r in rows if r["accepted"]
          and (method is None or r["method"] == method) and (tol is None or r["tol"] == tol)]
    return float(np.mean(hs)) if hs else float("nan")


@dataclass
class EigResult:
    ritz: np.ndarray        # complex Ritz values, sorted by real part
    residuals: np.ndarray   # ||A x - theta x|| for unit Ritz vectors x = V z
    M: int
    m_eff: int
    breakdown: bool

    def rows(self) -> list:
        return [{"index": i, "real": float(th.real), "imag": float(th.imag), "residual": float(r),
                 "M": self.M, "M_eff": self.m_eff, "breakdown": self.breakdown}
                for i, (th, r) in enumerate(zip(self.ritz, self.residuals))]


def ritz_pairs(problem: OdeProblem, M: int, jvp_mode: str = "exact", y=None, seed_vector=None,
               rng_seed: int = 0) -> EigResult:
    """Ritz values of the Jacobian at ``y`` from an ``M``-step Arnoldi process.

    The seed is ``f(y)``; when that vanishes (an equilibrium) a random
    vector drawn from ``rng_seed`` is used instead.
    """
    from .core import Evaluator

    ev = Evaluator(problem)
    y = problem.y0.copy() if y is None else np.asarray(y, dtype=float)
    if not 1 <= M <= problem.dimension:
        raise ExperimentError(f"need 1 <= M <= N={problem.dimension}, got M={M}")
    fy = ev.rhs(y)
    op = jacobian_operator(ev, y, fy, jvp_mode)
    seed = fy if seed_vector is None else np.asarray(seed_vector, dtype=float)
    if not np.any(seed):
        seed = np.random.default_rng(rng_seed).standard_normal(problem.dimension)
    basis = build_arnoldi(op, seed, M)
    theta, Z = np.linalg.eig(basis.H)
    order = np.lexsort((theta.imag, theta.real))
    theta, Z = theta[order], Z[:, order]
    res = np.empty(len(theta))
    for i in range(len(theta)):
        x = basis.V @ Z[:, i]
        x = x / np.linalg.norm(x)
        Ax = op(x.real) + (1j * op(x.imag) if np.any(x.imag) else 0.0)
        res[i] = np.linalg.norm(Ax - theta[i] * x)
    return EigResult(theta, res, M, basis.m_eff, basis.breakdown)


def run_eigs(spec: ExperimentSpec) -> EigResult:
    spec.validate()
    problem = spec.build_problem()
    M = spec.krylov_dims[0]
    if M > problem.dimension:
        raise ExperimentError(f"M={M} exceeds the problem dimension {problem.dimension}")
    mode = spec.jvp_mode if isinstance(spec.jvp_mode, str) else None
    if mode is None:
        mode = "exact" if problem.exact_jvp is not None else "fd"
    return ritz_pairs(problem, M, mode, rng_seed=spec.seed)
