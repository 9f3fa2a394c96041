"""Problem abstraction, norms and the shared integration contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

RhsFn = Callable[[np.ndarray], np.ndarray]
JvpFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
JacFn = Callable[[np.ndarray], np.ndarray]


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up in a state, a right-hand side or a norm input."""

    def __init__(self, what: str, index: int):
        super().__init__(f"non-finite value in {what} at index {index}")
        self.what = what
        self.index = index


class SolverFailure(RuntimeError):
    """An inner solver (Newton, GMRES, reduced LU) could not deliver."""


def check_finite(x: np.ndarray, what: str = "vector") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise NonFiniteError(what, bad)
    return x


def as_state(y, n: Optional[int] = None, what: str = "state") -> np.ndarray:
    """Copy ``y`` into a finite float64 vector, optionally checking its length."""
    y = np.array(y, dtype=float).reshape(-1)
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{what} has length {y.shape[0]}, expected {n}")
    return check_finite(y, what)


@dataclass(frozen=True)
class OdeProblem:
    """Autonomous IVP ``y' = f(y)`` on ``[t0, tF]``.

    Non-autonomous systems are handled by appending ``t`` to the state with
    derivative 1. ``exact_jvp`` and ``dense_jacobian`` are optional; the
    dense form is meant for small verification problems only.
    """

    name: str
    dimension: int
    rhs: RhsFn
    y0: np.ndarray
    t0: float = 0.0
    tF: float = 1.0
    exact_jvp: Optional[JvpFn] = None
    dense_jacobian: Optional[JacFn] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.t0 < self.tF:
            raise ValueError(f"need t0 < tF, got [{self.t0}, {self.tF}]")
        y0 = as_state(self.y0, self.dimension, "y0")
        y0.flags.writeable = False
        object.__setattr__(self, "y0", y0)

    @property
    def span(self) -> float:
        return self.tF - self.t0

    def with_window(self, t0: Optional[float] = None, tF: Optional[float] = None,
                    y0=None) -> "OdeProblem":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        if t0 is not None:
            kw["t0"] = t0
        if tF is not None:
            kw["tF"] = tF
        if y0 is not None:
            kw["y0"] = y0
        return OdeProblem(**kw)

    def check(self, y=None, v=None, rtol: float = 1e-12) -> None:
        """Verification hook: output shapes, and exact JVP vs dense Jacobian."""
        y = self.y0 if y is None else as_state(y, self.dimension)
        f = np.asarray(self.rhs(y))
        if f.shape != (self.dimension,):
            raise ValueError(f"rhs returned shape {f.shape}, expected ({self.dimension},)")
        if self.exact_jvp is not None and self.dense_jacobian is not None:
            if v is None:
                v = np.random.default_rng(0).standard_normal(self.dimension)
            jv = self.exact_jvp(y, v)
            dv = self.dense_jacobian(y) @ v
            scale = max(np.linalg.norm(dv), 1e-300)
            if np.linalg.norm(jv - dv) > rtol * scale:
                raise ValueError("exact_jvp disagrees with dense_jacobian")


@dataclass
class WorkCounters:
    rhs_evals: int = 0
    jvp_evals: int = 0
    linear_iters: int = 0
    newton_iters: int = 0

    def __iadd__(self, other: "WorkCounters") -> "WorkCounters":
        self.rhs_evals += other.rhs_evals
        self.jvp_evals += other.jvp_evals
        self.linear_iters += other.linear_iters
        self.newton_iters += other.newton_iters
        return self

    def copy(self) -> "WorkCounters":
        return WorkCounters(self.rhs_evals, self.jvp_evals, self.linear_iters, self.newton_iters)


class Evaluator:
    """Counting, finiteness-checking front end to an :class:`OdeProblem`.

    One evaluator per step (or per run); it is not shared between threads.
    """

    def __init__(self, problem: OdeProblem, work: Optional[WorkCounters] = None):
        self.problem = problem
        self.work = WorkCounters() if work is None else work

    def rhs(self, y: np.ndarray) -> np.ndarray:
        self.work.rhs_evals += 1
        return self._call(y)

    def _call(self, y: np.ndarray, what: str = "rhs output") -> np.ndarray:
        out = np.asarray(self.problem.rhs(y), dtype=float)
        if out.shape != y.shape:
            raise ValueError(f"rhs returned shape {out.shape} for input {y.shape}")
        return check_finite(out, what)

    def rhs_for_jvp(self, y: np.ndarray) -> np.ndarray:
        """RHS call made on behalf of a finite-difference product (counted as a JVP)."""
        self.work.jvp_evals += 1
        return self._call(y, "perturbed rhs evaluation")

    def exact_jvp(self, y: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self.problem.exact_jvp is None:
            raise ValueError(f"problem {self.problem.name!r} has no exact JVP")
        self.work.jvp_evals += 1
        return check_finite(np.asarray(self.problem.exact_jvp(y, v), dtype=float), "exact jvp")


FIXED_STEP_INNER_TOL = 1e-11


@dataclass
class IntegrationConfig:
    """Run configuration shared by the fixed-step and adaptive drivers.

    ``newton_tol`` and ``linear_rel_tol`` default to a cascade derived from
    the step tolerances when left as ``None``.
    """

    method: str = "ROK4"
    mode: str = "adaptive"
    h0: Optional[float] = None
    abs_tol: float = 1e-6
    rel_tol: float = 1e-6
    max_steps: int = 200_000
    krylov_dim: int = 4
    jvp_mode: str = "fd"
    newton_tol: Optional[float] = None
    newton_max: int = 10
    linear_rel_tol: Optional[float] = None
    gmres_restart: int = 30
    gmres_max_iters: int = 100
    frozen_jacobian: bool = False
    max_consecutive_rejections: int = 20
    # optional (y, f(y)) -> matvec callable replacing the Jacobian in ROS/ROW stages
    jac_approx: Optional[Callable] = None

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if not self.rel_tol >= 0:
            raise ValueError("rel_tol must be non-negative")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.krylov_dim < 0:
            raise ValueError("krylov_dim must be non-negative")
        if self.jvp_mode not in ("fd", "exact"):
            raise ValueError(f"jvp_mode must be 'fd' or 'exact', got {self.jvp_mode!r}")
        if self.h0 is not None and not self.h0 > 0:
            raise ValueError("h0 must be positive")

    @property
    def tol_floor(self) -> float:
        return min(self.abs_tol, self.rel_tol) if self.rel_tol > 0 else self.abs_tol

    @property
    def inner_tol_base(self) -> float:
        """Scale for the inner-solver cascade.

        Adaptive runs use the step tolerance; fixed-step runs have no error
        test, so the inner solves are driven close to round-off instead.
        """
        return self.tol_floor if self.mode == "adaptive" else FIXED_STEP_INNER_TOL

    @property
    def effective_newton_tol(self) -> float:
        return self.newton_tol if self.newton_tol is not None else 0.1 * self.inner_tol_base

    @property
    def effective_linear_tol(self) -> float:
        """Relative GMRES tolerance for Rosenbrock stage solves."""
        return self.linear_rel_tol if self.linear_rel_tol is not None else 0.1 * self.inner_tol_base

    def validate_for(self, problem: OdeProblem) -> None:
        if self.h0 is not None and self.h0 > problem.span * (1 + 1e-12):
            raise ValueError(f"h0={self.h0} exceeds the integration window {problem.span}")


@dataclass
class IntegrationResult:
    y: np.ndarray
    t: float
    accepted_steps: int = 0
    rejected_steps: int = 0
    work: WorkCounters = field(default_factory=WorkCounters)
    # (t, h, accepted) for every attempted step, rejections included
    step_size_trace: list = field(default_factory=list)
    status: str = "success"
    krylov_breakdowns: int = 0

    @property
    def success(self) -> bool:
        return self.status == "success"

    @property
    def rhs_evals(self) -> int:
        return self.work.rhs_evals

    @property
    def jvp_evals(self) -> int:
        return self.work.jvp_evals

    @property
    def linear_iters(self) -> int:
        return self.work.linear_iters

    @property
    def newton_iters(self) -> int:
        return self.work.newton_iters


def weighted_error_norm(err, y_old, y_new, abs_tol: float, rel_tol: float) -> float:
    """Weighted RMS norm used for step acceptance; a value <= 1 accepts.

    ``sqrt(mean((err_i / (abs_tol + rel_tol * max(|y_old_i|, |y_new_i|)))**2))``
    """
    err = np.asarray(err, dtype=float)
    y_old = np.asarray(y_old, dtype=float)
    y_new = np.asarray(y_new, dtype=float)
    if not (err.shape == y_old.shape == y_new.shape):
        raise ValueError("err, y_old and y_new must have the same length")
    if not abs_tol > 0 or rel_tol < 0:
        raise ValueError("tolerances must be positive")
    for what, v in (("error estimate", err), ("y_old", y_old), ("y_new", y_new)):
        check_finite(v, what)
    scale = abs_tol + rel_tol * np.maximum(np.abs(y_old), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def l2_error(y, y_ref) -> float:
    """Unweighted Euclidean distance to a reference state."""
    y = np.asarray(y, dtype=float)
    y_ref = np.asarray(y_ref, dtype=float)
    if y.shape != y_ref.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {y_ref.shape}")
    return float(np.linalg.norm(y - y_ref))


def rms(x: np.ndarray) -> float:
    return float(np.linalg.norm(x) / math.sqrt(max(x.size, 1)))
