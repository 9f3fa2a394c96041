"""One-step schemes (ERK, SDIRK, ROS/ROW, ROK) and the fixed-step / adaptive drivers."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .core import (Evaluator, IntegrationConfig, IntegrationResult, NonFiniteError, OdeProblem,
                   SolverFailure, WorkCounters, as_state, check_finite, weighted_error_norm)
from .matfree import (LinearOperator, build_arnoldi, gmres_solve, jacobian_operator,
                      newton_solve_stage)
from .tableaus import MethodTableau, registry_get

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0
ERR_FLOOR = 1e-10


@dataclass
class StepOutcome:
    y: Optional[np.ndarray]
    error: Optional[np.ndarray]
    work: WorkCounters = field(default_factory=WorkCounters)
    status: str = "ok"
    m_eff: Optional[int] = None
    krylov_breakdown: bool = False

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def _guarded(step):
    """Turn solver and non-finite failures inside a step into a failed outcome."""

    @functools.wraps(step)
    def wrapper(problem, tableau, y, h, *args, **kwargs):
        ev = Evaluator(problem)
        try:
            return step(ev, tableau, np.asarray(y, dtype=float), float(h), *args, **kwargs)
        except (NonFiniteError, SolverFailure, FloatingPointError) as exc:
            return StepOutcome(None, None, ev.work, f"failed: {exc}")

    return wrapper


def _require(tableau: MethodTableau, *families):
    if tableau.family not in families:
        raise ValueError(f"{tableau.name} is a {tableau.family} tableau; expected {'/'.join(families)}")


def _combine(y, K, weights, scale=1.0):
    return y + scale * (weights @ K)


def _estimate(tableau, K, scale=1.0):
    if tableau.bhat is None:
        return None
    return scale * ((tableau.b - tableau.bhat) @ K)


@_guarded
def erk_step(ev: Evaluator, tableau: MethodTableau, y: np.ndarray, h: float) -> StepOutcome:
    """Explicit Runge-Kutta step; exactly ``s`` right-hand-side calls."""
    _require(tableau, "ERK")
    a = tableau.a
    s = tableau.stages
    K = np.zeros((s, y.shape[0]))
    for i in range(s):
        yi = y + h * (a[i, :i] @ K[:i]) if i else y
        K[i] = ev.rhs(yi)
    y_new = check_finite(_combine(y, K, tableau.b, h), "step result")
    return StepOutcome(y_new, _estimate(tableau, K, h), ev.work)


@_guarded
def sdirk_step(ev: Evaluator, tableau: MethodTableau, y: np.ndarray, h: float, *,
               jvp_mode: str = "exact", newton_tol: float = 1e-10, newton_max: int = 10,
               linear_rel_tol: float = 0.01, frozen_jacobian: bool = False,
               restart: int = 30, max_linear_iters: int = 100) -> StepOutcome:
    """SDIRK step; each stage equation ``k = f(xi + h gamma k)`` is solved by Newton-GMRES.

    All stages share the shift ``gamma``. With ``frozen_jacobian`` the
    Newton matrices use the Jacobian at the step's base point.
    """
    _require(tableau, "SDIRK")
    a = tableau.a
    s = tableau.stages
    gamma = tableau.gamma
    K = np.zeros((s, y.shape[0]))
    for i in range(s):
        xi = y + h * (a[i, :i] @ K[:i]) if i else y.copy()
        k, stats = newton_solve_stage(
            ev.problem, xi, h, gamma, jvp_mode, newton_tol, newton_max, linear_rel_tol,
            evaluator=ev, jac_point=y if frozen_jacobian else None,
            restart=restart, max_linear_iters=max_linear_iters)
        if not stats.converged:
            raise SolverFailure(f"stage {i + 1}: {stats.status} (residual {stats.residual:.3e})")
        K[i] = k
    y_new = check_finite(_combine(y, K, tableau.b, h), "step result")
    return StepOutcome(y_new, _estimate(tableau, K, h), ev.work)


@_guarded
def ros_step(ev: Evaluator, tableau: MethodTableau, y: np.ndarray, h: float,
             jacobian_mode: str = "exact", *, linear_rel_tol: float = 1e-10,
             restart: int = 30, max_linear_iters: int = 100,
             jac_approx: Optional[Callable] = None) -> StepOutcome:
    """Rosenbrock / Rosenbrock-W step with GMRES stage solves.

    Stage ``i`` solves ``(I - h gamma J) k_i = f(Y_i) + h J sum_{j<i} gamma_ij k_j``
    with ``J`` frozen at ``y`` for the whole step. ``jac_approx(y, f(y))``
    may supply a matvec used in place of the Jacobian (W-methods tolerate any).
    """
    _require(tableau, "ROS", "ROW")
    alpha, G = tableau.a, tableau.gamma_matrix
    s = tableau.stages
    gamma = tableau.gamma
    fy = ev.rhs(y)
    if jac_approx is not None:
        matvec = jac_approx(y, fy)

        def counted(v, _mv=matvec):
            ev.work.jvp_evals += 1
            return np.asarray(_mv(v), dtype=float)

        J = LinearOperator(y.shape[0], counted, "dense-backed")
    else:
        J = jacobian_operator(ev, y, fy, jacobian_mode)
    op = J.shifted(h, gamma)
    K = np.zeros((s, y.shape[0]))
    for i in range(s):
        F = fy if i == 0 else ev.rhs(y + h * (alpha[i, :i] @ K[:i]))
        rhs = F
        if i:
            coupling = G[i, :i] @ K[:i]
            if np.any(coupling):
                rhs = F + h * J(coupling)
        sol = gmres_solve(op, rhs, None, linear_rel_tol, max_linear_iters, restart)
        ev.work.linear_iters += sol.iterations
        if not sol.converged:
            raise SolverFailure(f"stage {i + 1} GMRES: {sol.status} (rel. residual {sol.rel_residual:.2e})")
        K[i] = sol.x
    y_new = check_finite(_combine(y, K, tableau.b, h), "step result")
    return StepOutcome(y_new, _estimate(tableau, K, h), ev.work)


@_guarded
def rok_step(ev: Evaluator, tableau: MethodTableau, y: np.ndarray, h: float, M: int = 4,
             jvp_mode: str = "fd") -> StepOutcome:
    """Rosenbrock-Krylov step.

    One Arnoldi basis of ``K_M(J, f(y))`` and one ``M x M`` LU are shared
    by all stages; stage vectors carry the factor ``h``::

        F_i   = f(y + sum_j alpha_ij k_j)
        phi_i = V^T F_i
        (I - h gamma H) lambda_i = h phi_i + h H sum_j gamma_ij lambda_j
        k_i   = V lambda_i + h (F_i - V phi_i)

    ``M = 0`` leaves the explicit scheme ``k_i = h F_i``.
    """
    _require(tableau, "ROK")
    if M < 0:
        raise ValueError("Krylov dimension must be non-negative")
    alpha, G = tableau.a, tableau.gamma_matrix
    s = tableau.stages
    gamma = tableau.gamma
    n = y.shape[0]
    F1 = ev.rhs(y)
    M = min(M, n)
    V = H = lu = None
    m_eff, breakdown = 0, False
    if M > 0 and np.any(F1):
        basis = build_arnoldi(jacobian_operator(ev, y, F1, jvp_mode), F1, M)
        V, H, m_eff, breakdown = basis.V, basis.H, basis.m_eff, basis.breakdown
        reduced = np.eye(m_eff) - h * gamma * H
        lu = lu_factor(reduced, check_finite=True)
        if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * max(np.abs(reduced).max(), 1.0):
            raise SolverFailure("singular reduced matrix I - h*gamma*H")
    K = np.zeros((s, n))
    lam = np.zeros((s, m_eff))
    for i in range(s):
        F = F1 if i == 0 else ev.rhs(y + alpha[i, :i] @ K[:i])
        if m_eff == 0:
            K[i] = h * F
            continue
        phi = V.T @ F
        rhs = h * phi
        if i:
            rhs = rhs + h * (H @ (G[i, :i] @ lam[:i]))
        lam[i] = lu_solve(lu, rhs)
        K[i] = V @ lam[i] + h * (F - V @ phi)
    y_new = check_finite(y + tableau.b @ K, "step result")
    err = None if tableau.bhat is None else (tableau.b - tableau.bhat) @ K
    return StepOutcome(y_new, err, ev.work, m_eff=m_eff, krylov_breakdown=breakdown)


# --- binding a tableau to its options -----------------------------------

@dataclass
class Stepper:
    """A tableau plus the solver options from a config, callable as ``step(problem, y, h)``."""

    tableau: MethodTableau
    config: IntegrationConfig

    @property
    def name(self) -> str:
        return self.tableau.name

    def step(self, problem: OdeProblem, y, h: float) -> StepOutcome:
        t, cfg = self.tableau, self.config
        if t.family == "ERK":
            return erk_step(problem, t, y, h)
        if t.family == "SDIRK":
            return sdirk_step(
                problem, t, y, h, jvp_mode=cfg.jvp_mode, newton_tol=cfg.effective_newton_tol,
                newton_max=cfg.newton_max,
                linear_rel_tol=0.01 if cfg.linear_rel_tol is None else cfg.linear_rel_tol,
                frozen_jacobian=cfg.frozen_jacobian, restart=cfg.gmres_restart,
                max_linear_iters=cfg.gmres_max_iters)
        if t.family in ("ROS", "ROW"):
            return ros_step(problem, t, y, h, cfg.jvp_mode, linear_rel_tol=cfg.effective_linear_tol,
                            restart=cfg.gmres_restart, max_linear_iters=cfg.gmres_max_iters,
                            jac_approx=cfg.jac_approx)
        return rok_step(problem, t, y, h, cfg.krylov_dim, cfg.jvp_mode)


def make_stepper(method: Union[str, MethodTableau, Stepper],
                 config: Optional[IntegrationConfig] = None) -> Stepper:
    if isinstance(method, Stepper):
        return method if config is None else Stepper(method.tableau, config)
    tableau = method if isinstance(method, MethodTableau) else registry_get(method)
    if config is None:
        config = IntegrationConfig(method=tableau.name)
    return Stepper(tableau, config)


# --- drivers ------------------------------------------------------------

def step_factor(err: float, q: int) -> float:
    """Controller factor ``clamp(0.9 * err^(-1/(q+1)), 0.2, 5)`` with ``err`` floored at 1e-10."""
    err = max(err, ERR_FLOOR)
    return min(FAC_MAX, max(FAC_MIN, SAFETY * err ** (-1.0 / (q + 1))))


def _fixed_grid(span: float, h: float) -> int:
    n = span / h
    nr = round(n)
    if nr >= 1 and abs(nr - n) <= 1e-9 * max(n, 1.0):
        return int(nr)
    return int(math.ceil(n))


def fixed_drive(problem: OdeProblem, method, h: float,
                config: Optional[IntegrationConfig] = None) -> IntegrationResult:
    """Constant steps of size ``h``; the last one is shortened to land on ``tF``."""
    if not h > 0:
        raise ValueError("step size must be positive")
    stepper = make_stepper(method, config)
    nsteps = _fixed_grid(problem.span, h)
    y = problem.y0.copy()
    res = IntegrationResult(y=y, t=problem.t0)
    t = problem.t0
    for k in range(nsteps):
        t_next = problem.tF if k == nsteps - 1 else problem.t0 + (k + 1) * h
        hk = t_next - t
        out = stepper.step(problem, y, hk)
        res.work += out.work
        res.step_size_trace.append((t, hk, out.ok))
        if not out.ok:
            res.rejected_steps += 1
            res.status = f"failure: step {k + 1} at t={t:.6g}: {out.status}"
            break
        res.krylov_breakdowns += int(out.krylov_breakdown)
        y, t = out.y, t_next
        res.accepted_steps += 1
    res.y, res.t = y, t
    return res


def _doubling_step(stepper: Stepper, problem, y, h):
    """Step-doubling estimate for tableaus without embedded weights."""
    full = stepper.step(problem, y, h)
    half1 = stepper.step(problem, y, 0.5 * h)
    work = full.work.copy()
    work += half1.work
    if not (full.ok and half1.ok):
        return StepOutcome(None, None, work, full.status if not full.ok else half1.status)
    half2 = stepper.step(problem, half1.y, 0.5 * h)
    work += half2.work
    if not half2.ok:
        return StepOutcome(None, None, work, half2.status)
    p = stepper.tableau.order
    err = (half2.y - full.y) / (2.0**p - 1.0)
    return StepOutcome(half2.y, err, work)


def adaptive_drive(problem: OdeProblem, method, config: Optional[IntegrationConfig] = None,
                   ) -> IntegrationResult:
    """Error-controlled integration over ``[t0, tF]``.

    A step is accepted when the weighted RMS norm of the embedded estimate
    is at most 1. Failed steps (solver failure, non-finite values) count as
    rejections and halve ``h``.
    """
    stepper = make_stepper(method, config)
    cfg = stepper.config
    cfg.validate_for(problem)
    tab = stepper.tableau
    q = tab.error_order
    attempt = stepper.step if tab.bhat is not None else functools.partial(_doubling_step, stepper)
    if tab.bhat is None:
        q = tab.order
    h = cfg.h0 if cfg.h0 is not None else 1e-3 * problem.span
    y = problem.y0.copy()
    t = problem.t0
    res = IntegrationResult(y=y, t=t)
    consecutive = 0
    t_eps = 1e-13 * max(abs(problem.tF), problem.span)
    while problem.tF - t > t_eps:
        if res.accepted_steps + res.rejected_steps >= cfg.max_steps:
            res.status = f"failure: max_steps={cfg.max_steps} reached at t={t:.6g}"
            break
        last = h >= problem.tF - t
        hk = problem.tF - t if last else h
        out = attempt(problem, y, hk)
        res.work += out.work
        if out.ok:
            err = weighted_error_norm(out.error, y, out.y, cfg.abs_tol, cfg.rel_tol)
            accepted = err <= 1.0
            factor = step_factor(err, q)
        else:
            accepted = False
            factor = 0.5
        res.step_size_trace.append((t, hk, accepted))
        if accepted:
            res.accepted_steps += 1
            res.krylov_breakdowns += int(out.krylov_breakdown)
            consecutive = 0
            y = out.y
            t = problem.tF if last else t + hk
        else:
            res.rejected_steps += 1
            consecutive += 1
            if consecutive >= cfg.max_consecutive_rejections:
                res.status = (f"failure: {consecutive} consecutive rejections at t={t:.6g}, "
                              f"h={hk:.3e}: {out.status if not out.ok else 'error test'}")
                break
        h = hk * factor
    res.y, res.t = y, t
    return res


def integrate(problem: OdeProblem, config: IntegrationConfig) -> IntegrationResult:
    """Run ``config.method`` in ``config.mode``; fixed mode needs ``config.h0``."""
    if config.mode == "fixed":
        if config.h0 is None:
            raise ValueError("fixed-step mode needs h0")
        return fixed_drive(problem, config.method, config.h0, config)
    return adaptive_drive(problem, config.method, config)
