"""Matrix-free Jacobian products, Arnoldi, restarted GMRES and the SDIRK stage Newton solve."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Evaluator, NonFiniteError, OdeProblem, WorkCounters, check_finite, rms

SQRT_EPS = math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class LinearOperator:
    """``v -> A v`` with a tag saying where ``A`` comes from.

    kind is one of ``exact-jvp``, ``fd-jvp``, ``shifted`` or ``dense-backed``.
    """

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]
    kind: str = "dense-backed"

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return self.apply(v)

    @classmethod
    def from_matrix(cls, A) -> "LinearOperator":
        A = np.asarray(A, dtype=float)
        return cls(A.shape[0], lambda v: A @ v, "dense-backed")

    def shifted(self, h: float, gamma: float) -> "LinearOperator":
        """``I - h*gamma*A``; with ``h == 0`` this is the identity and ``A`` is never applied."""
        c = h * gamma
        if c == 0.0:
            return LinearOperator(self.dimension, lambda v: np.array(v, dtype=float), "shifted")
        base = self.apply
        return LinearOperator(self.dimension, lambda v: v - c * base(v), "shifted")


def fd_epsilon(y: np.ndarray, v: np.ndarray) -> float:
    return SQRT_EPS * (1.0 + float(np.linalg.norm(y))) / float(np.linalg.norm(v))


def fd_jvp(problem: OdeProblem, y, f_y, v, evaluator: Optional[Evaluator] = None,
           eps: Optional[float] = None) -> np.ndarray:
    """One-sided difference ``(f(y + eps v) - f(y)) / eps``.

    ``f_y`` must already hold ``f(y)``. A zero direction returns zeros
    without touching the right-hand side. ``eps`` defaults to
    :func:`fd_epsilon`.
    """
    v = np.asarray(v, dtype=float)
    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return np.zeros_like(v)
    if eps is None:
        eps = fd_epsilon(y, v)
    if not math.isfinite(eps) or eps == 0.0:
        raise NonFiniteError("finite-difference epsilon", 0)
    ev = evaluator if evaluator is not None else Evaluator(problem)
    f_pert = ev.rhs_for_jvp(y + eps * v)
    return check_finite((f_pert - f_y) / eps, "finite-difference jvp")


def jacobian_operator(ev: Evaluator, y: np.ndarray, f_y: Optional[np.ndarray], mode: str) -> LinearOperator:
    """Jacobian action at ``y`` routed through the counting evaluator."""
    n = y.shape[0]
    y = np.array(y, dtype=float)
    if mode == "exact":
        return LinearOperator(n, lambda v: ev.exact_jvp(y, v), "exact-jvp")
    if mode == "fd":
        if f_y is None:
            raise ValueError("fd mode needs f(y)")
        f_y = np.array(f_y, dtype=float)
        return LinearOperator(n, lambda v: fd_jvp(ev.problem, y, f_y, v, ev), "fd-jvp")
    raise ValueError(f"unknown jvp mode {mode!r}; use 'fd' or 'exact'")


@dataclass
class KrylovBasis:
    V: np.ndarray        # N x m_eff, orthonormal columns
    H: np.ndarray        # m_eff x m_eff upper Hessenberg
    m_eff: int
    breakdown: bool
    beta: float          # norm of the seed vector


def build_arnoldi(op: LinearOperator, r0, M: int) -> KrylovBasis:
    """Modified Gram-Schmidt Arnoldi with one unconditional reorthogonalization pass.

    Applies ``op`` exactly ``m_eff`` times. A subdiagonal entry below
    ``1e-12 * ||H||`` before the last column is a happy breakdown: the basis
    is truncated and ``breakdown`` is set.
    """
    r0 = np.asarray(r0, dtype=float)
    n = r0.shape[0]
    if M < 1:
        raise ValueError("Krylov dimension must be at least 1")
    if M > n:
        raise ValueError(f"Krylov dimension {M} exceeds problem dimension {n}")
    beta = float(np.linalg.norm(r0))
    if beta == 0.0:
        raise ValueError("Arnoldi seed vector is zero")
    V = np.zeros((n, M))
    H = np.zeros((M + 1, M))
    V[:, 0] = r0 / beta
    m_eff, breakdown = M, False
    for j in range(M):
        w = np.array(op(V[:, j]), dtype=float)
        for _ in range(2):
            for i in range(j + 1):
                c = V[:, i] @ w
                H[i, j] += c
                w -= c * V[:, i]
        hnext = float(np.linalg.norm(w))
        H[j + 1, j] = hnext
        if j == M - 1:
            break
        if hnext <= 1e-12 * np.linalg.norm(H[: j + 2, : j + 1]):
            m_eff, breakdown = j + 1, True
            break
        V[:, j + 1] = w / hnext
    return KrylovBasis(V[:, :m_eff].copy(), H[:m_eff, :m_eff].copy(), m_eff, breakdown, beta)


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    rel_residual: float
    converged: bool
    status: str = "success"


def gmres_solve(op: LinearOperator, b, x0=None, rel_tol: float = 1e-8,
                max_iters: int = 100, restart: int = 30) -> GmresResult:
    """Restarted GMRES(m) with MGS Arnoldi and Givens rotations.

    Stops when the residual estimate drops below ``rel_tol * ||b||``. Running
    out of iterations, or a restart cycle that fails to reduce the residual
    by a relative 1e-14, returns ``converged=False`` with the best iterate.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return GmresResult(np.zeros(n), 0, 0.0, True)
    target = rel_tol * bnorm
    r = b - op(x) if np.any(x) else b.copy()
    rnorm = float(np.linalg.norm(r))
    iters = 0
    restart = max(1, min(restart, n))
    while True:
        if rnorm <= target:
            return GmresResult(x, iters, rnorm / bnorm, True)
        if iters >= max_iters:
            return GmresResult(x, iters, rnorm / bnorm, False, "max_iters exceeded")
        cycle_start = rnorm
        m = min(restart, max_iters - iters)
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = rnorm
        V[:, 0] = r / rnorm
        k = 0
        for j in range(m):
            w = np.array(op(V[:, j]), dtype=float)
            iters += 1
            for i in range(j + 1):
                H[i, j] = V[:, i] @ w
                w -= H[i, j] * V[:, i]
            H[j + 1, j] = np.linalg.norm(w)
            lucky = H[j + 1, j] <= 1e-14 * max(np.abs(H[: j + 1, j]).max(), 1e-300)
            if not lucky:
                V[:, j + 1] = w / H[j + 1, j]
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = math.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                break
            cs[j], sn[j] = H[j, j] / denom, H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            k = j + 1
            if abs(g[j + 1]) <= target or lucky:
                break
        if k > 0:
            ycoef = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
            x = x + V[:, :k] @ ycoef
        rnorm = float(abs(g[k])) if k > 0 else rnorm
        if rnorm <= target:
            continue
        if iters >= max_iters:
            continue
        # restart from the true residual
        r = b - op(x)
        rnorm = float(np.linalg.norm(r))
        if cycle_start - rnorm < 1e-14 * cycle_start:
            return GmresResult(x, iters, rnorm / bnorm, False, "stagnation")


@dataclass
class NewtonStats:
    iterations: int
    residual: float
    linear_iters: int
    converged: bool
    status: str = "success"


def newton_solve_stage(problem: OdeProblem, xi, h: float, gamma: float, jvp_mode: str = "exact",
                       newton_tol: float = 1e-10, newton_max: int = 10,
                       linear_rel_tol: float = 0.01, *, evaluator: Optional[Evaluator] = None,
                       jac_point=None, restart: int = 30, max_linear_iters: int = 100):
    """Solve ``k - f(xi + h*gamma*k) = 0`` by inexact Newton with GMRES inner solves.

    The initial guess is ``f(xi)``. Each correction solves
    ``(I - h*gamma*J) dk = -F(k)`` with ``J`` taken at the current stage
    argument, or at ``jac_point`` when given (frozen Jacobian). Convergence
    is an RMS residual at or below ``newton_tol``.

    Returns ``(k, NewtonStats)``; failure is reported in the stats, not raised.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    ev = evaluator if evaluator is not None else Evaluator(problem)
    xi = np.asarray(xi, dtype=float)
    c = h * gamma
    k = ev.rhs(xi)
    if c == 0.0:
        # no implicit coupling: f(xi) is already the stage value
        return k, NewtonStats(0, 0.0, 0, True)
    lin_total = 0
    prev = None
    growth = 0
    frozen_op = None
    if jac_point is not None:
        jp = np.asarray(jac_point, dtype=float)
        frozen_op = jacobian_operator(ev, jp, ev.rhs(jp) if jvp_mode == "fd" else None, jvp_mode)
    it = 0
    while True:
        Y = xi + c * k
        fY = ev.rhs(Y)
        F = k - fY
        res = rms(F)
        if res <= newton_tol:
            return k, NewtonStats(it, res, lin_total, True)
        if prev is not None and res > prev:
            growth += 1
            if growth >= 2:
                return k, NewtonStats(it, res, lin_total, False, "newton divergence")
        else:
            growth = 0
        if it >= newton_max:
            return k, NewtonStats(it, res, lin_total, False, "newton_max exceeded")
        prev = res
        J = frozen_op if frozen_op is not None else jacobian_operator(ev, Y, fY, jvp_mode)
        op = J.shifted(h, gamma)
        # tighten the last solve so a converging iteration can terminate
        lin_tol = max(min(linear_rel_tol, 0.5 * newton_tol / res), 1e-14)
        sol = gmres_solve(op, -F, None, lin_tol, max_linear_iters, restart)
        lin_total += sol.iterations
        ev.work.linear_iters += sol.iterations
        k = k + sol.x
        it += 1
        ev.work.newton_iters += 1
