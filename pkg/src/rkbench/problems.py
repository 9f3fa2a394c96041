"""Built-in test problems: Lorenz-96 and a stiff periodic Burgers proxy."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import OdeProblem


# --- Lorenz-96 ----------------------------------------------------------

def lorenz96_rhs(u, F: float = 8.0) -> np.ndarray:
    """``f_i = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + F`` with cyclic indices."""
    u = np.asarray(u, dtype=float)
    if u.shape[0] < 4:
        raise ValueError("Lorenz-96 needs at least 4 variables")
    return (np.roll(u, -1) - np.roll(u, 2)) * np.roll(u, 1) - u + F


def lorenz96_jvp(u, v) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape[0] < 4:
        raise ValueError("Lorenz-96 needs at least 4 variables")
    return ((np.roll(v, -1) - np.roll(v, 2)) * np.roll(u, 1)
            + (np.roll(u, -1) - np.roll(u, 2)) * np.roll(v, 1) - v)


def lorenz96_jacobian(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    if n < 4:
        raise ValueError("Lorenz-96 needs at least 4 variables")
    J = np.zeros((n, n))
    for i in range(n):
        im2, im1, ip1 = (i - 2) % n, (i - 1) % n, (i + 1) % n
        J[i, im2] += -u[im1]
        J[i, im1] += u[ip1] - u[im2]
        J[i, i] += -1.0
        J[i, ip1] += u[im1]
    return J


def lorenz96(N: int = 40, F: float = 8.0, t0: float = 0.0, tF: float = 0.5,
             perturbation: float = 0.01, perturb_index: int = 20) -> OdeProblem:
    """Lorenz-96 started from the equilibrium ``F`` with one perturbed entry."""
    N = int(N)
    if N < 4:
        raise ValueError("Lorenz-96 needs at least 4 variables")
    y0 = np.full(N, float(F))
    y0[perturb_index % N] += perturbation
    F = float(F)
    return OdeProblem(
        name="lorenz96", dimension=N,
        rhs=lambda u: lorenz96_rhs(u, F),
        exact_jvp=lorenz96_jvp,
        dense_jacobian=lorenz96_jacobian,
        y0=y0, t0=t0, tF=tF,
        params={"N": N, "F": F, "t0": t0, "tF": tF,
                "perturbation": perturbation, "perturb_index": perturb_index},
    )


# --- Burgers proxy ------------------------------------------------------

BURGERS_PRESETS = {"default": 5e-3, "stiff": 5e-2}


def burgers_rhs(u, nu: float, n: Optional[int] = None) -> np.ndarray:
    """Periodic viscous Burgers on [0, 1], method of lines.

    Convection ``-u u_x`` uses first-order upwinding chosen by the sign of
    ``u_i``; diffusion is the second-order central stencil.
    """
    u = np.asarray(u, dtype=float)
    n = u.shape[0] if n is None else n
    if n < 8:
        raise ValueError("Burgers grid needs at least 8 points")
    dx = 1.0 / n
    up = np.roll(u, -1)
    um = np.roll(u, 1)
    dback = (u - um) / dx
    dfwd = (up - u) / dx
    upwind = np.where(u >= 0.0, dback, dfwd)
    return -u * upwind + nu * (up - 2.0 * u + um) / dx**2


def burgers_jvp(u, v, nu: float) -> np.ndarray:
    """Jacobian action of :func:`burgers_rhs`, holding the upwind switch fixed."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u.shape[0]
    dx = 1.0 / n
    pos = u >= 0.0
    up, um = np.roll(u, -1), np.roll(u, 1)
    vp, vm = np.roll(v, -1), np.roll(v, 1)
    upwind = np.where(pos, (u - um) / dx, (up - u) / dx)
    d_upwind = np.where(pos, (v - vm) / dx, (vp - v) / dx)
    return -v * upwind - u * d_upwind + nu * (vp - 2.0 * v + vm) / dx**2


def burgers_jacobian(u, nu: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    n = u.shape[0]
    dx = 1.0 / n
    J = np.zeros((n, n))
    for i in range(n):
        im, ip = (i - 1) % n, (i + 1) % n
        if u[i] >= 0.0:
            J[i, i] += -(u[i] - u[im]) / dx - u[i] / dx
            J[i, im] += u[i] / dx
        else:
            J[i, i] += -(u[ip] - u[i]) / dx + u[i] / dx
            J[i, ip] += -u[i] / dx
        c = nu / dx**2
        J[i, im] += c
        J[i, ip] += c
        J[i, i] += -2.0 * c
    return J


def diffusion_stencil(n: int) -> np.ndarray:
    """Periodic ``(u_{i+1} - 2u_i + u_{i-1}) / dx^2`` as a dense matrix."""
    dx = 1.0 / n
    L = -2.0 * np.eye(n) + np.roll(np.eye(n), 1, axis=1) + np.roll(np.eye(n), -1, axis=1)
    return L / dx**2


def burgers(n: int = 256, nu: Optional[float] = None, preset: str = "default",
            t0: float = 0.0, tF: float = 0.1) -> OdeProblem:
    """Stiff method-of-lines proxy with initial state ``sin(2 pi x) + 0.5``."""
    n = int(n)
    if n < 8:
        raise ValueError("Burgers grid needs at least 8 points")
    if preset not in BURGERS_PRESETS:
        raise ValueError(f"unknown Burgers preset {preset!r}; choose from {sorted(BURGERS_PRESETS)}")
    nu = float(BURGERS_PRESETS[preset] if nu is None else nu)
    x = np.arange(n) / n
    return OdeProblem(
        name="burgers", dimension=n,
        rhs=lambda u: burgers_rhs(u, nu, n),
        exact_jvp=lambda u, v: burgers_jvp(u, v, nu),
        dense_jacobian=lambda u: burgers_jacobian(u, nu),
        y0=np.sin(2 * np.pi * x) + 0.5, t0=t0, tF=tF,
        params={"n": n, "nu": nu, "preset": preset, "t0": t0, "tF": tF},
    )


# --- small linear problems ----------------------------------------------

def linear(A, y0, t0: float = 0.0, tF: float = 1.0, name: str = "linear") -> OdeProblem:
    """``y' = A y`` with a dense matrix."""
    A = np.array(A, dtype=float)
    return OdeProblem(
        name=name, dimension=A.shape[0],
        rhs=lambda y: A @ y,
        exact_jvp=lambda y, v: A @ v,
        dense_jacobian=lambda y: A.copy(),
        y0=y0, t0=t0, tF=tF,
        params={"A": A.tolist(), "t0": t0, "tF": tF},
    )


def decay(N: int = 1, rate: float = 1.0, t0: float = 0.0, tF: float = 1.0) -> OdeProblem:
    """Non-stiff ``y' = -rate * y`` starting from ones."""
    N = int(N)
    rate = float(rate)
    return OdeProblem(
        name="decay", dimension=N,
        rhs=lambda y: -rate * y,
        exact_jvp=lambda y, v: -rate * v,
        dense_jacobian=lambda y: -rate * np.eye(N),
        y0=np.ones(N), t0=t0, tF=tF,
        params={"N": N, "rate": rate, "t0": t0, "tF": tF},
    )


def diagonal(eigenvalues=(-1.0, -10.0, -100.0), t0: float = 0.0, tF: float = 1.0) -> OdeProblem:
    ev = [float(x) for x in eigenvalues]
    p = linear(np.diag(ev), np.ones(len(ev)), t0, tF, name="diagonal")
    p.params.clear()
    p.params.update({"eigenvalues": ev, "t0": t0, "tF": tF})
    return p


_FACTORIES = {
    "lorenz96": lorenz96,
    "burgers": burgers,
    "decay": decay,
    "diagonal": diagonal,
}


def available() -> list[str]:
    return list(_FACTORIES)


def get_problem(name: str, **overrides) -> OdeProblem:
    """Build a named problem; keyword overrides go to its factory."""
    key = str(name).lower().replace("-", "").replace("_", "")
    if key not in _FACTORIES:
        raise KeyError(f"unknown problem {name!r}; available: {', '.join(_FACTORIES)}")
    return _FACTORIES[key](**overrides)
