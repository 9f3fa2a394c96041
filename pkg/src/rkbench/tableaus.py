"""Coefficient registry for the benchmark methods, with order-condition and stability checks.

Runge-Kutta tableaus use ``a``; Rosenbrock-type tableaus (ROS, ROW, ROK) use
``a`` for the stage-argument coefficients (alpha) together with a lower
triangular ``gamma`` matrix with constant diagonal. Rosenbrock stage vectors
follow the convention ``k_i = f(Y_i) + h J sum_j gamma_ij k_j``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction as Fr
from functools import lru_cache
from itertools import product
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular

FAMILIES = ("ERK", "SDIRK", "ROS", "ROW", "ROK")


@dataclass(frozen=True)
class MethodTableau:
    name: str
    family: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int
    bhat: Optional[np.ndarray] = None
    embedded_order: Optional[int] = None
    gamma_matrix: Optional[np.ndarray] = None
    stability: str = "conditionally stable"
    min_krylov_dim: Optional[int] = None
    reference: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        for name in ("a", "b", "c", "bhat", "gamma_matrix"):
            v = getattr(self, name)
            if v is not None:
                v = np.array(v, dtype=float)
                v.flags.writeable = False
                object.__setattr__(self, name, v)
        s = self.b.shape[0]
        if self.a.shape != (s, s) or self.c.shape != (s,):
            raise ValueError(f"{self.name}: inconsistent coefficient shapes")
        if self.family in ("ROS", "ROW", "ROK") and self.gamma_matrix is None:
            raise ValueError(f"{self.name}: Rosenbrock-type tableau needs a gamma matrix")

    @property
    def stages(self) -> int:
        return self.b.shape[0]

    s = stages

    @property
    def gamma(self) -> float:
        """Diagonal value shared by all stages (SDIRK ``a_ii`` or Rosenbrock ``gamma_ii``)."""
        if self.family == "SDIRK":
            return float(self.a[0, 0])
        if self.gamma_matrix is not None:
            return float(self.gamma_matrix[0, 0])
        return 0.0

    @property
    def is_rosenbrock(self) -> bool:
        return self.family in ("ROS", "ROW", "ROK")

    @property
    def error_order(self) -> int:
        """Order used in the step-size controller exponent."""
        if self.embedded_order is None:
            return self.order
        return min(self.order, self.embedded_order)

    def without_embedded(self) -> "MethodTableau":
        kw = dict(self.__dict__)
        kw.update(bhat=None, embedded_order=None)
        return MethodTableau(**kw)

    def to_dict(self) -> dict:
        def arr(x):
            return None if x is None else np.asarray(x).tolist()

        return {
            "name": self.name,
            "family": self.family,
            "stages": self.stages,
            "order": self.order,
            "embedded_order": self.embedded_order,
            "stability": self.stability,
            "min_krylov_dim": self.min_krylov_dim,
            "a": arr(self.a),
            "b": arr(self.b),
            "bhat": arr(self.bhat),
            "c": arr(self.c),
            "gamma_matrix": arr(self.gamma_matrix),
            "reference": self.reference,
        }


def _lower(rows, s=None, diag=None):
    s = s or len(rows)
    m = np.zeros((s, s))
    for i, row in enumerate(rows):
        for j, v in enumerate(row):
            m[i, j] = float(v)
        if diag is not None:
            m[i, i] = float(diag)
    return m


def _vec(xs):
    return np.array([float(x) for x in xs])


# --- explicit -----------------------------------------------------------

def _erk4() -> MethodTableau:
    # Zonneveld 4(3): classical-RK4 stages plus one extra stage for the estimator
    a = _lower([[], [Fr(1, 2)], [0, Fr(1, 2)], [0, 0, 1],
                [Fr(5, 32), Fr(7, 32), Fr(13, 32), Fr(-1, 32)]])
    return MethodTableau(
        "ERK4", "ERK", a,
        b=_vec([Fr(1, 6), Fr(1, 3), Fr(1, 3), Fr(1, 6), 0]),
        bhat=_vec([Fr(-1, 2), Fr(7, 3), Fr(7, 3), Fr(13, 6), Fr(-16, 3)]),
        c=_vec([0, Fr(1, 2), Fr(1, 2), 1, Fr(3, 4)]),
        order=4, embedded_order=3,
        reference="Zonneveld 4(3) embedded pair",
    )


def _dopri5() -> MethodTableau:
    a = _lower([
        [],
        [Fr(1, 5)],
        [Fr(3, 40), Fr(9, 40)],
        [Fr(44, 45), Fr(-56, 15), Fr(32, 9)],
        [Fr(19372, 6561), Fr(-25360, 2187), Fr(64448, 6561), Fr(-212, 729)],
        [Fr(9017, 3168), Fr(-355, 33), Fr(46732, 5247), Fr(49, 176), Fr(-5103, 18656)],
        [Fr(35, 384), 0, Fr(500, 1113), Fr(125, 192), Fr(-2187, 6784), Fr(11, 84)],
    ])
    return MethodTableau(
        "DOPRI5", "ERK", a,
        b=_vec([Fr(35, 384), 0, Fr(500, 1113), Fr(125, 192), Fr(-2187, 6784), Fr(11, 84), 0]),
        bhat=_vec([Fr(5179, 57600), 0, Fr(7571, 16695), Fr(393, 640), Fr(-92097, 339200),
                   Fr(187, 2100), Fr(1, 40)]),
        c=_vec([0, Fr(1, 5), Fr(3, 10), Fr(4, 5), Fr(8, 9), 1, 1]),
        order=5, embedded_order=4,
        reference="Dormand & Prince 5(4), 1980",
    )


_DOP853_A = [
    [],
    [0.05260015195876773],
    [0.0197250569845379, 0.0591751709536137],
    [0.02958758547680685, 0.0, 0.08876275643042054],
    [0.2413651341592667, 0.0, -0.8845494793282861, 0.924834003261792],
    [0.037037037037037035, 0.0, 0.0, 0.17082860872947386, 0.12546768756682242],
    [0.037109375, 0.0, 0.0, 0.17025221101954405, 0.06021653898045596, -0.017578125],
    [0.03709200011850479, 0.0, 0.0, 0.17038392571223998, 0.10726203044637328, -0.015319437748624402, 0.008273789163814023],
    [0.6241109587160757, 0.0, 0.0, -3.3608926294469414, -0.868219346841726, 27.59209969944671, 20.154067550477894, -43.48988418106996],
    [0.47766253643826434, 0.0, 0.0, -2.4881146199716677, -0.590290826836843, 21.230051448181193, 15.279233632882423, -33.28821096898486, -0.020331201708508627],
    [-0.9371424300859873, 0.0, 0.0, 5.186372428844064, 1.0914373489967295, -8.149787010746927, -18.52006565999696, 22.739487099350505, 2.4936055526796523, -3.0467644718982196],
    [2.273310147516538, 0.0, 0.0, -10.53449546673725, -2.0008720582248625, -17.9589318631188, 27.94888452941996, -2.8589982771350235, -8.87285693353063, 12.360567175794303, 0.6433927460157636],
]
_DOP853_B = [0.054293734116568765, 0.0, 0.0, 0.0, 0.0, 4.450312892752409, 1.8915178993145003, -5.801203960010585, 0.3111643669578199, -0.1521609496625161, 0.20136540080403034, 0.04471061572777259]
_DOP853_BHAT = [0.04117368912237389, 0.0, 0.0, 0.0, 0.0, 5.675469339128614, 2.3872768489717506, -7.465581142465571, 0.6614932157077935, -0.48634006837553356, 0.11944219431891463, 0.06706592359165889]
_DOP853_C = [0.0, 0.05260015195876773, 0.0789002279381516, 0.1183503419072274, 0.2816496580927726, 0.3333333333333333, 0.25, 0.3076923076923077, 0.6512820512820513, 0.6, 0.8571428571428571, 1.0]


def _dopri853() -> MethodTableau:
    return MethodTableau(
        "DOPRI853", "ERK", _lower(_DOP853_A),
        b=_vec(_DOP853_B), bhat=_vec(_DOP853_BHAT), c=_vec(_DOP853_C),
        order=8, embedded_order=5,
        reference="Dormand & Prince 8(5,3) as in Hairer's DOP853; fifth-order embedded weights",
    )


# --- implicit Runge-Kutta -----------------------------------------------

def _sdirk4() -> MethodTableau:
    a = _lower([
        [Fr(1, 4)],
        [Fr(1, 2), Fr(1, 4)],
        [Fr(17, 50), Fr(-1, 25), Fr(1, 4)],
        [Fr(371, 1360), Fr(-137, 2720), Fr(15, 544), Fr(1, 4)],
        [Fr(25, 24), Fr(-49, 48), Fr(125, 16), Fr(-85, 12), Fr(1, 4)],
    ])
    return MethodTableau(
        "SDIRK4", "SDIRK", a,
        b=_vec([Fr(25, 24), Fr(-49, 48), Fr(125, 16), Fr(-85, 12), Fr(1, 4)]),
        bhat=_vec([Fr(59, 48), Fr(-17, 96), Fr(225, 32), Fr(-85, 12), 0]),
        c=_vec([Fr(1, 4), Fr(3, 4), Fr(11, 20), Fr(1, 2), 1]),
        order=4, embedded_order=3, stability="L-stable",
        reference="Hairer & Wanner SDIRK4 (gamma = 1/4), stiffly accurate",
    )


# --- Rosenbrock-type ----------------------------------------------------

def _from_transformed(gamma, A, C, m, e):
    """Convert the (A, C, m) form of a Rosenbrock method to (alpha, Gamma, b).

    The transformed form uses ``C = diag(1/gamma) - Gamma^{-1}``,
    ``A = alpha Gamma^{-1}`` and ``m = b^T Gamma^{-1}``; ``e`` holds the
    difference between the main and embedded ``m`` weights.
    """
    s = len(m)
    gamma_inv = np.eye(s) / gamma - C
    G = solve_triangular(gamma_inv, np.eye(s), lower=True)
    G = np.tril(G)
    np.fill_diagonal(G, gamma)
    alpha = np.tril(A @ G, -1)
    m = np.asarray(m, dtype=float)
    b = m @ G
    bhat = (m - np.asarray(e, dtype=float)) @ G
    return alpha, G, b, bhat


def _ros4() -> MethodTableau:
    # Hairer & Wanner's L-stable ROS4 set, published in the transformed form
    gamma = 0.57282
    A = _lower([[], [2.0], [1.867943637803922, 0.2344449711399156],
                [1.867943637803922, 0.2344449711399156, 0.0]])
    C = _lower([[], [-7.137615036412310], [2.580708087951457, 0.6515950076447975],
                [-2.137148994382534, -0.3214669691237626, -0.6949742501781779]])
    m = [2.255570073418735, 0.2870493262186792, 0.4353179431840180, 1.093502252409163]
    e = [-0.2815431932141155, -0.07276199124938920, -0.1082196201495311, -1.093502252409163]
    alpha, G, b, bhat = _from_transformed(gamma, A, C, m, e)
    return MethodTableau(
        "ROS4", "ROS", alpha, b=b, bhat=bhat, c=alpha.sum(axis=1), gamma_matrix=G,
        order=4, embedded_order=3, stability="L-stable",
        reference="Hairer & Wanner ROS4, L-stable coefficient set (gamma = 0.57282)",
    )


def _row3() -> MethodTableau:
    gamma = 0.435866521508459
    alpha = _lower([
        [],
        [0.87173304301691801],
        [0.84457060015369423, -0.11299064236484185],
        [0.0, 0.0, 1.0],
    ])
    G = _lower([
        [],
        [-0.87173304301691801],
        [-0.90338057013044082, 0.054180672388095326],
        [0.24212380706095346, -1.2232505839045147, 0.54526025533510214],
    ], diag=gamma)
    return MethodTableau(
        "ROW3", "ROW", alpha,
        b=_vec([0.24212380706095346, -1.2232505839045147, 1.5452602553351020, gamma]),
        bhat=_vec([0.37810903145819369, -0.096042292212423178, 0.5, 0.2179332607542295]),
        c=alpha.sum(axis=1), gamma_matrix=G,
        order=3, embedded_order=2, stability="L-stable",
        reference="Rang & Angermann ROS34PW2, W-method of order 3(2)",
    )


def _rok4() -> MethodTableau:
    # Classical RK4 stage arguments, so M = 0 leaves a fourth-order explicit
    # method. gamma is the root making the four-stage stability function
    # L-stable; the Gamma entries solve the Krylov order conditions with
    # gamma_21 = 0. Stage 5 sits at y_{n+1} and only feeds the third-order
    # estimator. b itself satisfies the third-order conditions, so the
    # estimator is pinned by Rhat(inf) = -1/2, the level of the published
    # Rosenbrock pairs; an L-stable choice would coincide with b.
    gamma = 0.57281606248213486
    alpha = _lower([
        [],
        [Fr(1, 2)],
        [0, Fr(1, 2)],
        [0, 0, 1],
        [Fr(1, 6), Fr(1, 3), Fr(1, 3), Fr(1, 6)],
    ])
    G = _lower([
        [],
        [0.0],
        [0.34791924643557544, -1.4935513713998452],
        [0.44979363209311883, 0.12302243038901602, -1.7184481874464046],
        [0.0, 0.0, 0.0, 0.0],
    ], diag=gamma)
    return MethodTableau(
        "ROK4", "ROK", alpha,
        b=_vec([Fr(1, 6), Fr(1, 3), Fr(1, 3), Fr(1, 6), 0]),
        bhat=_vec([0.6159838881722581, -0.1843758512859538, 0.25195288927849846,
                   0.11731368949066656, 0.1991253843445306]),
        c=_vec([0, Fr(1, 2), Fr(1, 2), 1, 1]),
        gamma_matrix=G, order=4, embedded_order=3, min_krylov_dim=4,
        reference="Rosenbrock-Krylov 4(3), five stages; coefficients solved from the Krylov order conditions",
    )


_BUILDERS = {
    "ERK4": _erk4,
    "DOPRI5": _dopri5,
    "DOPRI853": _dopri853,
    "SDIRK4": _sdirk4,
    "ROS4": _ros4,
    "ROW3": _row3,
    "ROK4": _rok4,
}

_REGISTRY = {name: build() for name, build in _BUILDERS.items()}


def available() -> list[str]:
    return list(_REGISTRY)


def registry_get(name: str) -> MethodTableau:
    """Look a tableau up by name (case-insensitive)."""
    key = str(name).upper()
    if key not in _REGISTRY:
        raise KeyError(f"unknown method {name!r}; available: {', '.join(_REGISTRY)}")
    return _REGISTRY[key]


def dump_tableaus(path=None) -> dict:
    doc = {"tableaus": [t.to_dict() for t in _REGISTRY.values()]}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
    return doc


# --- order conditions ---------------------------------------------------
#
# A node is (kind, children). kind selects the coefficient matrix applied to
# each child's elementary weight: "a" -> a (alpha), "m" -> Gamma (a node
# carrying the approximate Jacobian), "b" -> alpha + Gamma (exact-Jacobian
# node where the two contributions coincide).

@lru_cache(maxsize=None)
def rooted_trees(n: int) -> tuple:
    """All rooted trees with ``n`` nodes, each a sorted tuple of child trees."""
    if n == 1:
        return ((),)
    found = set()

    def forests(rem, min_key):
        if rem == 0:
            yield ()
            return
        for k in range(1, rem + 1):
            for t in rooted_trees(k):
                key = (k, t)
                if key < min_key:
                    continue
                for rest in forests(rem - k, key):
                    yield (t,) + rest

    for forest in forests(n - 1, (0, ())):
        found.add(tuple(sorted(forest)))
    return tuple(sorted(found))


def tree_order(t) -> int:
    return 1 + sum(tree_order(c) for c in t)


def tree_density(t) -> int:
    g = tree_order(t)
    for c in t:
        g *= tree_density(c)
    return g


def _is_chain(t) -> bool:
    return len(t) == 0 or (len(t) == 1 and _is_chain(t[0]))


def _labelings(t, family):
    """Coloured versions of a Butcher tree for the given method family."""
    child_opts = [_labelings(c, family) for c in t]
    out = set()
    for combo in product(*child_opts):
        kids = tuple(sorted(combo))
        if len(t) != 1 or family in ("ERK", "SDIRK"):
            out.add(("a", kids))
        elif family == "ROS" or (family == "ROK" and _is_chain(t[0])):
            out.add(("b", kids))
        else:
            out.add(("a", kids))
            out.add(("m", kids))
    return out


def _node_order(node) -> int:
    return 1 + sum(_node_order(c) for c in node[1])


def _node_density(node) -> int:
    g = _node_order(node)
    for c in node[1]:
        g *= _node_density(c)
    return g


def _has_meagre(node) -> bool:
    return node[0] == "m" or any(_has_meagre(c) for c in node[1])


def node_label(node) -> str:
    kind, kids = node
    if not kids:
        return "o"
    inner = "[" + ",".join(node_label(c) for c in kids) + "]"
    return {"a": "", "m": "m", "b": "b"}[kind] + inner


def _weights(node, mats, s):
    v = np.ones(s)
    W = mats[node[0]]
    for c in node[1]:
        v = v * (W @ _weights(c, mats, s))
    return v


def order_conditions(family: str, p: int) -> list:
    """``(label, node, target)`` for every condition up to order ``p``."""
    conds = []
    for n in range(1, p + 1):
        for t in rooted_trees(n):
            for node in sorted(_labelings(t, family)):
                target = 0.0 if _has_meagre(node) else 1.0 / _node_density(node)
                conds.append((node_label(node), node, target))
    return conds


def verify_order_conditions(t: MethodTableau, order: Optional[int] = None,
                            weights: str = "b") -> dict:
    """Residual of every order condition up to ``order`` (default: claimed order).

    Runge-Kutta families use the rooted-tree conditions; ROS uses the exact
    Jacobian set, ROW the W-method set (any Jacobian approximation), ROK the
    Krylov set valid for Krylov dimension at least ``order``. With
    ``weights="bhat"`` the embedded weights are checked at the embedded order.
    """
    if weights == "bhat":
        if t.bhat is None:
            raise ValueError(f"{t.name} has no embedded weights")
        w, p = t.bhat, t.embedded_order
    else:
        w, p = t.b, t.order
    p = p if order is None else order
    G = t.gamma_matrix if t.gamma_matrix is not None else np.zeros_like(t.a)
    mats = {"a": t.a, "m": G, "b": t.a + G}
    return {label: abs(float(w @ _weights(node, mats, t.stages)) - target)
            for label, node, target in order_conditions(t.family, p)}


def max_residual(report: dict) -> float:
    return max(report.values()) if report else 0.0


# --- linear stability ---------------------------------------------------

def stability_function_value(t: MethodTableau, z: complex) -> complex:
    """``R(z) = 1 + z b^T (I - z A_eff)^{-1} 1`` for the scalar test equation.

    ``A_eff`` is ``a`` for Runge-Kutta tableaus and ``alpha + Gamma`` for
    Rosenbrock-type ones (for ROK this is the in-subspace function).
    """
    A = t.a if not t.is_rosenbrock else t.a + t.gamma_matrix
    s = t.stages
    z = complex(z)
    M = np.eye(s) - z * A
    # every registered family has a lower-triangular A_eff
    d = np.abs(np.diag(M))
    if np.any(d <= 1e-14 * np.maximum(1.0, np.abs(z * np.diag(A)))):
        raise ZeroDivisionError(f"I - zA is singular at z={z}")
    x = solve_triangular(M, np.ones(s, dtype=complex), lower=True)
    return complex(1 + z * (t.b @ x))
