import numpy as np
import pytest

from rkbench.bench import ritz_pairs
from rkbench.core import Evaluator
from rkbench.matfree import fd_jvp
from rkbench.problems import (BURGERS_PRESETS, available, burgers, burgers_jacobian, burgers_jvp,
                              burgers_rhs, decay, diagonal, diffusion_stencil, get_problem,
                              lorenz96, lorenz96_jacobian, lorenz96_jvp, lorenz96_rhs)


def _l96_loop(u, F):
    n = len(u)
    return np.array([(u[(i + 1) % n] - u[(i - 2) % n]) * u[(i - 1) % n] - u[i] + F for i in range(n)])


def _burgers_loop(u, nu):
    n = len(u)
    dx = 1.0 / n
    out = np.empty(n)
    for i in range(n):
        if u[i] >= 0:
            conv = u[i] * (u[i] - u[i - 1]) / dx
        else:
            conv = u[i] * (u[(i + 1) % n] - u[i]) / dx
        out[i] = -conv + nu * (u[(i + 1) % n] - 2 * u[i] + u[i - 1]) / dx**2
    return out


class TestLorenz96:
    def test_equilibrium(self):
        assert np.all(lorenz96_rhs(np.full(40, 8.0), 8.0) == 0.0)

    def test_zero_state(self):
        np.testing.assert_array_equal(lorenz96_rhs(np.zeros(7), 8.0), np.full(7, 8.0))

    def test_loop_oracle(self):
        u = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        np.testing.assert_array_equal(lorenz96_rhs(u, 8.0), _l96_loop(u, 8.0))
        # hand evaluation of component 0: (u1 - u3) * u4 - u0 + F = (2 - 4) * 5 - 1 + 8
        assert lorenz96_rhs(u, 8.0)[0] == -3.0

    @pytest.mark.parametrize("fn", [lambda u: lorenz96_rhs(u, 8.0), lorenz96_jacobian,
                                    lambda u: lorenz96_jvp(u, u)])
    def test_too_small(self, fn):
        with pytest.raises(ValueError):
            fn(np.ones(3))

    def test_default_problem(self):
        p = lorenz96()
        assert p.dimension == 40 and (p.t0, p.tF) == (0.0, 0.5)
        expected = np.full(40, 8.0)
        expected[20] = 8.01
        np.testing.assert_array_equal(p.y0, expected)
        p.check()

    def test_jacobian_at_equilibrium(self):
        J = lorenz96_jacobian(np.full(6, 8.0))
        for i in range(6):
            row = np.zeros(6)
            row[(i - 2) % 6] = -8.0
            row[(i - 1) % 6] = 0.0
            row[i] = -1.0
            row[(i + 1) % 6] = 8.0
            np.testing.assert_array_equal(J[i], row)

    def test_cyclic_bandwidth(self):
        J = lorenz96_jacobian(np.random.default_rng(0).standard_normal(12))
        for i, j in zip(*np.nonzero(J)):
            assert (j - i) % 12 in (0, 1, 10, 11)

    def test_jvp_columns(self):
        u = np.random.default_rng(1).standard_normal(40) + 8
        J = lorenz96_jacobian(u)
        for i in range(40):
            e = np.zeros(40)
            e[i] = 1.0
            np.testing.assert_allclose(lorenz96_jvp(u, e), J[:, i], atol=1e-12)

    def test_fd_jacobian_columnwise(self):
        p = lorenz96()
        rng = np.random.default_rng(2)
        for _ in range(20):
            u = 8 + 3 * rng.standard_normal(40)
            fu = p.rhs(u)
            Jfd = np.column_stack([fd_jvp(p, u, fu, np.eye(40)[i]) for i in range(40)])
            assert np.abs(Jfd - lorenz96_jacobian(u)).max() <= 1e-6


class TestBurgers:
    def test_constant_state(self):
        for c in (-1.3, 0.0, 2.0):
            np.testing.assert_allclose(burgers_rhs(np.full(16, c), 0.01), 0.0, atol=1e-12)

    def test_loop_oracle(self):
        u = np.random.default_rng(3).standard_normal(32)
        np.testing.assert_allclose(burgers_rhs(u, 5e-3), _burgers_loop(u, 5e-3), rtol=1e-14, atol=1e-12)

    def test_maximum_principle(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            u = rng.uniform(0.1, 2.0, 64)
            f = burgers_rhs(u, 0.0)
            assert np.all(f[u == u.max()] <= 0.0)

    def test_diffusion_row_sums(self):
        assert np.abs(diffusion_stencil(64).sum(axis=1)).max() <= 1e-14 * 64**2

    def test_jvp_matches_dense(self):
        rng = np.random.default_rng(5)
        u = rng.standard_normal(48)
        J = burgers_jacobian(u, 0.02)
        for _ in range(5):
            v = rng.standard_normal(48)
            np.testing.assert_allclose(burgers_jvp(u, v, 0.02), J @ v, rtol=1e-12, atol=1e-9)

    def test_presets(self):
        assert BURGERS_PRESETS == {"default": 5e-3, "stiff": 5e-2}
        p = burgers(preset="stiff")
        assert p.params["nu"] == 5e-2 and p.dimension == 256
        x = np.arange(256) / 256
        np.testing.assert_allclose(p.y0, np.sin(2 * np.pi * x) + 0.5)
        p.check()
        assert burgers(nu=0.2).params["nu"] == 0.2

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            burgers(n=4)
        with pytest.raises(ValueError):
            burgers(preset="mild")

    def test_fd_matches_exact_jvp_away_from_switch(self):
        p = burgers(n=64)
        u = p.y0
        v = np.random.default_rng(6).standard_normal(64)
        fd = fd_jvp(p, u, p.rhs(u), v)
        ex = burgers_jvp(u, v, p.params["nu"])
        assert np.linalg.norm(fd - ex) <= 1e-5 * np.linalg.norm(ex)

    @pytest.mark.parametrize("preset", ["default", "stiff"])
    def test_spectrum_nearly_dissipative(self, preset):
        # the upwind term contributes -u_x on the diagonal, so a handful of Ritz
        # values sit marginally right of the axis; they are tiny against the stiff scale
        p = burgers(preset=preset)
        res = ritz_pairs(p, 30, "exact")
        dense = np.linalg.eigvals(burgers_jacobian(p.y0, p.params["nu"]))
        scale = np.abs(dense.real).max()
        assert res.ritz.real.max() <= 1e-3 * scale
        assert dense.real.max() <= 1e-3 * scale

    def test_stiff_scale(self):
        p = burgers(preset="stiff")
        lo = ritz_pairs(p, 30, "exact").ritz.real.min()
        predicted = -4 * p.params["nu"] * 256**2
        assert 0.5 <= lo / predicted <= 2.0


def test_registry():
    assert set(available()) >= {"lorenz96", "burgers"}
    assert get_problem("Lorenz-96", N=12).dimension == 12
    assert get_problem("burgers", preset="stiff").params["nu"] == 5e-2
    with pytest.raises(KeyError, match="available"):
        get_problem("vanderpol")


def test_small_linear_problems():
    d = diagonal()
    np.testing.assert_array_equal(d.rhs(np.ones(3)), [-1.0, -10.0, -100.0])
    assert d.params["eigenvalues"] == [-1.0, -10.0, -100.0]
    p = decay(N=3, rate=2.0)
    ev = Evaluator(p)
    np.testing.assert_array_equal(ev.exact_jvp(p.y0, np.ones(3)), [-2.0, -2.0, -2.0])
