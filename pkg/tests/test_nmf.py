import time
import warnings

import numpy as np
import pytest

from distntt.comm import run_spmd
from distntt.distmatrix import DistMatrix, dist_gram, dist_wtx, dist_xht, gather_h, gather_w
from distntt.exceptions import DegenerateInputError, DegenerateInputWarning, NonnegativityError
from distntt.nmf import (
    NmfConfig,
    bcd_correct_or_extrapolate,
    bcd_step,
    dist_nmf,
    mu_step,
    nmf_init,
    nmf_objective,
)


def run_nmf(X, cfg, grid=(1, 1), callback=None):
    def fn(c):
        x = DistMatrix.scatter(X, grid, c.rank)
        state = dist_nmf(x, cfg, c, callback=callback)
        return gather_w(x, state.W, c), gather_h(x, state.H, c), state

    return run_spmd(grid[0] * grid[1], fn)[0]


def sparse_factors(seed, m=48, n=40, r=3):
    rng = np.random.default_rng(seed)
    W = rng.random((m, r)) * (rng.random((m, r)) < 0.5)
    H = rng.random((r, n)) * (rng.random((r, n)) < 0.5)
    return W, H


def rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestInit:
    def test_normalization(self):
        X = np.random.default_rng(0).random((32, 24))

        def fn(c):
            x = DistMatrix.scatter(X, (2, 2), c.rank)
            s = nmf_init(x, 3, 5, c)
            return gather_w(x, s.W, c), gather_h(x, s.H, c), s.obj, s.t

        W, H, obj, t = run_spmd(4, fn)[0]
        xn = np.linalg.norm(X)
        assert np.sum(W * W) == pytest.approx(xn, rel=1e-10)
        assert np.sum(H * H) == pytest.approx(xn, rel=1e-10)
        assert obj == pytest.approx(0.5 * xn**2)
        assert t == 1.0
        assert W.min() >= 0 and H.min() >= 0

    def test_independent_of_p(self):
        X = np.random.default_rng(1).random((16, 16))

        def fn(c, grid):
            x = DistMatrix.scatter(X, grid, c.rank)
            s = nmf_init(x, 2, 9, c)
            return gather_w(x, s.W, c), gather_h(x, s.H, c)

        W1, H1 = run_spmd(1, fn, (1, 1))[0]
        for grid in [(2, 2), (4, 1), (1, 4)]:
            W4, H4 = run_spmd(4, fn, grid)[0]
            np.testing.assert_allclose(W4, W1, rtol=1e-14)
            np.testing.assert_allclose(H4, H1, rtol=1e-14)

    def test_zero_input(self):
        with pytest.raises(DegenerateInputError):
            run_nmf(np.zeros((4, 4)), NmfConfig(rank=1))

    def test_negative_input(self):
        X = np.ones((4, 4))
        X[2, 3] = -1
        with pytest.raises(NonnegativityError):
            run_nmf(X, NmfConfig(rank=1), grid=(2, 2))


class TestObjective:
    def _obj(self, X, W, H):
        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, W.shape[1], 0, c)
            s.W, s.H = W, H
            s.WtW, s.HHt, s.WtX = W.T @ W, H @ H.T, None
            return nmf_objective(s, x, c)

        return run_spmd(1, fn)[0]

    def test_zero_factor(self):
        X = np.random.default_rng(0).random((6, 5))
        assert self._obj(X, np.zeros((6, 2)), np.ones((2, 5))) == pytest.approx(0.5 * np.sum(X * X))

    def test_exact(self):
        W, H = sparse_factors(0, 10, 8, 2)
        X = W @ H
        assert abs(self._obj(X, W, H)) <= 1e-10 * np.sum(X * X)

    def test_dense_oracle(self):
        rng = np.random.default_rng(2)
        X, W, H = rng.random((32, 32)), rng.random((32, 3)), rng.random((3, 32))
        ref = 0.5 * np.linalg.norm(X - W @ H) ** 2
        assert self._obj(X, W, H) == pytest.approx(ref, rel=1e-10)


class TestBcd:
    def test_stationary_point(self):
        W, H = sparse_factors(3, 12, 10, 2)
        W = W / W.sum(axis=0)
        X = W @ H

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, 2, 0, c)
            s.W, s.H, s.Wm, s.Hm = W.copy(), H.copy(), W.copy(), H.copy()
            s.HHt, s.XHt = dist_gram(H, c), dist_xht(x, H, c)
            s.WtW = dist_gram(W, c, transpose=True)
            bcd_step(s, x, c, NmfConfig(rank=2))
            return s.W, s.H

        W2, H2 = run_spmd(1, fn)[0]
        np.testing.assert_allclose(W2, W, atol=1e-12)
        np.testing.assert_allclose(H2, H, atol=1e-12)

    def test_rank_one(self):
        rng = np.random.default_rng(4)
        X = np.outer(rng.random(20), rng.random(30))
        W, H, _ = run_nmf(X, NmfConfig(rank=1, max_iters=100))
        assert rel(W @ H, X) <= 1e-6

    def test_first_iteration_extrapolates(self):
        X = np.random.default_rng(5).random((12, 10))

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, 2, 0, c)
            bcd_step(s, x, c, NmfConfig(rank=2))
            s = bcd_correct_or_extrapolate(s, x, c, NmfConfig(rank=2))
            return s.accepted, s.corrections, s.t

        accepted, corrections, t = run_spmd(1, fn)[0]
        assert (accepted, corrections) == (1, 0)
        assert t == pytest.approx((1 + np.sqrt(5)) / 2)

    def test_forced_correction_rerandomizes(self):
        X = np.random.default_rng(6).random((12, 10))

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, 2, 0, c)
            w0 = s.W.copy()
            bcd_step(s, x, c, NmfConfig(rank=2))
            s = bcd_correct_or_extrapolate(s, x, c, NmfConfig(rank=2), force_correction=True)
            fresh = nmf_init(x, 2, 0, c, restart=1)
            return w0, s, fresh.W

        w0, s, expect = run_spmd(1, fn)[0]
        assert s.corrections == 1 and s.restarts == 1 and s.accepted == 0
        np.testing.assert_array_equal(s.W, expect)
        assert not np.array_equal(s.W, w0)

    def test_correction_after_accept_returns_to_previous(self):
        X = np.random.default_rng(7).random((12, 10))

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            cfg = NmfConfig(rank=2)
            s = nmf_init(x, 2, 0, c)
            for _ in range(3):
                bcd_step(s, x, c, cfg)
                s = bcd_correct_or_extrapolate(s, x, c, cfg)
            t_before, obj_before = s.t, s.obj
            bcd_step(s, x, c, cfg)
            prev = s.W_prev.copy()
            s = bcd_correct_or_extrapolate(s, x, c, cfg, force_correction=True)
            return s, prev, t_before, obj_before

        s, prev, t_before, obj_before = run_spmd(1, fn)[0]
        np.testing.assert_array_equal(s.W, prev)
        assert s.t == t_before and s.obj == obj_before

    def test_t_recursion(self):
        X = np.random.default_rng(8).random((16, 12))
        ts = []
        run_nmf(X, NmfConfig(rank=2, max_iters=5), callback=lambda s: ts.append((s.accepted, s.t)))
        expected = [1.0]
        for _ in range(5):
            expected.append(0.5 * (1 + np.sqrt(1 + 4 * expected[-1] ** 2)))
        for accepted, t in ts:
            assert t == pytest.approx(expected[accepted])
        assert expected[1] == pytest.approx(1.6180339887) and expected[2] == pytest.approx(2.1935270853)

    def test_monotone_and_nonnegative(self):
        X = np.random.default_rng(9).random((40, 32))
        seen = []

        def cb(s):
            seen.append((s.W.min(), s.H.min()))

        _, _, state = run_nmf(X, NmfConfig(rank=4, max_iters=150), grid=(2, 2), callback=cb)
        hist = state.history
        assert all(b <= a for a, b in zip(hist, hist[1:]))
        assert min(min(p) for p in seen) >= 0

    def test_exact_recovery_sparse_factors(self):
        good = 0
        for seed in range(5):
            W, H = sparse_factors(100 + seed)
            X = W @ H
            Wf, Hf, _ = run_nmf(X, NmfConfig(rank=3, max_iters=500, seed=seed))
            good += rel(Wf @ Hf, X) <= 1e-4
        assert good >= 4

    def test_p_invariance(self):
        X = np.random.default_rng(10).random((32, 24))
        cfg = NmfConfig(rank=3, max_iters=60)
        W1, H1, _ = run_nmf(X, cfg)
        for grid in [(2, 2), (4, 1)]:
            W4, H4, _ = run_nmf(X, cfg, grid)
            assert rel(W4 @ H4, W1 @ H1) <= 1e-8

    def test_literal_steps_runs(self):
        X = np.random.default_rng(11).random((16, 16))
        W, H, state = run_nmf(X, NmfConfig(rank=2, max_iters=30, literal_alg3_steps=True))
        assert W.min() >= 0 and H.min() >= 0
        assert state.history and all(b <= a for a, b in zip(state.history, state.history[1:]))

    def test_zero_factor_warns(self):
        X = np.random.default_rng(12).random((8, 6))

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, 2, 0, c)
            s.H = np.zeros_like(s.H)
            s.Hm = s.H.copy()
            s.HHt, s.XHt = dist_gram(s.H, c), dist_xht(x, s.H, c)
            bcd_step(s, x, c, NmfConfig(rank=2))
            return s

        with pytest.warns(DegenerateInputWarning):
            s = run_spmd(1, fn)[0]
        assert s.W.min() >= 0

    def test_tol_early_stop(self):
        X = np.random.default_rng(18).random((12, 10))
        _, _, state = run_nmf(X, NmfConfig(rank=2, max_iters=1000, tol=1e-9))
        assert state.iterations < 1000


class TestMu:
    def test_fixed_point(self):
        W, H = np.random.default_rng(13).random((8, 2)), np.random.default_rng(14).random((2, 6))
        X = W @ H

        def fn(c):
            x = DistMatrix.scatter(X, (1, 1), 0)
            s = nmf_init(x, 2, 0, c)
            s.W, s.H = W.copy(), H.copy()
            s.HHt, s.XHt = dist_gram(H, c), dist_xht(x, H, c)
            mu_step(s, x, c)
            return s.W, s.H

        W2, H2 = run_spmd(1, fn)[0]
        np.testing.assert_allclose(W2, W, rtol=1e-12)
        np.testing.assert_allclose(H2, H, rtol=1e-12)

    def test_rank_one(self):
        rng = np.random.default_rng(15)
        X = np.outer(rng.random(20), rng.random(30))
        W, H, _ = run_nmf(X, NmfConfig(rank=1, max_iters=200, algorithm="mu"))
        assert rel(W @ H, X) <= 1e-4

    def test_monotone(self):
        X = np.random.default_rng(16).random((32, 28))
        _, _, state = run_nmf(X, NmfConfig(rank=3, max_iters=100, algorithm="mu"), grid=(2, 2))
        h = state.history
        assert all(b <= a + 1e-12 for a, b in zip(h, h[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        NmfConfig(rank=0)
    with pytest.raises(ValueError):
        NmfConfig(rank=1, delta=1.0)
    with pytest.raises(ValueError):
        NmfConfig(rank=1, algorithm="hals")


def test_timing_report_covers_kernels():
    X = np.random.default_rng(17).random((64, 64))

    def fn(c):
        x = DistMatrix.scatter(X, (2, 2), c.rank)
        c.timers.reset()
        start = time.perf_counter()
        dist_nmf(x, NmfConfig(rank=4, max_iters=100), c)
        return time.perf_counter() - start, c.timers.total, c.timers.as_dict()

    for wall, total, cats in run_spmd(4, fn):
        assert total >= 0.5 * wall
        assert all(cats[k] > 0 for k in ("GR", "MM", "MAD", "Norm", "INIT", "AG", "AR", "RSC"))
