import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distntt.exceptions import DegenerateInputError, DimensionError, RankError
from distntt.tensor import (
    TensorTrain,
    compression_ratio,
    reconstruct,
    reconstruct_block,
    relative_error,
    ssim,
    train_metrics,
    tt_element,
    unfold,
)


def seeded_train(shape, ranks, seed=0):
    rng = np.random.default_rng(seed)
    return TensorTrain([rng.random((ranks[l], n, ranks[l + 1])) for l, n in enumerate(shape)])


def brute_element(tt, index):
    """Explicit sum over every internal index tuple."""
    ranks = tt.ranks
    total = 0.0
    for ks in itertools.product(*[range(r) for r in ranks[1:-1]]):
        full = (0,) + ks + (0,)
        prod = 1.0
        for l, i in enumerate(index):
            prod *= tt.cores[l][full[l], i, full[l + 1]]
        total += prod
    return total


class TestUnfold:
    def test_row_major_small(self):
        t = np.arange(8.0).reshape(2, 2, 2)
        np.testing.assert_array_equal(unfold(t, 2), [[0, 1, 2, 3], [4, 5, 6, 7]])

    def test_rows_equal_size_gives_column(self):
        t = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(unfold(t, 12).ravel(), t.ravel())
        assert unfold(t, 12).shape == (12, 1)

    def test_index_map_brute_force(self):
        t = np.random.default_rng(1).random((5, 4, 5, 6))
        m = unfold(t, 5)
        assert m.shape == (5, 120)
        for i, j, k, l in itertools.product(range(5), range(4), range(5), range(6)):
            assert m[i, j * 30 + k * 6 + l] == t[i, j, k, l]

    def test_bad_rows(self):
        with pytest.raises(DimensionError):
            unfold(np.zeros((3, 3)), 2)


class TestTrain:
    def test_rank_mismatch(self):
        with pytest.raises(RankError):
            TensorTrain([np.ones((1, 2, 2)), np.ones((3, 2, 1))])

    def test_boundary_ranks(self):
        with pytest.raises(RankError):
            TensorTrain([np.ones((2, 2, 1)), np.ones((1, 2, 1))])

    def test_properties(self):
        tt = seeded_train((5, 4, 5, 6), (1, 4, 3, 2, 1))
        assert tt.shape == (5, 4, 5, 6)
        assert tt.ranks == [1, 4, 3, 2, 1]
        assert tt.n_params == 110
        assert tt.is_nonnegative()


class TestElement:
    def test_all_ones(self):
        tt = TensorTrain([np.ones((1, 3, 1)), np.ones((1, 2, 1)), np.ones((1, 4, 1))])
        for idx in itertools.product(range(3), range(2), range(4)):
            assert tt_element(tt, idx) == 1.0

    def test_outer_product(self):
        tt = TensorTrain([np.array([[[1.0], [2.0]]]), np.array([[[3.0], [4.0]]])])
        assert tt_element(tt, (1, 0)) == 6.0

    def test_matches_brute_sum_and_reconstruct(self):
        tt = seeded_train((5, 4, 5, 6), (1, 4, 3, 2, 1), seed=3)
        full = reconstruct(tt)
        for idx in itertools.product(range(5), range(4), range(5), range(6)):
            assert abs(tt_element(tt, idx) - full[idx]) <= 1e-12 * max(1.0, abs(full[idx]))
        rng = np.random.default_rng(0)
        for _ in range(30):
            idx = tuple(int(rng.integers(n)) for n in tt.shape)
            assert abs(brute_element(tt, idx) - full[idx]) <= 1e-12 * abs(full[idx])

    def test_out_of_range(self):
        tt = seeded_train((2, 2), (1, 1, 1))
        with pytest.raises(IndexError):
            tt_element(tt, (2, 0))
        with pytest.raises(IndexError):
            tt_element(tt, (0,))


class TestReconstruct:
    def test_rank1_ones(self):
        tt = TensorTrain([np.ones((1, 2, 1)), np.ones((1, 3, 1))])
        np.testing.assert_array_equal(reconstruct(tt), np.ones((2, 3)))

    def test_outer(self):
        tt = TensorTrain([np.array([1.0, 2.0]).reshape(1, 2, 1), np.array([3.0, 4.0]).reshape(1, 2, 1)])
        np.testing.assert_array_equal(reconstruct(tt), [[3, 4], [6, 8]])

    def test_einsum_oracle(self):
        tt = seeded_train((4, 4, 4), (1, 2, 2, 1), seed=5)
        a, b, c = tt.cores
        ref = np.einsum("aib,bjc,ckd->ijk", a, b, c)
        np.testing.assert_allclose(reconstruct(tt), ref, rtol=1e-12)
        rng = np.random.default_rng(2)
        for _ in range(20):
            idx = tuple(int(rng.integers(4)) for _ in range(3))
            assert abs(reconstruct(tt)[idx] - tt_element(tt, idx)) <= 1e-12

    def test_block_matches_full(self):
        tt = seeded_train((6, 4, 5), (1, 3, 2, 1), seed=7)
        full = reconstruct(tt)
        blk = reconstruct_block(tt.cores, (2, 0, 1), (5, 3, 5))
        np.testing.assert_allclose(blk, full[2:5, 0:3, 1:5], rtol=1e-13)


class TestRelativeError:
    def test_identical(self):
        a = np.random.default_rng(0).random((3, 4))
        assert relative_error(a, a) == 0.0

    def test_ones_zeros(self):
        assert relative_error(np.ones((2, 2)), np.zeros((2, 2))) == 1.0

    def test_hand_value(self):
        assert relative_error(np.eye(2), np.array([[1.0, 0], [0, 0]])) == pytest.approx(1 / np.sqrt(2), abs=1e-12)

    def test_errors(self):
        with pytest.raises(DimensionError):
            relative_error(np.ones(3), np.ones(4))
        with pytest.raises(DegenerateInputError):
            relative_error(np.zeros(3), np.ones(3))


class TestCompression:
    def test_hand_value(self):
        # 600 entries over 5*4 + 4*4*3 + 3*5*2 + 2*6 = 110 parameters
        assert compression_ratio((5, 4, 5, 6), (1, 4, 3, 2, 1)) == pytest.approx(600 / 110)
        assert round(compression_ratio((5, 4, 5, 6), (1, 4, 3, 2, 1)), 4) == 5.4545

    def test_single_mode(self):
        assert compression_ratio((7,), (1, 1)) == 1.0

    def test_rank_one(self):
        assert compression_ratio((2, 2, 2, 2), (1, 1, 1, 1, 1)) == 2.0

    def test_length_mismatch(self):
        with pytest.raises(RankError):
            compression_ratio((2, 2), (1, 1))


def reference_ssim(a, b, window=8, k1=0.01, k2=0.03):
    """Loop-per-window SSIM with population statistics."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    L = a.max() - a.min()
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    vals = []
    for i0 in range(0, a.shape[0], window):
        for j0 in range(0, a.shape[1], window):
            x = a[i0 : i0 + window, j0 : j0 + window].ravel()
            y = b[i0 : i0 + window, j0 : j0 + window].ravel()
            n = x.size
            mx, my = sum(x) / n, sum(y) / n
            vx = sum((v - mx) ** 2 for v in x) / n
            vy = sum((v - my) ** 2 for v in y) / n
            cxy = sum((u - mx) * (v - my) for u, v in zip(x, y)) / n
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return sum(vals) / len(vals)


class TestSsim:
    def test_identical(self):
        a = np.random.default_rng(0).random((20, 17))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-15)

    def test_shift_penalized(self):
        a = np.random.default_rng(0).random((16, 16))
        rng_ = a.max() - a.min()
        assert ssim(a, a + rng_) < 1.0

    def test_reference_48x42(self):
        rng = np.random.default_rng(11)
        a = rng.random((48, 42)) * 255
        b = a + rng.normal(0, 20, a.shape)
        assert abs(ssim(a, b) - reference_ssim(a, b)) <= 1e-10

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            ssim(np.ones((4, 4)), np.ones((4, 5)))


def test_train_metrics():
    tt = seeded_train((8, 8, 3), (1, 2, 2, 1))
    full = reconstruct(tt)
    m = train_metrics(full, tt, image_slice=(0,))
    assert m.relative_error == 0.0
    assert m.ssim == pytest.approx(1.0)
    assert m.compression_ratio == compression_ratio(tt.shape, tt.ranks)


@settings(max_examples=25, deadline=None)
@given(
    shape=st.lists(st.integers(1, 4), min_size=2, max_size=4),
    rank=st.integers(1, 3),
    seed=st.integers(0, 2**16),
)
def test_reconstruct_block_any_region(shape, rank, seed):
    ranks = [1] + [rank] * (len(shape) - 1) + [1]
    tt = seeded_train(shape, ranks, seed)
    full = reconstruct(tt)
    rng = np.random.default_rng(seed)
    starts = [int(rng.integers(0, n)) for n in shape]
    stops = [int(rng.integers(s + 1, n + 1)) for s, n in zip(starts, shape)]
    blk = reconstruct_block(tt.cores, starts, stops)
    sl = tuple(slice(a, b) for a, b in zip(starts, stops))
    np.testing.assert_allclose(blk, full[sl], rtol=1e-12, atol=1e-14)
