import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from distntt.rng import block_flat_indices, normal_at, stream_key, uniform_at, uniform_block


def test_uniform_range_and_moments():
    u = uniform_at(stream_key(1), np.arange(200_000, dtype=np.uint64))
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.005
    assert abs(u.var() - 1 / 12) < 0.002


def test_streams_differ_and_repeat():
    idx = np.arange(1000, dtype=np.uint64)
    a = uniform_at(stream_key(1, 2), idx)
    b = uniform_at(stream_key(1, 3), idx)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, uniform_at(stream_key(1, 2), idx))


def test_normal_moments():
    z = normal_at(stream_key(5), np.arange(400_000, dtype=np.uint64))
    assert abs(z.mean()) < 0.01
    assert abs(z.var() - 1.0) < 0.01
    assert np.all(np.isfinite(z))


def test_block_indices_match_arange():
    shape = (3, 4, 5)
    full = np.arange(60, dtype=np.uint64).reshape(shape)
    np.testing.assert_array_equal(block_flat_indices(shape, (1, 0, 2), (3, 3, 5)), full[1:3, 0:3, 2:5])


@settings(max_examples=30, deadline=None)
@given(
    shape=st.lists(st.integers(1, 6), min_size=1, max_size=3),
    key=st.integers(0, 2**63),
    data=st.data(),
)
def test_block_is_slice_of_whole(shape, key, data):
    starts = [data.draw(st.integers(0, n - 1)) for n in shape]
    stops = [data.draw(st.integers(s + 1, n)) for s, n in zip(starts, shape)]
    whole = uniform_block(key, shape, [0] * len(shape), shape)
    part = uniform_block(key, shape, starts, stops)
    np.testing.assert_array_equal(part, whole[tuple(slice(a, b) for a, b in zip(starts, stops))])
