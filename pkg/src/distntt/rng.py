"""Counter-based random numbers addressable by global element index.

Every draw is a pure function of ``(key, index)``, so a rank can generate
exactly its own block of a globally defined random array and the result
does not depend on how the array is partitioned.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def stream_key(*parts):
    """Fold a tuple of nonnegative integers into a 64-bit stream key."""
    key = np.uint64(0x2545F4914F6CDD1D)
    for part in parts:
        if isinstance(part, str):
            part = int.from_bytes(part.encode(), "little") % (1 << 64)
        with np.errstate(over="ignore"):
            key = _splitmix(key ^ np.uint64(int(part) % (1 << 64)))
    return np.uint64(key)


def uniform_at(key, index):
    """Uniform doubles in [0, 1) for the given integer indices of stream ``key``."""
    idx = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        bits = _splitmix(idx * _GOLDEN ^ np.uint64(key))
    return (bits >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def uniform_block(key, shape, starts, stops):
    """Uniform draws for the sub-block ``[starts, stops)`` of a global array.

    Element values are keyed by their row-major flat index in ``shape``.
    """
    flat = block_flat_indices(shape, starts, stops)
    return uniform_at(key, flat)


def normal_at(key, index):
    """Standard normal draws by Box-Muller on two independent uniform streams."""
    u1 = 1.0 - uniform_at(stream_key(int(key), 1), index)
    u2 = uniform_at(stream_key(int(key), 2), index)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def block_flat_indices(shape, starts, stops):
    """Row-major flat indices (uint64) of the sub-block ``[starts, stops)`` of ``shape``."""
    strides = np.cumprod((1,) + tuple(int(n) for n in shape[::-1]))[::-1][1:].astype(np.uint64)
    flat = np.zeros([b - a for a, b in zip(starts, stops)], dtype=np.uint64)
    for ax, (a, b, stride) in enumerate(zip(starts, stops, strides)):
        view = [1] * len(shape)
        view[ax] = -1
        flat = flat + np.arange(a, b, dtype=np.uint64).reshape(view) * stride
    return flat
