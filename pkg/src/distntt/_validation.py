"""Input validation helpers shared by the estimators, driver and CLI."""

import numbers

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, NonnegativityError, RankError


def check_tensor(X, nonneg=False, min_ndim=1, allow_zero=True, name="X"):
    """Return ``X`` as a C-contiguous float64 array after basic checks.

    Parameters
    ----------
    X : array_like
        Dense tensor.
    nonneg : bool
        Reject negative entries with :class:`NonnegativityError`.
    min_ndim : int
        Minimum number of modes.
    allow_zero : bool
        If False, an all-zero input raises :class:`DegenerateInputError`.
    """
    arr = np.ascontiguousarray(X, dtype=np.float64)
    if arr.ndim < min_ndim:
        raise DimensionError(f"{name} must have at least {min_ndim} modes, got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    if nonneg and arr.min() < 0:
        raise NonnegativityError(f"{name} has negative entries (min {arr.min():g})")
    if not allow_zero and not np.any(arr):
        raise DegenerateInputError(f"{name} is identically zero")
    return arr


def check_positive_int(value, name):
    if not isinstance(value, numbers.Integral) or isinstance(value, bool) or value < 1:
        raise ValueError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_rank_vector(ranks, ndim):
    """Normalize a TT-rank specification to the full vector ``(1, r1, ..., 1)``.

    Accepts the full vector of length ``ndim + 1``, the ``ndim - 1`` inner
    ranks, or a single integer applied to every inner bond.
    """
    if isinstance(ranks, numbers.Integral):
        ranks = [int(ranks)] * (ndim - 1)
    ranks = [int(r) for r in ranks]
    if len(ranks) == ndim - 1:
        ranks = [1] + ranks + [1]
    if len(ranks) == 1 and ndim > 2:
        ranks = [1] + ranks * (ndim - 1) + [1]
    if len(ranks) != ndim + 1:
        raise RankError(f"rank vector of length {len(ranks)} does not fit a {ndim}-mode tensor")
    if ranks[0] != 1 or ranks[-1] != 1:
        raise RankError(f"boundary ranks must be 1, got {ranks}")
    if min(ranks) < 1:
        raise RankError(f"ranks must be >= 1, got {ranks}")
    return ranks


def check_grid(grid, shape):
    """Validate a processor grid against a tensor or matrix shape."""
    grid = tuple(int(g) for g in grid)
    if len(grid) != len(shape):
        raise DimensionError(f"grid {grid} has {len(grid)} axes, shape {tuple(shape)} has {len(shape)}")
    for g, n in zip(grid, shape):
        if g < 1 or n % g:
            raise DimensionError(f"grid {grid} does not divide shape {tuple(shape)}")
    return grid


def parse_int_list(text, sep=","):
    """Parse ``"1,2,3"`` or ``"2x2x1"`` into a list of ints."""
    try:
        return [int(tok) for tok in str(text).replace("x", sep).split(sep) if tok.strip()]
    except ValueError as exc:
        raise ValueError(f"cannot parse integer list from {text!r}") from exc
