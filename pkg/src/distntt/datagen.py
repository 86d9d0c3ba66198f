"""Synthetic tensors with known tensor-train ranks, and Gaussian noise."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import check_grid, check_rank_vector
from .comm import ProcessGrid
from .distmatrix import DistTensor
from .rng import block_flat_indices, normal_at, stream_key, uniform_block
from .tensor import TensorTrain, reconstruct_block


@dataclass
class GenSpec:
    """What to generate: shape, TT ranks, seed and optional noise variance."""

    shape: Sequence[int]
    ranks: Sequence[int]
    seed: int = 0
    noise_var: float = 0.0
    clip: bool = False
    noise_seed: Optional[int] = None

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.ranks = check_rank_vector(self.ranks, len(self.shape))
        if self.noise_var < 0:
            raise ValueError(f"noise variance must be >= 0, got {self.noise_var}")


def random_train(shape, ranks, seed=0):
    """Tensor train whose core entries are uniform on [0, 1)."""
    ranks = check_rank_vector(ranks, len(shape))
    cores = []
    for l, n in enumerate(shape):
        core_shape = (ranks[l], int(n), ranks[l + 1])
        cores.append(uniform_block(stream_key(seed, 7, l), core_shape, (0, 0, 0), core_shape))
    return TensorTrain(cores)


def _noise_key(seed):
    return stream_key(seed, 11)


def _noise_block(shape, starts, stops, variance, seed):
    flat = block_flat_indices(shape, starts, stops)
    return np.sqrt(variance) * normal_at(_noise_key(seed), flat)


def generate(spec, grid, comm):
    """This rank's block of the synthetic tensor on the tensor ``grid``.

    Cores are drawn identically on every rank from the seed; each rank
    contracts only its own index ranges, so the assembled tensor is the
    same bit for bit for any grid.
    """
    grid = check_grid(grid, spec.shape)
    coords = ProcessGrid(grid).coords(comm.rank)
    blk = [n // g for n, g in zip(spec.shape, grid)]
    starts = [c * b for c, b in zip(coords, blk)]
    stops = [s + b for s, b in zip(starts, blk)]
    tt = random_train(spec.shape, spec.ranks, spec.seed)
    local = reconstruct_block(tt.cores, starts, stops)
    if spec.noise_var > 0:
        nseed = spec.seed if spec.noise_seed is None else spec.noise_seed
        local = local + _noise_block(spec.shape, starts, stops, spec.noise_var, nseed)
    if spec.clip:
        local = np.maximum(local, 0.0)
    return DistTensor(spec.shape, grid, coords, local)


def add_noise(t, variance, seed=0):
    """``t`` plus iid Gaussian noise of the given variance (Box-Muller draws).

    The draw for each entry is keyed by its flat index, so adding noise to a
    whole tensor or to its blocks gives the same values.
    """
    t = np.asarray(t, dtype=np.float64)
    if variance < 0:
        raise ValueError(f"variance must be >= 0, got {variance}")
    if variance == 0:
        return t.copy()
    return t + _noise_block(t.shape, [0] * t.ndim, t.shape, variance, seed)
