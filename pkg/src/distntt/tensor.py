"""Dense tensors, tensor trains, contraction and scalar quality metrics.

Dense tensors are plain C-ordered float64 numpy arrays; every reshape in
the package is a reinterpretation of the row-major element order.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ._validation import check_rank_vector
from .exceptions import DegenerateInputError, DimensionError, RankError


@dataclass
class TensorTrain:
    """A train of 3-mode cores ``G[l]`` of shape ``(r[l-1], n[l], r[l])``."""

    cores: list

    def __post_init__(self):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in self.cores]
        if not cores:
            raise RankError("a tensor train needs at least one core")
        for i, core in enumerate(cores):
            if core.ndim != 3:
                raise RankError(f"core {i} has {core.ndim} modes, expected 3")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise RankError("boundary ranks r0 and rd must be 1")
        for i in range(len(cores) - 1):
            if cores[i].shape[2] != cores[i + 1].shape[0]:
                raise RankError(
                    f"rank mismatch between core {i} {cores[i].shape} and core {i + 1} {cores[i + 1].shape}"
                )
        self.cores = cores

    @property
    def ndim(self):
        return len(self.cores)

    @property
    def shape(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self):
        return [1] + [c.shape[2] for c in self.cores]

    @property
    def n_params(self):
        return sum(c.size for c in self.cores)

    def is_nonnegative(self):
        return all(c.min() >= 0 for c in self.cores)


@dataclass
class Metrics:
    relative_error: float
    compression_ratio: float
    ssim: Optional[float] = None


def _as_train(tt):
    return tt if isinstance(tt, TensorTrain) else TensorTrain(list(tt))


def unfold(t, rows):
    """View ``t`` as a ``rows x (size / rows)`` matrix in row-major order."""
    t = np.asarray(t)
    rows = int(rows)
    if rows < 1 or t.size % rows:
        raise DimensionError(f"{rows} rows do not divide a tensor of {t.size} elements")
    return np.ascontiguousarray(t).reshape(rows, t.size // rows)


def tt_element(tt, index):
    """Single entry of the full tensor, by a chain of vector-matrix products."""
    tt = _as_train(tt)
    index = tuple(int(i) for i in index)
    if len(index) != tt.ndim:
        raise IndexError(f"index {index} has {len(index)} entries for a {tt.ndim}-mode train")
    for i, n in zip(index, tt.shape):
        if not 0 <= i < n:
            raise IndexError(f"index {index} out of range for shape {tt.shape}")
    vec = tt.cores[0][0, index[0], :]
    for core, i in zip(tt.cores[1:], index[1:]):
        vec = vec @ core[:, i, :]
    return float(vec[0])


def reconstruct(tt):
    """Contract the train left to right into the full dense tensor."""
    tt = _as_train(tt)
    acc = tt.cores[0].reshape(tt.shape[0], tt.ranks[1])
    for core in tt.cores[1:]:
        r_prev, n, r_next = core.shape
        acc = (acc @ core.reshape(r_prev, n * r_next)).reshape(-1, r_next)
    return acc.reshape(tt.shape)


def reconstruct_block(cores, starts, stops):
    """Entries ``[starts, stops)`` of the contracted train.

    The bond sums run in a fixed sequential order with elementwise
    multiply-adds, so each entry is bit-identical however the index space
    is partitioned.
    """
    acc = np.ones((1, 1))
    for core, a, b in zip(cores, starts, stops):
        sub = core[:, a:b, :]
        out = np.zeros((acc.shape[0], b - a, core.shape[2]))
        for k in range(core.shape[0]):
            out += acc[:, k, None, None] * sub[k][None, :, :]
        acc = out.reshape(-1, core.shape[2])
    return acc.reshape([b - a for a, b in zip(starts, stops)])


def relative_error(a, b):
    """``||a - b||_F / ||a||_F``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    norm_a = np.linalg.norm(a.ravel())
    if norm_a == 0:
        raise DegenerateInputError("reference tensor has zero norm")
    return float(np.linalg.norm((a - b).ravel()) / norm_a)


def compression_ratio(shape, ranks):
    """Number of tensor entries divided by the number of train parameters."""
    shape = [int(n) for n in shape]
    ranks = list(ranks)
    if len(ranks) != len(shape) + 1:
        raise RankError(f"{len(ranks)} ranks given for {len(shape)} modes")
    ranks = check_rank_vector(ranks, len(shape))
    params = sum(n * ranks[i] * ranks[i + 1] for i, n in enumerate(shape))
    return float(np.prod(shape, dtype=np.float64) / params)


def ssim(a, b, data_range=None, window=8, k1=0.01, k2=0.03):
    """Mean structural similarity over non-overlapping square windows.

    Windows tile the image from the top-left corner; trailing rows and
    columns that do not fill a whole window form smaller edge windows.
    Means and (co)variances are population statistics within a window.
    ``data_range`` defaults to ``max(a) - min(a)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise DimensionError(f"ssim needs two images of the same 2D shape, got {a.shape} and {b.shape}")
    if data_range is None:
        data_range = float(a.max() - a.min())
    if data_range <= 0:
        raise DegenerateInputError("ssim dynamic range must be positive")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    scores = []
    for r0 in range(0, a.shape[0], window):
        for c0 in range(0, a.shape[1], window):
            wa = a[r0 : r0 + window, c0 : c0 + window]
            wb = b[r0 : r0 + window, c0 : c0 + window]
            mu_a, mu_b = wa.mean(), wb.mean()
            var_a = ((wa - mu_a) ** 2).mean()
            var_b = ((wb - mu_b) ** 2).mean()
            cov = ((wa - mu_a) * (wb - mu_b)).mean()
            num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
            den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
            scores.append(num / den)
    return float(np.mean(scores))


def train_metrics(a, tt, image_slice: Optional[Sequence[int]] = None):
    """Relative error and compression of ``tt`` against the dense tensor ``a``."""
    tt = _as_train(tt)
    approx = reconstruct(tt)
    score = None
    if image_slice is not None:
        idx = (slice(None), slice(None)) + tuple(image_slice)
        score = ssim(np.asarray(a)[idx], approx[idx])
    return Metrics(relative_error(a, approx), compression_ratio(tt.shape, tt.ranks), score)
