"""Distributed tensor-train decomposition driver.

Each stage reshapes the remaining factor into an
``r_{l-1} n_l x (n_{l+1} ... n_d)`` matrix on a ``(g, p/g)`` grid, picks
the next TT rank from the matrix spectrum (or a fixed rank vector),
factorizes it, gathers ``W`` into the next core and hands ``H`` on to the
following stage. The last ``H`` becomes the final core.
"""

import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from ._validation import check_rank_vector, check_tensor
from .comm import CATEGORIES, run_spmd
from .distmatrix import (
    DistMatrix,
    DistTensor,
    dist_reshape,
    dist_wtx,
    dist_xht,
    gather_h,
    gather_w,
    h_as_dist,
    stage_grid,
)
from .exceptions import DimensionError
from .nmf import NmfConfig, dist_nmf
from .rng import stream_key, uniform_at
from .spectra import DEFAULT_GRAM_CAP, choose_rank, dist_gram_eigh
from .tensor import TensorTrain, compression_ratio, reconstruct_block

METHODS = ("ntt-bcd", "ntt-mu", "svd-tt")
PROBE_THRESHOLD = 10**8


@dataclass
class TtConfig:
    """Decomposition settings.

    ``eps`` is the per-stage tail threshold (a float, or one value per
    stage). A ``ranks`` vector bypasses the spectrum heuristic. With
    ``global_eps`` the threshold is divided by ``sqrt(d - 1)`` so the
    stage errors add up to roughly ``eps`` overall.
    """

    eps: Union[float, Sequence[float]] = 0.1
    ranks: Optional[Sequence[int]] = None
    method: str = "ntt-bcd"
    max_iters: int = 100
    delta: float = 0.9999
    seed: int = 0
    tol: Optional[float] = None
    global_eps: bool = False
    literal_alg3_steps: bool = False
    gram_cap: int = DEFAULT_GRAM_CAP

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    @property
    def nonneg(self):
        return self.method != "svd-tt"

    def stage_eps(self, d):
        eps = list(self.eps) if np.ndim(self.eps) else [float(self.eps)] * (d - 1)
        if len(eps) != d - 1:
            raise ValueError(f"{len(eps)} stage thresholds given for {d - 1} stages")
        if self.global_eps:
            eps = [e / np.sqrt(d - 1) for e in eps]
        for e in eps:
            if not 0 < e <= 1:
                raise ValueError(f"eps must lie in (0, 1], got {e}")
        return eps


@dataclass
class StageInfo:
    stage: int
    matrix_shape: tuple
    grid: tuple
    eps: Optional[float]
    rank: int
    singular_values: Optional[np.ndarray] = None
    residual: Optional[float] = None
    x_norm: Optional[float] = None
    corrections: int = 0
    objective_history: list = field(default_factory=list)
    reshape_s: float = 0.0
    spectrum_s: float = 0.0
    factor_s: float = 0.0
    timings: dict = field(default_factory=dict)


def _stage_residual(x, w, h, comm):
    """``||X - W H||_F`` evaluated blockwise without cancellation."""
    row, col = x.comms(comm)
    w_row = row.all_gather_concat(w, axis=0)
    h_col = col.all_gather_concat(h, axis=1)
    diff = x.local - w_row @ h_col
    return float(np.sqrt(comm.all_reduce_scalar(float(np.sum(diff * diff)))))


def svd_tt_stage(x, r, comm, eig=None, cap=DEFAULT_GRAM_CAP):
    """Rank-``r`` truncated SVD factors of a distributed matrix.

    Uses eigenvectors of the smaller Gram matrix: for ``m <= n``,
    ``W = U_r`` and ``H = U_r^T X``; otherwise ``H = V_r^T`` and
    ``W = X V_r``. Returns this rank's ``(W, H)`` blocks.
    """
    if eig is None:
        eig = dist_gram_eigh(x, comm, cap)
    _, vecs, side = eig
    if not 1 <= r <= min(x.shape):
        raise DimensionError(f"rank {r} outside [1, {min(x.shape)}] for a {x.shape} matrix")
    if side == "rows":
        a, b = x.w_rows()
        w = np.ascontiguousarray(vecs[a:b, :r])
        h = dist_wtx(x, w, comm)
    else:
        a, b = x.h_cols()
        h = np.ascontiguousarray(vecs[a:b, :r].T)
        w = dist_xht(x, h, comm)
    return w, h


def _with_stage(exc, stage):
    try:
        new = type(exc)(f"stage {stage}: {exc}")
    except Exception:
        return exc
    new.stage = stage
    return new


def dist_ntt(a, cfg, comm, stages=None, callback=None):
    """Decompose a distributed tensor into a tensor train.

    Parameters
    ----------
    a : DistTensor
        This rank's block of the input; the first grid extent is the
        preferred row split of every stage matrix.
    cfg : TtConfig
    comm : Communicator
    stages : list, optional
        Receives one :class:`StageInfo` per stage.
    callback : callable, optional
        ``callback(stage, state)`` after every NMF iteration.

    Returns
    -------
    TensorTrain
        Replicated on every rank.
    """
    shape = a.shape
    d = len(shape)
    p = comm.size
    p1 = a.grid[0]
    if d < 2:
        raise DimensionError("a tensor train needs at least two modes")
    fixed = check_rank_vector(cfg.ranks, d) if cfg.ranks is not None else None
    eps_list = cfg.stage_eps(d) if fixed is None else [None] * (d - 1)

    ranks = [1]
    cores = []
    current = a
    x = None
    h = None
    for l in range(d - 1):
        try:
            snap = comm.timers.snapshot()
            m = ranks[-1] * shape[l]
            n = int(np.prod(shape[l + 1 :]))
            grid = stage_grid(m, n, p, p1)
            t0 = time.perf_counter()
            x = dist_reshape(current, (m, n), grid, comm)
            t1 = time.perf_counter()

            eig = None
            sigma = None
            if fixed is None or cfg.method == "svd-tt":
                eig = dist_gram_eigh(x, comm, cfg.gram_cap)
                sigma = np.sqrt(np.maximum(eig[0], 0.0))
            if fixed is None:
                r = choose_rank(sigma, eps_list[l])
            else:
                r = fixed[l + 1]
            r = max(1, min(r, m, n))
            t2 = time.perf_counter()

            info = StageInfo(l + 1, (m, n), grid, eps_list[l], r, singular_values=sigma)
            if cfg.method == "svd-tt":
                w, h = svd_tt_stage(x, r, comm, eig=eig)
            else:
                ncfg = NmfConfig(
                    rank=r,
                    max_iters=cfg.max_iters,
                    delta=cfg.delta,
                    seed=int(stream_key(cfg.seed, l) >> np.uint64(1)),
                    algorithm="bcd" if cfg.method == "ntt-bcd" else "mu",
                    tol=cfg.tol,
                    literal_alg3_steps=cfg.literal_alg3_steps,
                )
                hook = None if callback is None else (lambda st, _l=l + 1: callback(_l, st))
                state = dist_nmf(x, ncfg, comm, callback=hook)
                w, h = state.W, state.H
                info.corrections = state.corrections
                info.objective_history = list(state.history)
            t3 = time.perf_counter()
            info.residual = _stage_residual(x, w, h, comm)
            info.x_norm = float(np.sqrt(comm.all_reduce_scalar(float(np.sum(x.local * x.local)))))

            core = gather_w(x, w, comm).reshape(ranks[-1], shape[l], r)
            cores.append(core)
            ranks.append(r)
            if l < d - 2:
                current = h_as_dist(x, h, comm)
            info.reshape_s, info.spectrum_s, info.factor_s = t1 - t0, t2 - t1, t3 - t2
            info.timings = comm.timers.since(snap)
            if stages is not None:
                stages.append(info)
        except Exception as exc:
            raise _with_stage(exc, l + 1) from exc

    last = gather_h(x, h, comm)
    cores.append(last.reshape(ranks[-1], shape[-1], 1))
    return TensorTrain(cores)


def _probe_indices(shape, n_probes, seed):
    key = stream_key(seed, 13)
    cols = []
    for ax, n in enumerate(shape):
        u = uniform_at(stream_key(int(key), ax), np.arange(n_probes, dtype=np.uint64))
        cols.append(np.minimum((u * n).astype(np.int64), n - 1))
    return np.stack(cols, axis=1)


def tt_elements(tt, indices):
    """Vectorized :func:`tt_element` over an ``(N, d)`` index array."""
    indices = np.asarray(indices, dtype=np.int64)
    vec = tt.cores[0][0, indices[:, 0], :]
    for l, core in enumerate(tt.cores[1:], start=1):
        vec = np.einsum("pk,pkj->pj", vec, core[:, indices[:, l], :].transpose(1, 0, 2))
    return vec[:, 0]


def dist_relative_error(a, tt, comm, n_probes=None, seed=0, threshold=PROBE_THRESHOLD):
    """Relative error of ``tt`` against a distributed tensor.

    Compares every element (each rank reconstructs its own block) unless
    the tensor exceeds ``threshold`` elements or ``n_probes`` is given, in
    which case the error is estimated on that many seeded random indices
    (10^4 by default).
    """
    size = int(np.prod(a.shape))
    if n_probes is None and size <= threshold:
        approx = reconstruct_block(tt.cores, a.starts, a.stops)
        diff = a.local - approx
        sums = np.array([np.sum(diff * diff), np.sum(a.local * a.local)])
    else:
        idx = _probe_indices(a.shape, int(n_probes or 10**4), seed)
        mine = np.all((idx >= np.array(a.starts)) & (idx < np.array(a.stops)), axis=1)
        idx = idx[mine]
        vals = a.local[tuple((idx - np.array(a.starts)).T)]
        diff = vals - tt_elements(tt, idx)
        sums = np.array([np.sum(diff * diff), np.sum(vals * vals)])
    num, den = comm.all_reduce_sum(sums)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(np.sqrt(num / den))


def sweep(a, eps_list, cfg, comm, n_probes=None):
    """Decompose once per threshold and tabulate ranks, compression and error.

    A fixed ``cfg.ranks`` takes precedence over the thresholds.

    Returns a list of dict rows with keys ``eps``, ``ranks``,
    ``compression_ratio``, ``relative_error``, ``wall_time`` and
    ``error`` (the failure message of a row that raised, else None).
    """
    if not len(eps_list):
        raise ValueError("eps_list must not be empty")
    rows = []
    for eps in eps_list:
        row = {"eps": float(eps), "ranks": None, "compression_ratio": None,
               "relative_error": None, "wall_time": None, "error": None}
        comm.barrier()
        start = time.perf_counter()
        try:
            tt = dist_ntt(a, replace(cfg, eps=eps), comm)
            row["wall_time"] = time.perf_counter() - start
            row["ranks"] = tt.ranks
            row["compression_ratio"] = compression_ratio(tt.shape, tt.ranks)
            row["relative_error"] = dist_relative_error(a, tt, comm, n_probes=n_probes, seed=cfg.seed)
        except Exception as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def default_grid(shape, p):
    """Spread ``p`` ranks over the modes of ``shape``, largest factors first.

    Prime factors of ``p`` are assigned greedily to the mode with the most
    remaining divisible extent.
    """
    grid = [1] * len(shape)
    rest = int(p)
    factors = []
    f = 2
    while rest > 1:
        while rest % f == 0:
            factors.append(f)
            rest //= f
        f += 1
    for f in sorted(factors, reverse=True):
        best = None
        for ax, n in enumerate(shape):
            if (n // grid[ax]) % f == 0 and (best is None or n // grid[ax] > shape[best] // grid[best]):
                best = ax
        if best is None:
            raise DimensionError(f"cannot spread {p} ranks over shape {tuple(shape)}")
        grid[best] *= f
    return tuple(grid)


def _decompose_rank(comm, tensor, cfg, grid):
    a = DistTensor.scatter(tensor, grid, comm.rank)
    stages = []
    comm.timers.reset()
    tt = dist_ntt(a, cfg, comm, stages=stages)
    err = dist_relative_error(a, tt, comm)
    return tt, stages, err, comm.timers.as_dict()


@dataclass
class DecompositionResult:
    train: TensorTrain
    stages: list
    relative_error: float
    timings: list
    grid: tuple

    @property
    def ranks(self):
        return self.train.ranks

    @property
    def compression_ratio(self):
        return compression_ratio(self.train.shape, self.train.ranks)

    def timing_summary(self):
        """Per-category maximum over ranks."""
        return {k: max(t[k] for t in self.timings) for k in CATEGORIES}


def decompose(tensor, cfg=None, grid=None):
    """Decompose an in-memory tensor with the in-process SPMD backend.

    ``grid`` is the tensor processor grid (defaults to a single rank).
    """
    cfg = cfg or TtConfig()
    tensor = check_tensor(tensor, nonneg=cfg.nonneg, min_ndim=2, allow_zero=False)
    grid = tuple(grid) if grid is not None else (1,) * tensor.ndim
    p = int(np.prod(grid))
    results = run_spmd(p, _decompose_rank, tensor, cfg, grid)
    tt, stages, err, _ = results[0]
    return DecompositionResult(tt, stages, err, [r[3] for r in results], grid)
