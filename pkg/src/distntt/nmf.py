"""Distributed nonnegative matrix factorization.

Two solvers minimize ``0.5 * ||X - W H||_F^2`` over ``W, H >= 0`` for a
block-distributed ``X``:

* ``bcd``: projected block gradient steps with Lipschitz step sizes taken
  from the Gram matrices, columnwise L1 normalization of ``W``, Nesterov
  extrapolation, and a correction rule that drops the extrapolation
  whenever the objective fails to decrease.
* ``mu``: Frobenius multiplicative updates.

All cross-rank traffic goes through :func:`dist_gram`, :func:`dist_xht`,
:func:`dist_wtx` and scalar all-reduces, so every rank only ever holds its
own factor blocks plus the replicated ``r x r`` Gram matrices.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .distmatrix import dist_gram, dist_wtx, dist_xht
from .exceptions import DegenerateInputError, DegenerateInputWarning, NonnegativityError
from .rng import stream_key, uniform_block

MU_FLOOR = 1e-16


@dataclass
class NmfConfig:
    """Solver settings.

    ``delta`` caps the extrapolation weights; ``tol`` enables an early stop
    on the relative change of the accepted objective.
    ``literal_alg3_steps`` divides the H gradient by the square root of the
    ``W^T W`` spectral norm instead of the norm itself.
    """

    rank: int
    max_iters: int = 100
    delta: float = 0.9999
    seed: int = 0
    algorithm: str = "bcd"
    tol: Optional[float] = None
    literal_alg3_steps: bool = False

    def __post_init__(self):
        if int(self.rank) < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if int(self.max_iters) < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.algorithm not in ("bcd", "mu"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.rank = int(self.rank)
        self.max_iters = int(self.max_iters)


@dataclass
class NmfState:
    W: np.ndarray
    H: np.ndarray
    Wm: np.ndarray
    Hm: np.ndarray
    HHt: np.ndarray
    XHt: np.ndarray
    WtW: np.ndarray
    WtX: Optional[np.ndarray]
    xnorm2: float
    seed: int
    t: float = 1.0
    obj: float = 0.0
    restarts: int = 0
    corrections: int = 0
    accepted: int = 0
    iterations: int = 0
    history: list = field(default_factory=list)
    # start-of-iteration iterate, its Gram norms, and the L1 scale applied this iteration
    W_prev: Optional[np.ndarray] = None
    H_prev: Optional[np.ndarray] = None
    hh_prev: float = 0.0
    ww_prev: float = 0.0
    h_scale: Optional[np.ndarray] = None


def _spectral_norm(gram, comm):
    with comm.timers.time("Norm"):
        return float(np.linalg.norm(gram, 2)) if gram.size else 0.0


def _random_factors(x, r, seed, restart, comm):
    m, n = x.shape
    wa, wb = x.w_rows()
    ha, hb = x.h_cols()
    with comm.timers.time("INIT"):
        W = uniform_block(stream_key(seed, restart, 1), (m, r), (wa, 0), (wb, r))
        H = uniform_block(stream_key(seed, restart, 2), (r, n), (0, ha), (r, hb))
    with comm.timers.time("Norm"):
        local = np.array([np.sum(W * W), np.sum(H * H)])
    wn2, hn2 = comm.all_reduce_sum(local)
    scale = np.sqrt(np.sqrt(x.xnorm2_cache))
    with comm.timers.time("INIT"):
        W = W / np.sqrt(wn2) * scale
        H = H / np.sqrt(hn2) * scale
    return W, H


def _x_norm2(x, comm):
    if not hasattr(x, "xnorm2_cache"):
        with comm.timers.time("Norm"):
            local = float(np.sum(x.local * x.local))
            neg = float(np.sum(x.local < 0))
        total, n_neg = comm.all_reduce_sum(np.array([local, neg]))
        if n_neg:
            raise NonnegativityError(f"input matrix has {int(n_neg)} negative entries")
        x.xnorm2_cache = float(total)
    return x.xnorm2_cache


def nmf_init(x, r, seed, comm, restart=0):
    """Random nonnegative start, scaled so that ``||W||_F^2 = ||H||_F^2 = ||X||_F``.

    Entries are uniform on [0, 1) and keyed by global position, so the
    global factors do not depend on the number of ranks.
    """
    xnorm2 = _x_norm2(x, comm)
    if xnorm2 == 0:
        raise DegenerateInputError("cannot factorize an all-zero matrix")
    W, H = _random_factors(x, r, seed, restart, comm)
    state = NmfState(
        W=W,
        H=H,
        Wm=W.copy(),
        Hm=H.copy(),
        HHt=dist_gram(H, comm),
        XHt=dist_xht(x, H, comm),
        WtW=dist_gram(W, comm, transpose=True),
        WtX=None,
        xnorm2=xnorm2,
        seed=seed,
        restarts=restart,
        obj=0.5 * xnorm2,
    )
    return state


def nmf_objective(state, x, comm):
    """``0.5 * ||X - W H||_F^2`` from the cached products, without forming ``W H``.

    Requires ``WtX`` for the current ``W`` and ``WtW``/``HHt`` for the
    current factors.
    """
    if state.WtX is None:
        state.WtX = dist_wtx(x, state.W, comm)
    with comm.timers.time("MAD"):
        cross = float(np.sum(state.WtX * state.H))
    cross = comm.all_reduce_scalar(cross)
    quad = float(np.sum(state.WtW * state.HHt))
    return 0.5 * (state.xnorm2 - 2.0 * cross + quad)


def bcd_step(state, x, comm, cfg):
    """One projected gradient update of W, then of H, from the momentum points."""
    state.W_prev, state.H_prev = state.W, state.H
    state.hh_prev = _spectral_norm(state.HHt, comm)
    state.ww_prev = _spectral_norm(state.WtW, comm)

    lw = state.hh_prev
    with comm.timers.time("MM"):
        grad = state.Wm @ state.HHt
    if lw > 0:
        with comm.timers.time("MAD"):
            grad -= state.XHt
            W = np.maximum(0.0, state.Wm - grad / lw)
    else:
        warnings.warn("H is identically zero, skipping the W update", DegenerateInputWarning, stacklevel=2)
        W = np.maximum(0.0, state.Wm)

    # columnwise L1 normalization of W; the scale moves into H so W H is unchanged
    with comm.timers.time("Norm"):
        colsum = W.sum(axis=0)
    colsum = comm.all_reduce_sum(colsum)
    scale = np.where(colsum > 0, colsum, 1.0)
    with comm.timers.time("MAD"):
        W = W / scale
        Hm = state.Hm * scale[:, None]
    state.h_scale = scale
    state.W = W
    state.WtW = dist_gram(W, comm, transpose=True)

    lh = _spectral_norm(state.WtW, comm)
    if cfg.literal_alg3_steps:
        lh = np.sqrt(lh)
    state.WtX = dist_wtx(x, W, comm)
    with comm.timers.time("MM"):
        grad = state.WtW @ Hm
    if lh > 0:
        with comm.timers.time("MAD"):
            grad -= state.WtX
            H = np.maximum(0.0, Hm - grad / lh)
    else:
        warnings.warn("W is identically zero, skipping the H update", DegenerateInputWarning, stacklevel=2)
        H = np.maximum(0.0, Hm)
    state.Hm = Hm
    state.H = H
    state.HHt = dist_gram(H, comm)
    state.XHt = dist_xht(x, H, comm)
    return state


def _refresh(state, x, comm):
    state.HHt = dist_gram(state.H, comm)
    state.XHt = dist_xht(x, state.H, comm)
    state.WtW = dist_gram(state.W, comm, transpose=True)
    state.WtX = None


def bcd_correct_or_extrapolate(state, x, comm, cfg, force_correction=False):
    """Accept the step with momentum, or undo it if the objective did not drop.

    Before any step has been accepted, a correction restarts from a fresh
    random point (next restart stream); afterwards it returns to the last
    accepted iterate without extrapolation, so the following step is a
    plain descent step.
    """
    obj = nmf_objective(state, x, comm)
    if force_correction or obj >= state.obj:
        state.corrections += 1
        if state.accepted == 0:
            fresh = nmf_init(x, state.W.shape[1], state.seed, comm, restart=state.restarts + 1)
            fresh.obj, fresh.t = state.obj, state.t
            fresh.corrections, fresh.history = state.corrections, state.history
            fresh.iterations = state.iterations
            return fresh
        state.W, state.H = state.W_prev, state.H_prev
        state.Wm, state.Hm = state.W.copy(), state.H.copy()
        _refresh(state, x, comm)
        return state

    t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * state.t**2))
    w = (state.t - 1.0) / t_next
    hh = _spectral_norm(state.HHt, comm)
    ww = _spectral_norm(state.WtW, comm)
    w_w = min(w, cfg.delta * np.sqrt(state.hh_prev / hh)) if hh > 0 else 0.0
    w_h = min(w, cfg.delta * np.sqrt(state.ww_prev / ww)) if ww > 0 else 0.0
    with comm.timers.time("MAD"):
        state.Wm = state.W + w_w * (state.W - state.W_prev)
        state.Hm = state.H + w_h * (state.H - state.H_prev * state.h_scale[:, None])
    state.t = t_next
    state.obj = obj
    state.accepted += 1
    state.history.append(obj)
    return state


def mu_step(state, x, comm, cfg=None):
    """One multiplicative update of W then H."""
    with comm.timers.time("MM"):
        denom = state.W @ state.HHt
    with comm.timers.time("MAD"):
        W = state.W * state.XHt / (denom + MU_FLOOR)
    state.W = W
    state.WtW = dist_gram(W, comm, transpose=True)
    state.WtX = dist_wtx(x, W, comm)
    with comm.timers.time("MM"):
        denom = state.WtW @ state.H
    with comm.timers.time("MAD"):
        H = state.H * state.WtX / (denom + MU_FLOOR)
    state.H = H
    state.HHt = dist_gram(H, comm)
    state.XHt = dist_xht(x, H, comm)
    state.Wm, state.Hm = state.W, state.H
    state.obj = nmf_objective(state, x, comm)
    state.history.append(state.obj)
    return state


def dist_nmf(x, cfg, comm, callback=None):
    """Factorize a distributed nonnegative matrix.

    Returns the final :class:`NmfState`; ``state.W`` and ``state.H`` are this
    rank's factor blocks. ``callback(state)`` runs after every iteration.
    """
    state = nmf_init(x, cfg.rank, cfg.seed, comm)
    if cfg.algorithm == "mu":
        state.history.append(nmf_objective(state, x, comm))
    for _ in range(cfg.max_iters):
        prev = state.history[-1] if state.history else None
        if cfg.algorithm == "bcd":
            bcd_step(state, x, comm, cfg)
            state = bcd_correct_or_extrapolate(state, x, comm, cfg)
        else:
            mu_step(state, x, comm, cfg)
        state.iterations += 1
        if callback is not None:
            callback(state)
        if cfg.tol and prev is not None and state.history and state.history[-1] != prev:
            if abs(prev - state.history[-1]) <= cfg.tol * max(abs(prev), 1e-300):
                break
    return state
