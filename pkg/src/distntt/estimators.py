"""scikit-learn style estimators over the distributed solvers."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_tensor
from .comm import run_spmd
from .distmatrix import DistMatrix, gather_h, gather_w
from .nmf import NmfConfig, dist_nmf
from .tensor import TensorTrain, reconstruct, relative_error
from .tt import TtConfig, decompose


class NonnegativeTensorTrain(BaseEstimator):
    """Tensor-train decomposition of a dense tensor.

    Parameters
    ----------
    eps : float, default=0.1
        Per-stage relative tail threshold used to pick each TT rank.
    ranks : sequence of int, optional
        Fixed rank vector; overrides ``eps``.
    method : {"ntt-bcd", "ntt-mu", "svd-tt"}
    max_iters : int
        NMF iterations per stage.
    delta : float
        Extrapolation cap of the BCD solver.
    seed : int
    tol : float, optional
        Early stop on relative objective change.
    grid : tuple of int, optional
        Processor grid over the tensor modes; its product is the number
        of SPMD ranks.
    global_eps : bool
        Divide ``eps`` by ``sqrt(d - 1)`` per stage.
    literal_alg3_steps : bool
        Use the square root of the ``W^T W`` norm as the H step divisor.

    Attributes
    ----------
    train_ : TensorTrain
    cores_ : list of ndarray
    ranks_ : list of int
    compression_ratio_ : float
    reconstruction_err_ : float
        Relative Frobenius error on the training tensor.
    stages_ : list of StageInfo
    timings_ : dict
        Per-category seconds, maximum over ranks.
    """

    def __init__(
        self,
        eps=0.1,
        ranks=None,
        method="ntt-bcd",
        max_iters=100,
        delta=0.9999,
        seed=0,
        tol=None,
        grid=None,
        global_eps=False,
        literal_alg3_steps=False,
    ):
        self.eps = eps
        self.ranks = ranks
        self.method = method
        self.max_iters = max_iters
        self.delta = delta
        self.seed = seed
        self.tol = tol
        self.grid = grid
        self.global_eps = global_eps
        self.literal_alg3_steps = literal_alg3_steps

    def _config(self):
        return TtConfig(
            eps=self.eps,
            ranks=self.ranks,
            method=self.method,
            max_iters=self.max_iters,
            delta=self.delta,
            seed=self.seed,
            tol=self.tol,
            global_eps=self.global_eps,
            literal_alg3_steps=self.literal_alg3_steps,
        )

    def fit(self, X, y=None):
        cfg = self._config()
        X = check_tensor(X, nonneg=cfg.nonneg, min_ndim=2, allow_zero=False)
        res = decompose(X, cfg, self.grid)
        self.train_ = res.train
        self.cores_ = res.train.cores
        self.ranks_ = res.ranks
        self.compression_ratio_ = res.compression_ratio
        self.reconstruction_err_ = res.relative_error
        self.stages_ = res.stages
        self.timings_ = res.timing_summary()
        self.n_features_in_ = X.shape[-1]
        self.shape_ = X.shape
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).train_

    def transform(self, X=None):
        """The fitted train (the decomposition is tied to the training tensor)."""
        check_is_fitted(self, "train_")
        if X is not None and tuple(np.shape(X)) != self.shape_:
            raise ValueError(f"X has shape {np.shape(X)}, fitted on {self.shape_}")
        return self.train_

    def inverse_transform(self, train=None):
        """Dense tensor of ``train`` (default: the fitted train)."""
        if train is None:
            check_is_fitted(self, "train_")
            train = self.train_
        if not isinstance(train, TensorTrain):
            train = TensorTrain(list(train))
        return reconstruct(train)

    def score(self, X, y=None):
        """Negative relative reconstruction error on ``X``."""
        check_is_fitted(self, "train_")
        X = check_tensor(X, min_ndim=2)
        if X.shape != self.shape_:
            raise ValueError(f"X has shape {X.shape}, fitted on {self.shape_}")
        return -relative_error(X, reconstruct(self.train_))


def _nmf_rank(comm, X, grid, cfg):
    x = DistMatrix.scatter(X, grid, comm.rank)
    state = dist_nmf(x, cfg, comm)
    return gather_w(x, state.W, comm), gather_h(x, state.H, comm), state


class DistNMF(TransformerMixin, BaseEstimator):
    """Nonnegative matrix factorization ``X ~ W H`` on a 2D processor grid.

    Parameters
    ----------
    n_components : int
    algorithm : {"bcd", "mu"}
    max_iters : int
    delta : float
    seed : int
    tol : float, optional
    grid : tuple of two ints, default=(1, 1)
    literal_alg3_steps : bool

    Attributes
    ----------
    components_ : ndarray of shape (n_components, n_features)
        ``H``.
    embedding_ : ndarray of shape (n_samples, n_components)
        ``W`` of the training matrix.
    reconstruction_err_ : float
        Frobenius norm of ``X - W H``.
    n_iter_ : int
    objective_history_ : list of float
    n_corrections_ : int
    """

    def __init__(
        self,
        n_components=2,
        algorithm="bcd",
        max_iters=100,
        delta=0.9999,
        seed=0,
        tol=None,
        grid=(1, 1),
        literal_alg3_steps=False,
    ):
        self.n_components = n_components
        self.algorithm = algorithm
        self.max_iters = max_iters
        self.delta = delta
        self.seed = seed
        self.tol = tol
        self.grid = grid
        self.literal_alg3_steps = literal_alg3_steps

    def fit(self, X, y=None):
        self.fit_transform(X)
        return self

    def fit_transform(self, X, y=None):
        X = check_array(X, dtype=np.float64, order="C")
        X = check_tensor(X, nonneg=True, min_ndim=2, allow_zero=False)
        cfg = NmfConfig(
            rank=self.n_components,
            max_iters=self.max_iters,
            delta=self.delta,
            seed=self.seed,
            algorithm=self.algorithm,
            tol=self.tol,
            literal_alg3_steps=self.literal_alg3_steps,
        )
        grid = tuple(self.grid)
        W, H, state = run_spmd(int(np.prod(grid)), _nmf_rank, X, grid, cfg)[0]
        self.embedding_ = W
        self.components_ = H
        self.n_features_in_ = X.shape[1]
        self.objective_history_ = list(state.history)
        self.n_iter_ = state.iterations
        self.n_corrections_ = state.corrections
        self.reconstruction_err_ = float(np.linalg.norm(X - W @ H))
        return W

    def transform(self, X, max_iters=None):
        """Nonnegative ``W`` for new rows with ``H`` held fixed (projected gradient)."""
        check_is_fitted(self, "components_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, fitted on {self.n_features_in_}")
        H = self.components_
        hht = H @ H.T
        xht = X @ H.T
        lip = np.linalg.norm(hht, 2)
        W = np.full((X.shape[0], H.shape[0]), 1.0 / max(H.shape[0], 1))
        if lip == 0:
            return np.zeros_like(W)
        for _ in range(max_iters or self.max_iters):
            W = np.maximum(0.0, W - (W @ hht - xht) / lip)
        return W

    def inverse_transform(self, W):
        check_is_fitted(self, "components_")
        return np.asarray(W, dtype=np.float64) @ self.components_
