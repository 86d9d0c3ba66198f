"""Distributed nonnegative tensor-train decomposition."""

from .comm import CATEGORIES, MPIComm, ProcessGrid, ThreadComm, TimingReport, run_spmd, self_comm
from .datagen import GenSpec, add_noise, generate, random_train
from .distmatrix import DistMatrix, DistTensor, dist_gram, dist_reshape, dist_wtx, dist_xht
from .estimators import DistNMF, NonnegativeTensorTrain
from .exceptions import (
    CollectiveContractError,
    DegenerateInputError,
    DegenerateInputWarning,
    DimensionError,
    NonnegativityError,
    NumericalError,
    RankError,
    StoreError,
)
from .nmf import NmfConfig, dist_nmf
from .spectra import SpectrumResult, choose_rank, dist_singular_values, jacobi_eigh
from .store import ChunkedTensorStore, load_train, save_train
from .tensor import TensorTrain, compression_ratio, reconstruct, relative_error, ssim, tt_element, unfold
from .tt import TtConfig, decompose, dist_ntt, dist_relative_error, sweep

__version__ = "0.1.0"

__all__ = [
    "CATEGORIES",
    "ChunkedTensorStore",
    "CollectiveContractError",
    "DegenerateInputError",
    "DegenerateInputWarning",
    "DimensionError",
    "DistMatrix",
    "DistNMF",
    "DistTensor",
    "GenSpec",
    "MPIComm",
    "NmfConfig",
    "NonnegativeTensorTrain",
    "NonnegativityError",
    "NumericalError",
    "ProcessGrid",
    "RankError",
    "SpectrumResult",
    "StoreError",
    "TensorTrain",
    "ThreadComm",
    "TimingReport",
    "TtConfig",
    "add_noise",
    "choose_rank",
    "compression_ratio",
    "decompose",
    "dist_gram",
    "dist_nmf",
    "dist_ntt",
    "dist_relative_error",
    "dist_reshape",
    "dist_singular_values",
    "dist_wtx",
    "dist_xht",
    "generate",
    "jacobi_eigh",
    "load_train",
    "random_train",
    "reconstruct",
    "relative_error",
    "run_spmd",
    "save_train",
    "self_comm",
    "ssim",
    "sweep",
    "tt_element",
    "unfold",
]
