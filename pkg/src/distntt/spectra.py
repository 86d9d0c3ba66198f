"""Singular values of distributed stage matrices and the tail-ratio rank rule."""

import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateInputWarning, NumericalError

DEFAULT_GRAM_CAP = 4096


@dataclass
class SpectrumResult:
    singular_values: np.ndarray

    def __post_init__(self):
        self.singular_values = np.asarray(self.singular_values, dtype=np.float64)


def _round_robin(n):
    """Rounds of disjoint index pairs covering every pair once (circle method)."""
    players = list(range(n)) + ([-1] if n % 2 else [])
    half = len(players) // 2
    rounds = []
    for _ in range(len(players) - 1):
        pairs = [(players[k], players[-1 - k]) for k in range(half)]
        pairs = [(min(a, b), max(a, b)) for a, b in pairs if a >= 0 and b >= 0]
        rounds.append((np.array([a for a, _ in pairs]), np.array([b for _, b in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _rotate_rows(M, P, Q, c, s):
    rows_p, rows_q = M[P], M[Q]
    M[P] = c * rows_p - s * rows_q
    M[Q] = s * rows_p + c * rows_q


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Each sweep visits every off-diagonal pair once, in round-robin order so
    that the rotations of a round act on disjoint index pairs and can be
    applied together. Iteration stops when the off-diagonal Frobenius norm
    falls below ``tol * ||A||_F``.

    Returns
    -------
    eigenvalues : ndarray
        Descending.
    eigenvectors : ndarray
        Orthonormal columns matching ``eigenvalues``.
    """
    A = np.array(a, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    A = 0.5 * (A + A.T)
    Vt = np.eye(n)
    norm = np.linalg.norm(A)
    if n > 1 and norm > 0:
        rounds = _round_robin(n)
        for sweep in range(max_sweeps + 1):
            off = np.linalg.norm(A - np.diag(np.diag(A)))
            if off <= tol * norm:
                break
            if sweep == max_sweeps:
                raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")
            for P, Q in rounds:
                apq = A[P, Q]
                active = np.abs(apq) > 1e-300
                if not active.any():
                    continue
                P, Q, apq = P[active], Q[active], apq[active]
                tau = (A[Q, Q] - A[P, P]) / (2.0 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
                c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
                s = t[:, None] * c
                # J^T A J as two row rotations around a transpose; rows stay contiguous
                _rotate_rows(A, P, Q, c, s)
                A = np.ascontiguousarray(A.T)
                _rotate_rows(A, P, Q, c, s)
                A[P, Q] = 0.0
                A[Q, P] = 0.0
                _rotate_rows(Vt, P, Q, c, s)
    V = Vt.T
    w = np.diag(A).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], V[:, order]


def dist_gram_eigh(x, comm, cap=DEFAULT_GRAM_CAP):
    """Eigenpairs of the smaller Gram matrix of a distributed matrix.

    Returns ``(eigenvalues, eigenvectors, side)`` where ``side`` is
    ``"rows"`` for ``X X^T`` (m <= n) or ``"cols"`` for ``X^T X``.
    The Jacobi solve is replicated on every rank.
    """
    m, n = x.shape
    if min(m, n) > cap:
        raise NumericalError(f"stage matrix {m}x{n}: Gram side {min(m, n)} exceeds cap {cap}")
    row, col = x.comms(comm)
    if m <= n:
        panel = col.all_gather_concat(x.local, axis=0)
        with comm.timers.time("GR"):
            part = panel @ panel.T
        gram = row.all_reduce_sum(part)
        side = "rows"
    else:
        panel = row.all_gather_concat(x.local, axis=1)
        with comm.timers.time("GR"):
            part = panel.T @ panel
        gram = col.all_reduce_sum(part)
        side = "cols"
    w, v = jacobi_eigh(gram)
    return w, v, side


def dist_singular_values(x, comm, cap=DEFAULT_GRAM_CAP):
    """Descending singular values of a distributed matrix, via its Gram matrix."""
    w, _, _ = dist_gram_eigh(x, comm, cap)
    return SpectrumResult(np.sqrt(np.maximum(w, 0.0)))


def tail_ratios(sigma):
    """``ratios[k]`` is the relative tail energy left after keeping ``k`` values."""
    sq = np.asarray(sigma, dtype=np.float64) ** 2
    tails = np.concatenate([np.cumsum(sq[::-1])[::-1], [0.0]])
    total = tails[0]
    if total == 0:
        return np.zeros_like(tails)
    return np.sqrt(tails / total)


def choose_rank(spectrum, eps):
    """Smallest ``k >= 1`` whose discarded tail has relative norm ``<= eps``."""
    sigma = spectrum.singular_values if isinstance(spectrum, SpectrumResult) else np.asarray(spectrum, float)
    if sigma.size == 0:
        raise ValueError("empty spectrum")
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if not np.any(sigma):
        warnings.warn("all-zero spectrum, choosing rank 1", DegenerateInputWarning, stacklevel=2)
        return 1
    ratios = tail_ratios(np.sort(np.abs(sigma))[::-1])
    hits = np.flatnonzero(ratios[1:] <= eps)
    return int(hits[0]) + 1
