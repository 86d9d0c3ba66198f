"""Block-distributed tensors and matrices and the distributed NMF kernels.

A matrix ``X`` (m x n) on a ``(p_r, p_c)`` grid is held as blocks
``X[i, j]`` of shape ``(m/p_r, n/p_c)``; rank ``i * p_c + j`` owns block
``(i, j)``. NMF factors are spread over all ``p`` ranks:

* ``W`` (m x r): row block ``i`` is split among the ``p_c`` ranks of grid
  row ``i``, so concatenating W blocks in rank order gives ``W``.
* ``H`` (r x n): column block ``j`` is split among the ``p_r`` ranks of grid
  column ``j``, so H blocks concatenate in column-major rank order.

Factor splits are balanced and may be ragged when ``p`` does not divide
the factor length (small stage matrices); matrix blocks must divide evenly.
"""

import shutil
import tempfile
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_grid
from .comm import ProcessGrid, grid_comms
from .exceptions import DimensionError
from .store import ChunkedTensorStore, workdir


def split_counts(n, parts):
    """Balanced partition of ``n`` items into ``parts`` (leading parts get the extra)."""
    base, extra = divmod(int(n), int(parts))
    return [base + (k < extra) for k in range(parts)]


def _span(counts, k):
    start = sum(counts[:k])
    return start, start + counts[k]


@dataclass
class DistTensor:
    """This rank's view of a globally block-distributed dense tensor.

    ``writer`` is False for replicated copies that must not be written
    back to a store (several ranks holding the same block).
    """

    shape: tuple
    grid: tuple
    coords: tuple
    local: np.ndarray = field(repr=False)
    writer: bool = True

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        self.grid = check_grid(self.grid, self.shape)
        self.coords = tuple(int(c) for c in self.coords)
        self.local = np.ascontiguousarray(self.local, dtype=np.float64)
        if self.local.shape != self.block_shape:
            raise DimensionError(f"local block {self.local.shape} != expected {self.block_shape}")

    @property
    def block_shape(self):
        return tuple(n // g for n, g in zip(self.shape, self.grid))

    @property
    def starts(self):
        return tuple(c * b for c, b in zip(self.coords, self.block_shape))

    @property
    def stops(self):
        return tuple(s + b for s, b in zip(self.starts, self.block_shape))

    @classmethod
    def scatter(cls, full, grid, rank):
        """Block of a replicated dense array for ``rank`` on ``grid``."""
        full = np.asarray(full, dtype=np.float64)
        grid = check_grid(grid, full.shape)
        coords = ProcessGrid(grid).coords(rank)
        blk = [n // g for n, g in zip(full.shape, grid)]
        sl = tuple(slice(c * b, (c + 1) * b) for c, b in zip(coords, blk))
        return cls(full.shape, grid, coords, full[sl])


class DistMatrix(DistTensor):
    """2D :class:`DistTensor` with factor-distribution helpers."""

    @property
    def m(self):
        return self.shape[0]

    @property
    def n(self):
        return self.shape[1]

    def comms(self, comm):
        return grid_comms(comm, self.grid)

    def w_counts(self):
        """Rows of W per rank of this grid row (ordered by column coordinate)."""
        return split_counts(self.block_shape[0], self.grid[1])

    def h_counts(self):
        """Columns of H per rank of this grid column (ordered by row coordinate)."""
        return split_counts(self.block_shape[1], self.grid[0])

    def w_rows(self):
        """Global row range of this rank's W block."""
        i, j = self.coords
        a, b = _span(self.w_counts(), j)
        off = i * self.block_shape[0]
        return off + a, off + b

    def h_cols(self):
        """Global column range of this rank's H block."""
        i, j = self.coords
        a, b = _span(self.h_counts(), i)
        off = j * self.block_shape[1]
        return off + a, off + b

    def gather(self, comm):
        """Full matrix on every rank (testing and small stages only)."""
        row, col = self.comms(comm)
        return col.all_gather_concat(row.all_gather_concat(self.local, axis=1), axis=0)


def dist_gram(f, comm, transpose=False):
    """Replicated Gram matrix of a distributed factor.

    ``f`` is this rank's H block (``r x n/p``, giving ``H H^T``) or, with
    ``transpose=True``, its W block (``m/p x r``, giving ``W^T W``).
    """
    f = np.asarray(f, dtype=np.float64)
    with comm.timers.time("GR"):
        local = f.T @ f if transpose else f @ f.T
    total = comm.all_reduce_sum(local)
    return 0.5 * (total + total.T)


def dist_xht(x, h, comm):
    """This rank's W-shaped slice of ``X H^T``."""
    row, col = x.comms(comm)
    h = np.asarray(h, dtype=np.float64)
    if h.shape[1] != x.h_counts()[x.coords[0]]:
        raise DimensionError(f"H block {h.shape} does not conform to X block {x.local.shape}")
    h_col = col.all_gather_concat(h, axis=1)
    with comm.timers.time("MM"):
        v = x.local @ h_col.T
    return row.reduce_scatter_sum(v, axis=0, counts=x.w_counts())


def dist_wtx(x, w, comm):
    """This rank's H-shaped slice of ``W^T X``."""
    row, col = x.comms(comm)
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != x.w_counts()[x.coords[1]]:
        raise DimensionError(f"W block {w.shape} does not conform to X block {x.local.shape}")
    w_row = row.all_gather_concat(w, axis=0)
    with comm.timers.time("MM"):
        y = w_row.T @ x.local
    return col.reduce_scatter_sum(y, axis=1, counts=x.h_counts())


def gather_w(x, w, comm):
    """Full W (m x r) on every rank."""
    return comm.all_gather_concat(w, axis=0)


def gather_h(x, h, comm):
    """Full H (r x n) on every rank."""
    row, col = x.comms(comm)
    return row.all_gather_concat(col.all_gather_concat(h, axis=1), axis=1)


def h_as_dist(x, h, comm):
    """Re-block a 1D-distributed H as a ``(1, p_c)`` column-block tensor.

    Every rank of grid column ``j`` ends up holding column block ``j``;
    only the grid-row-0 copy is marked as the writer.
    """
    _, col = x.comms(comm)
    h_col = col.all_gather_concat(h, axis=1)
    r = h_col.shape[0]
    return DistTensor((r, x.n), (1, x.grid[1]), (0, x.coords[1]), h_col, writer=x.coords[0] == 0)


def dist_reshape(src, target_shape, target_grid, comm, scratch=None):
    """Row-major reshape of a distributed tensor into a block-distributed matrix.

    Writers store their block as one chunk of a scratch store; after a
    barrier each rank assembles its target block from the chunks that
    overlap it. The scratch store is removed before returning.

    The target grid may use fewer ranks than ``comm``; the surplus ranks
    contribute their source blocks and return None.
    """
    m, n = (int(s) for s in target_shape)
    size = int(np.prod(src.shape))
    if m * n != size:
        raise DimensionError(f"cannot reshape {src.shape} ({size} elements) into {m}x{n}")
    target_grid = check_grid(target_grid, (m, n))
    pg = ProcessGrid(target_grid)
    if pg.size > comm.size:
        raise DimensionError(f"target grid {target_grid} needs {pg.size} ranks, have {comm.size}")

    path = None
    if comm.rank == 0:
        path = tempfile.mkdtemp(prefix="reshape-", dir=scratch or workdir())
    path = comm.bcast(path)
    try:
        store = ChunkedTensorStore(path, src.shape, src.block_shape)
        if comm.rank == 0:
            store = ChunkedTensorStore.create(path, src.shape, src.block_shape)
        comm.barrier()
        if src.writer:
            chunk = tuple(s // b for s, b in zip(src.starts, src.block_shape))
            store.write_chunk(chunk, src.local)
        comm.barrier()
        result = None
        if comm.rank < pg.size:
            i, j = pg.coords(comm.rank)
            mb, nb = m // target_grid[0], n // target_grid[1]
            rows = np.arange(i * mb, (i + 1) * mb, dtype=np.int64)
            cols = np.arange(j * nb, (j + 1) * nb, dtype=np.int64)
            result = DistMatrix((m, n), target_grid, (i, j), store.gather_flat(rows[:, None] * n + cols[None, :]))
        comm.barrier()
    finally:
        if comm.rank == 0:
            shutil.rmtree(path, ignore_errors=True)
    return result


def stage_grid(m, n, p, p1):
    """Matrix grid ``(g, p/g)`` for an ``m x n`` stage matrix.

    Prefers ``g = p1``; otherwise the largest divisor of ``p1``, then of
    ``p``, such that ``g | m`` and ``(p/g) | n``.
    """
    def ok(g):
        return p % g == 0 and m % g == 0 and n % (p // g) == 0

    for pool in (p1, p):
        for g in sorted((d for d in range(1, pool + 1) if pool % d == 0), reverse=True):
            if ok(g):
                return (g, p // g)
    raise DimensionError(f"no {p}-rank grid divides a {m}x{n} stage matrix")
