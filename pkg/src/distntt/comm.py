"""SPMD communicators, process grids and timing instrumentation.

The required backend runs ``p`` ranks as threads of one process
(:func:`run_spmd`). Collectives exchange references through a shared slot
table guarded by a barrier, and every reduction is accumulated in
rank-ascending order on the receiving rank, so results are reproducible to
the bit for a fixed ``p``. :class:`MPIComm` adapts an ``mpi4py``
communicator to the same contract.
"""

import threading
import time
from contextlib import contextmanager

import numpy as np

from .exceptions import CollectiveContractError, DimensionError

LOCAL_CATEGORIES = ("GR", "MM", "MAD", "Norm", "INIT")
COMM_CATEGORIES = ("AG", "AR", "RSC")
CATEGORIES = LOCAL_CATEGORIES + COMM_CATEGORIES


class TimingReport:
    """Accumulated wall time per category (seconds)."""

    def __init__(self):
        self.reset()

    def reset(self):
        self._totals = dict.fromkeys(CATEGORIES, 0.0)

    def add(self, category, seconds):
        self._totals[category] += seconds

    @contextmanager
    def time(self, category):
        start = time.perf_counter()
        try:
            yield
        finally:
            self._totals[category] += time.perf_counter() - start

    def as_dict(self):
        return dict(self._totals)

    def __getitem__(self, category):
        return self._totals[category]

    @property
    def total(self):
        return sum(self._totals.values())

    def snapshot(self):
        return self.as_dict()

    def since(self, snapshot):
        return {k: self._totals[k] - snapshot[k] for k in CATEGORIES}


class ProcessGrid:
    """Cartesian layout of ranks, row-major (last axis varies fastest)."""

    def __init__(self, dims):
        self.dims = tuple(int(d) for d in dims)
        if not self.dims or min(self.dims) < 1:
            raise DimensionError(f"invalid grid {dims}")
        self.size = int(np.prod(self.dims))

    def coords(self, rank):
        if not 0 <= rank < self.size:
            raise IndexError(f"rank {rank} outside grid of size {self.size}")
        return tuple(int(c) for c in np.unravel_index(rank, self.dims))

    def rank(self, coords):
        return int(np.ravel_multi_index(tuple(coords), self.dims))

    def __repr__(self):
        return f"ProcessGrid({'x'.join(map(str, self.dims))})"


class Communicator:
    """Collective operations shared by all backends.

    Subclasses implement ``_exchange`` (an all-to-all of Python objects) and
    ``split``. Timings of sub-communicators are charged to their parent's
    :class:`TimingReport`.
    """

    rank: int
    size: int
    timers: TimingReport

    def _exchange(self, obj):
        raise NotImplementedError

    def split(self, color, key=0):
        raise NotImplementedError

    def barrier(self):
        self._exchange(None)

    def bcast(self, obj, root=0):
        return self._exchange(obj if self.rank == root else None)[root]

    def allgather_obj(self, obj):
        return self._exchange(obj)

    def _gather_checked(self, local, same_shape=True, axis=None):
        local = np.asarray(local, dtype=np.float64)
        blocks = self._exchange(local)
        ref = blocks[0]
        for r, blk in enumerate(blocks):
            if blk.ndim != ref.ndim:
                raise CollectiveContractError(f"rank {r} sent a {blk.ndim}-d block, rank 0 a {ref.ndim}-d block")
            if same_shape and blk.shape != ref.shape:
                raise CollectiveContractError(f"rank {r} sent shape {blk.shape}, rank 0 sent {ref.shape}")
            if axis is not None:
                other = [s for k, s in enumerate(blk.shape) if k != axis]
                if other != [s for k, s in enumerate(ref.shape) if k != axis]:
                    raise CollectiveContractError(f"rank {r} block {blk.shape} disagrees off axis {axis}")
        return blocks

    def all_gather(self, local):
        """List of every rank's block, in rank order."""
        with self.timers.time("AG"):
            blocks = self._gather_checked(local)
            return [b.copy() for b in blocks]

    def all_gather_concat(self, local, axis=0):
        """Concatenate every rank's block along ``axis`` in rank order.

        Blocks may differ in length along ``axis`` only.
        """
        with self.timers.time("AG"):
            blocks = self._gather_checked(local, same_shape=False, axis=axis)
            return np.concatenate(blocks, axis=axis)

    def all_reduce_sum(self, local):
        """Elementwise sum over ranks, accumulated in rank-ascending order."""
        with self.timers.time("AR"):
            blocks = self._gather_checked(local)
            out = blocks[0].copy()
            for blk in blocks[1:]:
                out += blk
            return out

    def all_reduce_scalar(self, value):
        return float(self.all_reduce_sum(np.array([value], dtype=np.float64))[0])

    def reduce_scatter_sum(self, local, axis=0, counts=None):
        """Slice ``rank`` of the elementwise group sum along ``axis``.

        Without ``counts`` the axis must split evenly into ``size`` slices;
        ``counts`` gives explicit slice lengths.
        """
        with self.timers.time("RSC"):
            local = np.asarray(local, dtype=np.float64)
            length = local.shape[axis]
            if counts is None:
                if length % self.size:
                    raise DimensionError(f"axis of length {length} does not split into {self.size} slices")
                counts = [length // self.size] * self.size
            counts = [int(c) for c in counts]
            if len(counts) != self.size or sum(counts) != length:
                raise DimensionError(f"slice counts {counts} do not partition an axis of length {length}")
            blocks = self._gather_checked(local)
            start = sum(counts[: self.rank])
            sl = [slice(None)] * local.ndim
            sl[axis] = slice(start, start + counts[self.rank])
            sl = tuple(sl)
            out = blocks[0][sl].copy()
            for blk in blocks[1:]:
                out += blk[sl]
            return out


class _Exchange:
    def __init__(self, size, timeout):
        self.size = size
        self.slots = [None] * size
        self.barrier = threading.Barrier(size, timeout=timeout)

    def run(self, rank, obj):
        self.slots[rank] = obj
        try:
            self.barrier.wait()
            out = list(self.slots)
            self.barrier.wait()
        except threading.BrokenBarrierError as exc:
            raise CollectiveContractError("collective aborted: another rank failed or timed out") from exc
        return out


class _World:
    def __init__(self, size, timeout):
        self.size = size
        self.timeout = timeout
        self.lock = threading.Lock()
        self.groups = {}

    def group(self, members):
        members = tuple(members)
        with self.lock:
            if members not in self.groups:
                self.groups[members] = _Exchange(len(members), self.timeout)
            return self.groups[members]

    def abort(self):
        with self.lock:
            for ex in self.groups.values():
                ex.barrier.abort()


class ThreadComm(Communicator):
    """In-process communicator; one instance per worker thread."""

    def __init__(self, world, members, world_rank, timers=None):
        self._world = world
        self._members = tuple(members)
        self.rank = self._members.index(world_rank)
        self.size = len(self._members)
        self._world_rank = world_rank
        self._group = world.group(self._members)
        self.timers = timers if timers is not None else TimingReport()
        self._splits = {}

    def _exchange(self, obj):
        if self.size == 1:
            return [obj]
        return self._group.run(self.rank, obj)

    def split(self, color, key=0):
        info = self._exchange((color, key, self._world_rank))
        members = sorted((k, wr) for c, k, wr in info if c == color)
        return ThreadComm(self._world, [wr for _, wr in members], self._world_rank, self.timers)


def self_comm():
    """Single-rank communicator."""
    return ThreadComm(_World(1, None), [0], 0)


def run_spmd(size, fn, *args, timeout=600.0, **kwargs):
    """Run ``fn(comm, *args, **kwargs)`` on ``size`` in-process ranks.

    Returns the list of per-rank return values. If any rank raises, the
    remaining ranks are released from their collectives and the first
    failure (lowest rank) is re-raised.
    """
    size = int(size)
    if size < 1:
        raise ValueError("size must be >= 1")
    world = _World(size, timeout)
    results = [None] * size
    errors = [None] * size

    def worker(r):
        comm = ThreadComm(world, range(size), r)
        try:
            results[r] = fn(comm, *args, **kwargs)
        except BaseException as exc:
            errors[r] = exc
            world.abort()

    if size == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(r,), name=f"rank-{r}") for r in range(size)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    primary = [e for e in errors if e is not None and not isinstance(e.__cause__, threading.BrokenBarrierError)]
    failed = primary or [e for e in errors if e is not None]
    if failed:
        raise failed[0]
    return results


class MPIComm(Communicator):
    """Adapter for an ``mpi4py`` communicator (optional backend)."""

    def __init__(self, comm=None, timers=None):
        if comm is None:
            from mpi4py import MPI

            comm = MPI.COMM_WORLD
        self._comm = comm
        self.rank = comm.Get_rank()
        self.size = comm.Get_size()
        self.timers = timers if timers is not None else TimingReport()

    def _exchange(self, obj):
        return self._comm.allgather(obj)

    def split(self, color, key=0):
        return MPIComm(self._comm.Split(color, key), self.timers)


def grid_comms(comm, grid):
    """Row and column sub-communicators of a 2D ``(p_r, p_c)`` grid.

    The row communicator joins ranks with the same row coordinate (ordered
    by column); the column communicator joins ranks with the same column
    coordinate (ordered by row). Cached per grid on ``comm``.
    """
    grid = tuple(grid)
    cache = comm.__dict__.setdefault("_grid_cache", {})
    if grid not in cache:
        pg = ProcessGrid(grid)
        if pg.size != comm.size:
            raise DimensionError(f"grid {grid} has {pg.size} ranks, communicator has {comm.size}")
        i, j = pg.coords(comm.rank)
        row = comm.split(i, j)
        col = comm.split(grid[0] + j, i)
        cache[grid] = (row, col)
    return cache[grid]
