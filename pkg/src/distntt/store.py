"""On-disk chunked tensor format and tensor-train archives.

Store layout (a directory)::

    meta.json        {"format_version": 1, "shape": [...], "chunk_shape": [...],
                      "dtype": "f64le", "order": "C"}
    c.<i1>.<i2>...   raw little-endian float64 chunk data, row-major

Archive layout::

    tt_meta.json     shape, ranks, method, eps, seed and run settings
    timings.json     per-stage wall times (excluded from determinism checks)
    core_<l>/        one store per core, single chunk
"""

import json
import os
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, StoreError
from .tensor import TensorTrain

FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class ChunkedTensorStore:
    """A dense float64 tensor split into equally shaped chunk files."""

    def __init__(self, path, shape, chunk_shape):
        self.path = Path(path)
        self.shape = tuple(int(n) for n in shape)
        self.chunk_shape = tuple(int(c) for c in chunk_shape)
        if len(self.shape) != len(self.chunk_shape):
            raise DimensionError(f"chunk shape {self.chunk_shape} does not match shape {self.shape}")
        for n, c in zip(self.shape, self.chunk_shape):
            if c < 1 or n % c:
                raise DimensionError(f"chunk shape {self.chunk_shape} does not divide shape {self.shape}")
        self.chunk_grid = tuple(n // c for n, c in zip(self.shape, self.chunk_shape))

    @classmethod
    def create(cls, path, shape, chunk_shape=None):
        store = cls(path, shape, chunk_shape if chunk_shape is not None else shape)
        try:
            store.path.mkdir(parents=True, exist_ok=True)
            _dump_json(store.path / "meta.json", store.meta())
        except OSError as exc:
            raise StoreError(f"cannot create store at {store.path}: {exc}") from exc
        return store

    @classmethod
    def open(cls, path):
        path = Path(path)
        try:
            with open(path / "meta.json") as fh:
                meta = json.load(fh)
        except (OSError, ValueError) as exc:
            raise StoreError(f"cannot open store at {path}: {exc}") from exc
        if meta.get("dtype") != "f64le" or meta.get("order") != "C":
            raise StoreError(f"unsupported element type/order in {path}: {meta.get('dtype')}/{meta.get('order')}")
        if meta.get("format_version") != FORMAT_VERSION:
            raise StoreError(f"unsupported format_version {meta.get('format_version')} in {path}")
        return cls(path, meta["shape"], meta["chunk_shape"])

    @classmethod
    def from_array(cls, path, array, chunk_shape=None):
        array = np.asarray(array, dtype=np.float64)
        store = cls.create(path, array.shape, chunk_shape)
        store.write(array)
        return store

    def meta(self):
        return {
            "format_version": FORMAT_VERSION,
            "shape": list(self.shape),
            "chunk_shape": list(self.chunk_shape),
            "dtype": "f64le",
            "order": "C",
        }

    def chunk_path(self, coords):
        return self.path / ("c." + ".".join(str(int(c)) for c in coords))

    def _check_coords(self, coords):
        coords = tuple(int(c) for c in coords)
        if len(coords) != len(self.chunk_grid) or any(not 0 <= c < g for c, g in zip(coords, self.chunk_grid)):
            raise DimensionError(f"chunk {coords} outside chunk grid {self.chunk_grid}")
        return coords

    def write_chunk(self, coords, data):
        coords = self._check_coords(coords)
        data = np.asarray(data, dtype=np.float64)
        if data.shape != self.chunk_shape:
            raise DimensionError(f"chunk data shape {data.shape} != chunk shape {self.chunk_shape}")
        try:
            with open(self.chunk_path(coords), "wb") as fh:
                fh.write(np.ascontiguousarray(data, dtype=_DTYPE).tobytes())
        except OSError as exc:
            raise StoreError(f"cannot write chunk {coords} of {self.path}: {exc}") from exc

    def read_chunk(self, coords):
        coords = self._check_coords(coords)
        path = self.chunk_path(coords)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise StoreError(f"cannot read chunk {coords} of {self.path}: {exc}") from exc
        expected = 8 * int(np.prod(self.chunk_shape))
        if len(raw) != expected:
            raise StoreError(f"chunk {path} has {len(raw)} bytes, expected {expected}")
        return np.frombuffer(raw, dtype=_DTYPE).astype(np.float64).reshape(self.chunk_shape)

    def write(self, array):
        array = np.asarray(array, dtype=np.float64)
        if array.shape != self.shape:
            raise DimensionError(f"array shape {array.shape} != store shape {self.shape}")
        for coords in np.ndindex(*self.chunk_grid):
            sl = tuple(slice(c * s, (c + 1) * s) for c, s in zip(coords, self.chunk_shape))
            self.write_chunk(coords, array[sl])

    def read(self):
        return self.read_region([0] * len(self.shape), self.shape)

    def read_region(self, starts, stops):
        """Dense sub-block ``[starts, stops)`` assembled from overlapping chunks."""
        starts = [int(s) for s in starts]
        stops = [int(s) for s in stops]
        if any(not 0 <= a <= b <= n for a, b, n in zip(starts, stops, self.shape)):
            raise DimensionError(f"region {starts}-{stops} outside shape {self.shape}")
        out = np.empty([b - a for a, b in zip(starts, stops)])
        if out.size == 0:
            return out
        ranges = [range(a // c, (b - 1) // c + 1) for a, b, c in zip(starts, stops, self.chunk_shape)]
        for coords in np.ndindex(*[len(r) for r in ranges]):
            chunk = tuple(r[k] for r, k in zip(ranges, coords))
            data = self.read_chunk(chunk)
            src, dst = [], []
            for a, b, c, k in zip(starts, stops, self.chunk_shape, chunk):
                lo, hi = max(a, k * c), min(b, (k + 1) * c)
                src.append(slice(lo - k * c, hi - k * c))
                dst.append(slice(lo - a, hi - a))
            out[tuple(dst)] = data[tuple(src)]
        return out

    def gather_flat(self, flat):
        """Elements at the given row-major flat indices (any array shape)."""
        flat = np.asarray(flat, dtype=np.int64)
        out = np.empty(flat.shape)
        if flat.size == 0:
            return out
        flat1 = flat.ravel()
        multi = np.unravel_index(flat1, self.shape)
        chunk_ids = np.ravel_multi_index(
            tuple(m // c for m, c in zip(multi, self.chunk_shape)), self.chunk_grid
        )
        within = np.ravel_multi_index(tuple(m % c for m, c in zip(multi, self.chunk_shape)), self.chunk_shape)
        order = np.argsort(chunk_ids, kind="stable")
        ids_sorted = chunk_ids[order]
        bounds = np.flatnonzero(np.diff(ids_sorted)) + 1
        res = np.empty(flat1.size)
        for group in np.split(order, bounds):
            coords = np.unravel_index(int(chunk_ids[group[0]]), self.chunk_grid)
            res[group] = self.read_chunk(coords).ravel()[within[group]]
        out.reshape(-1)[:] = res
        return out


def save_train(path, tt, meta=None, timings=None):
    """Write a :class:`TensorTrain` archive; returns the archive path."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        for l, core in enumerate(tt.cores):
            ChunkedTensorStore.from_array(path / f"core_{l}", core)
        info = dict(meta or {})
        info.update({"format_version": FORMAT_VERSION, "shape": list(tt.shape), "ranks": list(tt.ranks)})
        _dump_json(path / "tt_meta.json", info)
        if timings is not None:
            _dump_json(path / "timings.json", timings)
    except OSError as exc:
        raise StoreError(f"cannot write archive {path}: {exc}") from exc
    return path


def load_train(path):
    """Read an archive written by :func:`save_train`; returns ``(train, meta)``."""
    path = Path(path)
    try:
        with open(path / "tt_meta.json") as fh:
            meta = json.load(fh)
    except (OSError, ValueError) as exc:
        raise StoreError(f"cannot open archive {path}: {exc}") from exc
    cores = [ChunkedTensorStore.open(path / f"core_{l}").read() for l in range(len(meta["shape"]))]
    tt = TensorTrain(cores)
    if list(tt.ranks) != list(meta["ranks"]):
        raise StoreError(f"archive {path}: core shapes give ranks {tt.ranks}, metadata says {meta['ranks']}")
    return tt, meta


def workdir():
    """Scratch directory for reshape stores (``NTT_WORKDIR`` or the system temp dir)."""
    return os.environ.get("NTT_WORKDIR") or None
