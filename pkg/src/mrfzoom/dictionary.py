"""Parameter lattice, dictionary generation and persistence, brute-force search.

Lattice order is T1-outer, T2-middle, df-inner::

    flat = (i_t1 * n_t2 + i_t2) * n_df + i_df

Dictionary files are little-endian::

    b"MRFD" | u32 version | 32-byte schedule digest
    | 3 x (f64 min, f64 step, u64 count) | u64 entry length
    | entries as interleaved float32 (re, im), one row per lattice point

CC-map files use the same header with magic ``b"MRFC"`` followed by one
float32 score per lattice point.
"""
from __future__ import annotations

import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .bloch import Simulator
from .errors import DictionaryFormatError, DigestMismatchError, LengthMismatchError
from .fingerprint import TissueParams, normalize, smoothed_inner

DICT_MAGIC = b"MRFD"
CCMAP_MAGIC = b"MRFC"
VERSION = 1
_HEAD = struct.Struct("<4sI32s")
_AXIS = struct.Struct("<ddQ")
_LEN = struct.Struct("<Q")
HEADER_SIZE = _HEAD.size + 3 * _AXIS.size + _LEN.size

METRICS = {"cc": kernels.METRIC_CC, "euclidean": kernels.METRIC_EUCLIDEAN}
AXIS_NAMES = ("t1_ms", "t2_ms", "df_hz")


@dataclass(frozen=True)
class Axis:
    """Endpoint-exclusive lattice ``min + k*step`` for ``k`` in ``range(count)``."""

    min: float
    step: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("empty lattice axis")
        if not self.step > 0:
            raise ValueError("lattice step must be positive")

    @classmethod
    def from_range(cls, lo, hi, step):
        if not lo < hi:
            raise ValueError(f"empty range [{lo}, {hi})")
        if not step > 0:
            raise ValueError("lattice step must be positive")
        count = int(math.floor((hi - lo) / step + 1e-9))
        return cls(float(lo), float(step), count)

    @property
    def max(self):
        """Largest lattice value (inclusive)."""
        return self.value(self.count - 1)

    def value(self, k):
        return self.min + k * self.step

    def values(self):
        return self.min + np.arange(self.count) * self.step

    def index(self, v):
        """Lattice index of ``v``; raises if ``v`` is off-lattice or out of range."""
        k = (v - self.min) / self.step
        ki = int(round(k))
        if abs(k - ki) > 1e-6 or not 0 <= ki < self.count:
            raise ValueError(f"{v} is not on the lattice {self}")
        return ki

    def nearest(self, v):
        """Index of the lattice point closest to ``v``, clamped into range."""
        return min(max(int(round((v - self.min) / self.step)), 0), self.count - 1)

    def window(self, center, half_width):
        """Sub-axis on the same lattice covering ``center +- half_width``."""
        lo = max(0, int(math.ceil((center - half_width - self.min) / self.step - 1e-9)))
        hi = min(self.count - 1, int(math.floor((center + half_width - self.min) / self.step + 1e-9)))
        if hi < lo:
            raise ValueError("window does not intersect the lattice")
        return Axis(self.value(lo), self.step, hi - lo + 1)


@dataclass(frozen=True)
class ParameterGrid:
    """T1 (ms) x T2 (ms) x df (Hz) lattice."""

    t1: Axis
    t2: Axis
    df: Axis

    @property
    def axes(self):
        return (self.t1, self.t2, self.df)

    @property
    def shape(self):
        return (self.t1.count, self.t2.count, self.df.count)

    @property
    def total(self):
        return self.t1.count * self.t2.count * self.df.count

    def flat_index(self, i1, i2, i3):
        return (i1 * self.t2.count + i2) * self.df.count + i3

    def unravel(self, flat):
        return tuple(int(v) for v in np.unravel_index(flat, self.shape))

    def params(self, i1, i2, i3):
        return TissueParams.from_ms(self.t1.value(i1), self.t2.value(i2), self.df.value(i3))

    def index_of(self, params: TissueParams):
        return (self.t1.index(params.t1_ms), self.t2.index(params.t2_ms),
                self.df.index(params.df))

    def slab(self, i1):
        """(T1, T2, df) arrays in seconds/seconds/Hz for one T1 slab, in lattice order."""
        t2, df = np.meshgrid(self.t2.values() * 1e-3, self.df.values(), indexing="ij")
        t1 = np.full(t2.size, self.t1.value(i1) * 1e-3)
        return t1, t2.ravel(), df.ravel()

    def window(self, center: TissueParams, t1_half, t2_half, df_half):
        return ParameterGrid(self.t1.window(center.t1_ms, t1_half),
                             self.t2.window(center.t2_ms, t2_half),
                             self.df.window(center.df, df_half))

    def contains(self, params: TissueParams):
        try:
            self.index_of(params)
        except ValueError:
            return False
        return True


def grid_from_ranges(ranges, steps) -> ParameterGrid:
    """Build a grid from three ``(min, max)`` ranges and steps (ms, ms, Hz)."""
    if len(ranges) != 3 or len(steps) != 3:
        raise ValueError("need ranges and steps for T1, T2 and df")
    return ParameterGrid(*(Axis.from_range(lo, hi, s) for (lo, hi), s in zip(ranges, steps)))


@dataclass
class Match:
    params: TissueParams
    score: float
    evaluations: int
    index: tuple


class Dictionary:
    """Unit-norm fingerprints for every lattice point, stored as float32 pairs."""

    def __init__(self, grid: ParameterGrid, digest: bytes, entries: np.ndarray, length: int):
        if entries.shape != (grid.total, 2 * length):
            raise DictionaryFormatError(
                f"entry block {entries.shape} does not match grid {grid.total} x {length}")
        self.grid = grid
        self.digest = digest
        self.entries = entries
        self.length = length

    def __len__(self):
        return self.grid.total

    def entry(self, flat):
        row = np.asarray(self.entries[flat], dtype=np.float64)
        return row[0::2] + 1j * row[1::2]


def _slab_entries(sim, grid, i1):
    sig = sim.batch(*grid.slab(i1))
    return normalize(sig).astype(np.complex64).view(np.float32)


def _iter_slabs(grid, fn, workers):
    idx = range(grid.t1.count)
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            yield from pool.map(fn, idx)
    else:
        for i in idx:
            yield fn(i)


def _header(magic, grid, digest, length):
    parts = [_HEAD.pack(magic, VERSION, digest)]
    parts += [_AXIS.pack(a.min, a.step, a.count) for a in grid.axes]
    parts.append(_LEN.pack(length))
    return b"".join(parts)


def _parse_header(buf, magic):
    if len(buf) < HEADER_SIZE:
        raise DictionaryFormatError("file shorter than its header")
    got, version, digest = _HEAD.unpack_from(buf, 0)
    if got != magic:
        raise DictionaryFormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise DictionaryFormatError(f"unsupported version {version}")
    off = _HEAD.size
    axes = []
    for _ in range(3):
        lo, step, count = _AXIS.unpack_from(buf, off)
        off += _AXIS.size
        try:
            axes.append(Axis(lo, step, int(count)))
        except ValueError as exc:
            raise DictionaryFormatError(f"corrupt axis in header: {exc}") from None
    (length,) = _LEN.unpack_from(buf, off)
    return ParameterGrid(*axes), digest, int(length)


def generate(grid: ParameterGrid, sched, workers=1, path=None, progress=None) -> Dictionary:
    """Simulate, normalize and store every lattice point.

    Work is split into T1 slabs. With ``path`` the slabs are streamed to a
    dictionary file (written in slab order whatever the worker count) and
    the returned dictionary is memory-mapped from it.
    """
    sim = Simulator(sched)
    n = len(sched)
    digest = sched.digest()
    per_slab = grid.t2.count * grid.df.count

    def work(i1):
        return _slab_entries(sim, grid, i1)

    if path is None:
        entries = np.empty((grid.total, 2 * n), dtype=np.float32)
        for i1, block in enumerate(_iter_slabs(grid, work, workers)):
            entries[i1 * per_slab:(i1 + 1) * per_slab] = block
            if progress:
                progress(i1 + 1, grid.t1.count)
        return Dictionary(grid, digest, entries, n)

    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    with open(tmp, "wb") as fh:
        fh.write(_header(DICT_MAGIC, grid, digest, n))
        for i1, block in enumerate(_iter_slabs(grid, work, workers)):
            fh.write(np.ascontiguousarray(block, dtype="<f4").tobytes())
            if progress:
                progress(i1 + 1, grid.t1.count)
    os.replace(tmp, path)
    return load(path)


def save(d: Dictionary, path):
    with open(path, "wb") as fh:
        fh.write(_header(DICT_MAGIC, d.grid, d.digest, d.length))
        step = 65536
        for lo in range(0, len(d), step):
            fh.write(np.ascontiguousarray(d.entries[lo:lo + step], dtype="<f4").tobytes())


def load(path, sched=None, mmap=True) -> Dictionary:
    """Open a dictionary file, checking magic, version, size and (optionally) digest."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    grid, digest, length = _parse_header(head, DICT_MAGIC)
    expected = HEADER_SIZE + grid.total * length * 8
    size = path.stat().st_size
    if size != expected:
        raise DictionaryFormatError(
            f"payload length mismatch: file has {size} bytes, header implies {expected}")
    if sched is not None and sched.digest() != digest:
        raise DigestMismatchError("dictionary was generated from a different schedule")
    shape = (grid.total, 2 * length)
    if mmap:
        entries = np.memmap(path, dtype="<f4", mode="r", offset=HEADER_SIZE, shape=shape)
    else:
        entries = np.fromfile(path, dtype="<f4", offset=HEADER_SIZE).reshape(shape)
    return Dictionary(grid, digest, entries, length)


def _query(fp, n, metric):
    q = np.ascontiguousarray(fp, dtype=np.complex128)
    if q.shape != (n,):
        raise LengthMismatchError(f"fingerprint length {q.shape} vs dictionary entries of {n}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}")
    return normalize(q)


def brute_force_search(fp, d: Dictionary, metric="cc") -> Match:
    """Exhaustive scan of a stored dictionary; ties go to the lowest flat index."""
    q = _query(fp, d.length, metric)
    scores = kernels.scan(d.entries, q, METRICS[metric])
    best = int(np.argmax(scores))
    idx = d.grid.unravel(best)
    return Match(d.grid.params(*idx), float(scores[best]), d.grid.total, idx)


def score_from_inner(inner, en, metric):
    """CC or negated Euclidean distance for a unit-norm query."""
    norm = np.sqrt(en)
    if metric == "cc":
        return np.abs(inner) / norm
    d2 = np.maximum(2.0 - 2.0 * inner.real / norm, 0.0)
    return -np.sqrt(d2)


def _slab_scores(sim, grid, q, i1, metric, smooth_k, frame):
    t1, t2, df = grid.slab(i1)
    if smooth_k:
        out = np.empty(t1.size)
        for lo in range(0, t1.size, 2048):
            sl = slice(lo, lo + 2048)
            inner, en = smoothed_inner(q, sim.batch(t1[sl], t2[sl], df[sl]), df[sl],
                                       sim.t_read, smooth_k, frame)
            out[sl] = score_from_inner(inner, en, metric)
        return out
    inner, en = sim.inner(t1, t2, df, q)
    return score_from_inner(inner, en, metric)


def cc_map(fp, grid: ParameterGrid, sched, path=None, metric="cc", smooth_k=None, workers=1,
           smooth_frame="lab"):
    """Score of ``fp`` against every lattice point, without storing entries.

    Returns a grid-shaped float64 array; with ``path`` the scores are also
    streamed slab by slab into a CC-map file. ``smooth_k`` smooths both the
    query and each simulated entry (see :func:`smoothed_inner`).
    """
    sim = Simulator(sched)
    q = _query(fp, len(sched), metric)
    out = np.empty(grid.total)
    per_slab = grid.t2.count * grid.df.count
    fh = None
    if path is not None:
        fh = open(path, "wb")
        fh.write(_header(CCMAP_MAGIC, grid, sched.digest(), len(sched)))
    try:
        slabs = _iter_slabs(grid, lambda i: _slab_scores(sim, grid, q, i, metric, smooth_k, smooth_frame), workers)
        for i1, s in enumerate(slabs):
            out[i1 * per_slab:(i1 + 1) * per_slab] = s
            if fh is not None:
                fh.write(s.astype("<f4").tobytes())
    finally:
        if fh is not None:
            fh.close()
    return out.reshape(grid.shape)


def load_cc_map(path):
    """Read a CC-map file; returns ``(grid, digest, scores)``."""
    path = Path(path)
    buf = path.read_bytes()
    grid, digest, _ = _parse_header(buf, CCMAP_MAGIC)
    expected = HEADER_SIZE + 4 * grid.total
    if len(buf) != expected:
        raise DictionaryFormatError(
            f"payload length mismatch: file has {len(buf)} bytes, header implies {expected}")
    scores = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    return grid, digest, scores.reshape(grid.shape)


def brute_force_scan(fp, grid: ParameterGrid, sched, metric="cc", smooth_k=None, workers=1,
                     smooth_frame="lab") -> Match:
    """Brute force over ``grid`` with entries simulated on the fly (no storage)."""
    scores = cc_map(fp, grid, sched, metric=metric, smooth_k=smooth_k, workers=workers,
                    smooth_frame=smooth_frame).ravel()
    best = int(np.argmax(scores))
    idx = grid.unravel(best)
    return Match(grid.params(*idx), float(scores[best]), grid.total, idx)
