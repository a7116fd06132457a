"""Pseudo-random IR-bSSFP acquisition schedules.

A schedule is stored in its file units (degrees, milliseconds) with every
value rounded to 9 significant digits, the precision of the CSV format.
Writing and re-reading a schedule therefore reproduces it exactly, which is
what makes the file a safe interchange format between implementations.
"""
from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import MRFError

FLIP_MAX_DEG = 79.0
PHASES_DEG = (0.0, 90.0, 180.0, 90.0)
TR_MIN_MS = 14.0
TR_SPAN_MS = 6.0
PERLIN_STRIDE = 1.0 / 16.0

CSV_HEADER = "idx,flip_deg,phase_deg,tr_ms,te_ms"

_FLIP_STREAM = 0
_TR_STREAM = 1


class ScheduleError(MRFError, ValueError):
    pass


def _round9(x):
    return np.array([float(f"{v:.9g}") for v in np.asarray(x, dtype=np.float64)])


def _fade(t):
    return t * t * t * (t * (t * 6.0 - 15.0) + 10.0)


def perlin_1d(x, seed):
    """1-D gradient noise at positions ``x`` (lattice gradients in [-1, 1])."""
    x = np.asarray(x, dtype=np.float64)
    cell = np.floor(x).astype(np.int64)
    n_cells = int(cell.max()) + 2
    grad = 2.0 * rng.uniform(seed, n_cells, _FLIP_STREAM) - 1.0
    t = x - cell
    g0 = grad[cell] * t
    g1 = grad[cell + 1] * (t - 1.0)
    return g0 + _fade(t) * (g1 - g0)


def perlin_flips(n, seed):
    """Flip angles (radians) from Perlin noise, rescaled onto [0, 79] degrees."""
    if n <= 0:
        raise ScheduleError("schedule length must be positive")
    noise = perlin_1d(np.arange(n) * PERLIN_STRIDE, seed)
    span = noise.max() - noise.min()
    if span == 0.0:
        deg = np.zeros(n)
    else:
        deg = (noise - noise.min()) / span * FLIP_MAX_DEG
    return np.deg2rad(deg)


def phase_pattern(n):
    """RF phases (radians) cycling 0, 90, 180, 90 degrees."""
    if n <= 0:
        raise ScheduleError("schedule length must be positive")
    deg = np.array([PHASES_DEG[k % 4] for k in range(n)])
    return np.deg2rad(deg)


def tr_pattern(n, seed):
    """Repetition times (seconds): Gaussian draws min/max-remapped to 14..20 ms."""
    if n <= 0:
        raise ScheduleError("schedule length must be positive")
    z = rng.normal(seed, n, _TR_STREAM)
    span = z.max() - z.min()
    if span == 0.0:
        ms = np.full(n, TR_MIN_MS)
    else:
        ms = TR_MIN_MS + (z - z.min()) / span * TR_SPAN_MS
    return ms * 1e-3


@dataclass(eq=False)
class Schedule:
    """Per-timepoint acquisition parameters in file units."""

    flip_deg: np.ndarray
    phase_deg: np.ndarray
    tr_ms: np.ndarray
    te_ms: np.ndarray
    seed: int = 0

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.float64) for a in
                  (self.flip_deg, self.phase_deg, self.tr_ms, self.te_ms)]
        n = len(arrays[0])
        if n == 0 or any(len(a) != n for a in arrays):
            raise ScheduleError("schedule columns must be non-empty and equally long")
        if not all(np.all(np.isfinite(a)) for a in arrays):
            raise ScheduleError("schedule contains non-finite values")
        if np.any(arrays[3] <= 0) or np.any(arrays[3] >= arrays[2]):
            raise ScheduleError("every entry needs 0 < te < tr")
        self.flip_deg, self.phase_deg, self.tr_ms, self.te_ms = arrays
        self.seed = int(self.seed)

    def __len__(self):
        return len(self.flip_deg)

    def __eq__(self, other):
        if not isinstance(other, Schedule):
            return NotImplemented
        return (len(self) == len(other)
                and np.array_equal(self.flip_deg, other.flip_deg)
                and np.array_equal(self.phase_deg, other.phase_deg)
                and np.array_equal(self.tr_ms, other.tr_ms)
                and np.array_equal(self.te_ms, other.te_ms))

    @property
    def flip(self):
        return np.deg2rad(self.flip_deg)

    @property
    def phase(self):
        return np.deg2rad(self.phase_deg)

    @property
    def tr(self):
        return self.tr_ms * 1e-3

    @property
    def te(self):
        return self.te_ms * 1e-3

    def check_invariants(self):
        """Raise :class:`ScheduleError` unless the generator ranges hold."""
        if np.any(self.flip_deg < 0) or np.any(self.flip_deg > FLIP_MAX_DEG):
            raise ScheduleError("flip angle outside [0, 79] degrees")
        if not np.all(np.isin(self.phase_deg, (0.0, 90.0, 180.0))):
            raise ScheduleError("RF phase outside {0, 90, 180} degrees")
        if np.any(self.tr_ms < TR_MIN_MS) or np.any(self.tr_ms > TR_MIN_MS + TR_SPAN_MS):
            raise ScheduleError("TR outside [14, 20] ms")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(CSV_HEADER + "\n")
        for k in range(len(self)):
            out.write(f"{k},{self.flip_deg[k]:.9g},{self.phase_deg[k]:.9g},"
                      f"{self.tr_ms[k]:.9g},{self.te_ms[k]:.9g}\n")
        return out.getvalue()

    def digest(self) -> bytes:
        """SHA-256 of the canonical CSV text."""
        return hashlib.sha256(self.to_csv().encode("ascii")).digest()

    def save(self, path):
        Path(path).write_text(self.to_csv(), encoding="ascii")

    @classmethod
    def from_csv(cls, text: str, seed: int = 0) -> Schedule:
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if not lines or lines[0] != CSV_HEADER:
            raise ScheduleError(f"schedule file must start with '{CSV_HEADER}'")
        rows = []
        for i, ln in enumerate(lines[1:]):
            parts = ln.split(",")
            if len(parts) != 5 or int(parts[0]) != i:
                raise ScheduleError(f"malformed schedule row {i}: {ln!r}")
            rows.append([float(p) for p in parts[1:]])
        cols = np.array(rows, dtype=np.float64).T
        return cls(cols[0], cols[1], cols[2], cols[3], seed=seed)

    @classmethod
    def load(cls, path, seed: int = 0) -> Schedule:
        return cls.from_csv(Path(path).read_text(encoding="ascii"), seed=seed)


def build_schedule(n, seed) -> Schedule:
    """Flip, phase and TR series for ``n`` timepoints, with TE = TR/2."""
    flip = _round9(np.rad2deg(perlin_flips(n, seed)))
    phase = _round9(np.rad2deg(phase_pattern(n)))
    tr = _round9(tr_pattern(n, seed) * 1e3)
    te = _round9(tr / 2.0)
    # rounding can nudge the extremes a hair outside the nominal ranges
    flip = np.clip(flip, 0.0, FLIP_MAX_DEG)
    tr = np.clip(tr, TR_MIN_MS, TR_MIN_MS + TR_SPAN_MS)
    return Schedule(flip, phase, tr, te, seed=seed)
