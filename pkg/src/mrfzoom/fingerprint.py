"""Fingerprints as complex numpy vectors, and the matching objectives."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CalibrationError, DegenerateSignalError, LengthMismatchError

SMOOTH_SIGMA = {3: 0.85, 5: 1.0}
FP_CSV_HEADER = "idx,re,im"


@dataclass(frozen=True)
class TissueParams:
    """T1 and T2 in seconds, off-resonance in Hz, relative proton density."""

    t1: float
    t2: float
    df: float = 0.0
    pd: float = 1.0

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise ValueError("T1 and T2 must be positive")
        if not self.pd > 0:
            raise ValueError("proton density must be positive")

    @classmethod
    def from_ms(cls, t1_ms, t2_ms, df_hz=0.0, pd=1.0):
        return cls(t1_ms * 1e-3, t2_ms * 1e-3, float(df_hz), pd)

    # rounded so that lattice values survive the ms -> s -> ms round trip
    @property
    def t1_ms(self):
        return round(self.t1 * 1e3, 9)

    @property
    def t2_ms(self):
        return round(self.t2 * 1e3, 9)


def energy(fp):
    """Sum of squared magnitudes along the last axis."""
    fp = np.asarray(fp)
    return np.sum(fp.real * fp.real + fp.imag * fp.imag, axis=-1)


def normalize(fp):
    """Scale to unit Euclidean norm (row-wise for 2-D input)."""
    fp = np.asarray(fp, dtype=np.complex128)
    norm = np.sqrt(energy(fp))
    if np.any(norm == 0):
        raise DegenerateSignalError("cannot normalize an all-zero fingerprint")
    return fp / norm[..., None] if fp.ndim > 1 else fp / norm


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise LengthMismatchError(f"fingerprint lengths differ: {a.shape} vs {b.shape}")
    return a, b


def cc(a, b, unit_norm=False):
    """Magnitude of the normalized complex inner product, in [0, 1].

    With ``unit_norm=True`` both inputs are trusted to have norm 1 and the
    denominator is skipped.
    """
    a, b = _check_pair(a, b)
    num = abs(np.sum(a * b.conj()))
    if unit_norm:
        return float(num)
    den = math.sqrt(energy(a) * energy(b))
    if den == 0:
        raise DegenerateSignalError("correlation with an all-zero fingerprint")
    return float(num / den)


def euclidean(a, b):
    a, b = _check_pair(a, b)
    return float(math.sqrt(energy(a - b)))


def add_noise(fp, sigma, seed):
    """Add white Gaussian noise of std ``sigma`` to real and imaginary parts."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    fp = np.asarray(fp, dtype=np.complex128)
    if sigma == 0:
        return fp.copy()
    z = np.random.default_rng(seed).standard_normal((2,) + fp.shape)
    return fp + sigma * (z[0] + 1j * z[1])


def calibrate_noise(fp, target_cc, seed, max_steps=60, tol=0.02):
    """Noise std giving ``cc(fp, add_noise(fp, sigma, seed)) ~= target_cc``.

    Bisects on sigma. Raises :class:`CalibrationError` when the target is
    out of reach for this noise realization (the correlation of ``fp`` with
    pure noise sets a floor near ``1/sqrt(len(fp))``) or the bisection does
    not land within ``tol``.
    """
    if not 0 < target_cc < 1:
        raise ValueError("target_cc must lie in (0, 1)")
    fp = np.asarray(fp, dtype=np.complex128)
    z = np.random.default_rng(seed).standard_normal((2,) + fp.shape)
    noise = z[0] + 1j * z[1]

    def auto(sigma):
        return cc(fp, fp + sigma * noise)

    lo, hi = 0.0, math.sqrt(energy(fp) / fp.size)
    for _ in range(max_steps):
        if auto(hi) < target_cc:
            break
        lo, hi = hi, hi * 2.0
    else:
        raise CalibrationError(f"auto-CC floor above {target_cc} for seed {seed}")
    sigma = hi
    for _ in range(max_steps):
        sigma = 0.5 * (lo + hi)
        got = auto(sigma)
        if abs(got - target_cc) < 1e-6:
            break
        if got > target_cc:
            lo = sigma
        else:
            hi = sigma
    if abs(auto(sigma) - target_cc) > tol:
        raise CalibrationError(f"bisection did not reach auto-CC {target_cc}")
    return sigma


def gaussian_kernel(k):
    if k not in SMOOTH_SIGMA:
        raise ValueError("smoothing window must be 3 or 5")
    x = np.arange(k) - k // 2
    w = np.exp(-0.5 * (x / SMOOTH_SIGMA[k]) ** 2)
    return w / w.sum()


def smooth(fp, k):
    """Moving Gaussian smoothing along the last axis.

    The kernel is truncated at the series ends and renormalized over the
    samples it still covers.
    """
    fp = np.asarray(fp, dtype=np.complex128)
    w = gaussian_kernel(k)
    n = fp.shape[-1]
    if n < k:
        raise LengthMismatchError(f"fingerprint of length {n} is shorter than the kernel")
    h = k // 2
    weight = np.convolve(np.ones(n), w, mode="same")
    padded = np.zeros(fp.shape[:-1] + (n + 2 * h,), dtype=np.complex128)
    padded[..., h:h + n] = fp
    out = np.zeros_like(fp)
    for j in range(k):
        out += w[k - 1 - j] * padded[..., j:j + n]
    return out / weight


SMOOTH_FRAMES = ("lab", "offres")


def smoothed_inner(q, sig, df, t_read, k, frame="lab"):
    """Match ``q`` against rows of ``sig`` after smoothing both.

    In the ``"offres"`` frame each pair is first demodulated by the phase
    ``2*pi*df*t`` that the row's own off-resonance accumulates by each
    readout time, so the kernel does not average across the precession
    carrier. ``"lab"`` smooths the raw series. Returns
    ``(inner, energy)`` of the smoothed rows against the smoothed query
    scaled to unit norm, ready for :func:`score_from_inner`.
    """
    if frame not in SMOOTH_FRAMES:
        raise ValueError(f"unknown smoothing frame {frame!r}")
    sig = np.atleast_2d(np.asarray(sig, dtype=np.complex128))
    q = np.asarray(q, dtype=np.complex128)
    if frame == "lab":
        se = smooth(sig, k)
        sq = np.broadcast_to(smooth(q, k), se.shape)
    else:
        d = np.exp(-2j * np.pi * np.outer(np.atleast_1d(df), t_read))
        se = smooth(sig * d, k)
        sq = smooth(q[None, :] * d, k)
    qn = np.sqrt(energy(sq))
    if np.any(qn == 0):
        raise DegenerateSignalError("smoothed query is all zero")
    inner = np.sum(sq * se.conj(), axis=-1) / qn
    return inner, energy(se)


def estimate_pd(acquired, matched_ideal):
    """Proton density as the norm ratio of acquired to ideal signal."""
    den = math.sqrt(energy(np.asarray(matched_ideal)))
    if den == 0:
        raise DegenerateSignalError("matched ideal fingerprint is all zero")
    return math.sqrt(energy(np.asarray(acquired))) / den


def to_csv(fp) -> str:
    out = io.StringIO()
    out.write(FP_CSV_HEADER + "\n")
    for k, v in enumerate(np.asarray(fp, dtype=np.complex128)):
        out.write(f"{k},{v.real:.9g},{v.imag:.9g}\n")
    return out.getvalue()


def from_csv(text):
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines or lines[0].strip() != FP_CSV_HEADER:
        raise ValueError(f"fingerprint file must start with '{FP_CSV_HEADER}'")
    vals = np.array([[float(x) for x in ln.split(",")[1:3]] for ln in lines[1:]])
    return vals[:, 0] + 1j * vals[:, 1]


def save(fp, path):
    Path(path).write_text(to_csv(fp))


def load(path):
    return from_csv(Path(path).read_text())
