"""Hot loops: batched Bloch simulation and the brute-force dictionary scan.

Each kernel exists twice, a numba loop (``*_nb``) and a vectorized numpy
version (``*_np``). The public names at the bottom dispatch on
:data:`mrfzoom._jit.USE_NUMBA`. Both versions are importable regardless of
the switch so they can be benchmarked and checked against each other.

Shared conventions:

* ``rf`` is an ``(n, 3, 3)`` stack of per-timepoint RF rotations, ``te`` the
  excitation-to-readout interval and ``tl`` the readout-to-next-pulse
  interval, both in seconds.
* ``m0`` is the magnetization right before the first pulse (after the
  inversion).
* During each interval the vector relaxes toward (0, 0, 1) and precesses
  counterclockwise about z by ``2*pi*df*dt``.
"""
import math

import numpy as np

from ._jit import USE_NUMBA, njit

TWO_PI = 2.0 * math.pi

METRIC_CC = 0
METRIC_EUCLIDEAN = 1


@njit(cache=True, nogil=True)
def simulate_nb(t1, t2, df, rf, te, tl, m0):
    nb = t1.shape[0]
    n = te.shape[0]
    out = np.empty((nb, n), dtype=np.complex128)
    for b in range(nb):
        w = TWO_PI * df[b]
        mx = m0[0]
        my = m0[1]
        mz = m0[2]
        for k in range(n):
            x = rf[k, 0, 0] * mx + rf[k, 0, 1] * my + rf[k, 0, 2] * mz
            y = rf[k, 1, 0] * mx + rf[k, 1, 1] * my + rf[k, 1, 2] * mz
            z = rf[k, 2, 0] * mx + rf[k, 2, 1] * my + rf[k, 2, 2] * mz

            dt = te[k]
            e2 = math.exp(-dt / t2[b])
            e1 = math.exp(-dt / t1[b])
            c = math.cos(w * dt)
            s = math.sin(w * dt)
            x *= e2
            y *= e2
            z = 1.0 + (z - 1.0) * e1
            mx = c * x - s * y
            my = s * x + c * y
            mz = z
            out[b, k] = complex(mx, my)

            if tl[k] != te[k]:
                dt = tl[k]
                e2 = math.exp(-dt / t2[b])
                e1 = math.exp(-dt / t1[b])
                c = math.cos(w * dt)
                s = math.sin(w * dt)
            x = mx * e2
            y = my * e2
            mz = 1.0 + (mz - 1.0) * e1
            mx = c * x - s * y
            my = s * x + c * y
    return out


def simulate_np(t1, t2, df, rf, te, tl, m0):
    t1 = np.asarray(t1, dtype=np.float64)
    t2 = np.asarray(t2, dtype=np.float64)
    w = TWO_PI * np.asarray(df, dtype=np.float64)
    nb = t1.shape[0]
    n = te.shape[0]
    out = np.empty((nb, n), dtype=np.complex128)
    mx = np.full(nb, m0[0])
    my = np.full(nb, m0[1])
    mz = np.full(nb, m0[2])
    for k in range(n):
        r = rf[k]
        x = r[0, 0] * mx + r[0, 1] * my + r[0, 2] * mz
        y = r[1, 0] * mx + r[1, 1] * my + r[1, 2] * mz
        z = r[2, 0] * mx + r[2, 1] * my + r[2, 2] * mz

        dt = te[k]
        e2 = np.exp(-dt / t2)
        e1 = np.exp(-dt / t1)
        c = np.cos(w * dt)
        s = np.sin(w * dt)
        x = x * e2
        y = y * e2
        mz = 1.0 + (z - 1.0) * e1
        mx = c * x - s * y
        my = s * x + c * y
        out[:, k].real = mx
        out[:, k].imag = my

        if tl[k] != te[k]:
            dt = tl[k]
            e2 = np.exp(-dt / t2)
            e1 = np.exp(-dt / t1)
            c = np.cos(w * dt)
            s = np.sin(w * dt)
        x = mx * e2
        y = my * e2
        mz = 1.0 + (mz - 1.0) * e1
        mx = c * x - s * y
        my = s * x + c * y
    return out


@njit(cache=True, nogil=True)
def inner_nb(t1, t2, df, rf, te, tl, m0, q):
    """Simulate and reduce against ``q``: returns (sum q*conj(e), sum |e|^2)."""
    sig = simulate_nb(t1, t2, df, rf, te, tl, m0)
    nb, n = sig.shape
    inner = np.empty(nb, dtype=np.complex128)
    energy = np.empty(nb, dtype=np.float64)
    for b in range(nb):
        acc = 0j
        en = 0.0
        for k in range(n):
            e = sig[b, k]
            acc += q[k] * e.conjugate()
            en += e.real * e.real + e.imag * e.imag
        inner[b] = acc
        energy[b] = en
    return inner, energy


def inner_np(t1, t2, df, rf, te, tl, m0, q):
    sig = simulate_np(t1, t2, df, rf, te, tl, m0)
    return sig.conj() @ q, np.einsum("ij,ij->i", sig.real, sig.real) + \
        np.einsum("ij,ij->i", sig.imag, sig.imag)


@njit(cache=True, nogil=True)
def scan_nb(entries, q, metric):
    """Score every stored row against ``q``.

    ``entries`` holds interleaved float32 (re, im) rows; accumulation is in
    float64. For the Euclidean metric ``q`` must already be unit-norm and
    the score is the negated distance.
    """
    nrow = entries.shape[0]
    n = q.shape[0]
    qr = q.real.copy()
    qi = q.imag.copy()
    qnorm = math.sqrt(np.sum(qr * qr + qi * qi))
    out = np.empty(nrow, dtype=np.float64)
    for i in range(nrow):
        if metric == METRIC_CC:
            ar = 0.0
            ai = 0.0
            en = 0.0
            for k in range(n):
                er = np.float64(entries[i, 2 * k])
                ei = np.float64(entries[i, 2 * k + 1])
                ar += qr[k] * er + qi[k] * ei
                ai += qi[k] * er - qr[k] * ei
                en += er * er + ei * ei
            den = math.sqrt(en) * qnorm
            out[i] = math.sqrt(ar * ar + ai * ai) / den if den > 0.0 else 0.0
        else:
            d2 = 0.0
            for k in range(n):
                dr = qr[k] - np.float64(entries[i, 2 * k])
                di = qi[k] - np.float64(entries[i, 2 * k + 1])
                d2 += dr * dr + di * di
            out[i] = -math.sqrt(d2)
    return out


def scan_np(entries, q, metric, chunk=4096):
    nrow = entries.shape[0]
    out = np.empty(nrow, dtype=np.float64)
    qnorm = math.sqrt(float(np.sum(q.real**2 + q.imag**2)))
    for lo in range(0, nrow, chunk):
        e = np.asarray(entries[lo:lo + chunk], dtype=np.float64)
        er = e[:, 0::2]
        ei = e[:, 1::2]
        if metric == METRIC_CC:
            ar = er @ q.real + ei @ q.imag
            ai = er @ q.imag - ei @ q.real
            den = np.sqrt(np.einsum("ij,ij->i", er, er) + np.einsum("ij,ij->i", ei, ei)) * qnorm
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.where(den > 0, np.hypot(ar, ai) / den, 0.0)
            out[lo:lo + chunk] = s
        else:
            dr = q.real - er
            di = q.imag - ei
            out[lo:lo + chunk] = -np.sqrt(np.einsum("ij,ij->i", dr, dr) + np.einsum("ij,ij->i", di, di))
    return out


if USE_NUMBA:
    simulate, inner, scan = simulate_nb, inner_nb, scan_nb
else:
    simulate, inner, scan = simulate_np, inner_np, scan_np
