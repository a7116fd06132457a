"""Rotation-matrix Bloch simulation of an IR-bSSFP train.

Each repetition applies the RF rotation, then free evolution over TE
(relaxation toward M0 = 1 plus off-resonance precession), records
``mx + i*my`` and evolves over the remaining TR - TE. The magnetization
starts at equilibrium and is inverted by an ideal 180-degree pulse about x
right before the first excitation.

The gyromagnetic ratio never appears explicitly: off-resonance is carried
in Hz and the precession angle over ``dt`` is ``2*pi*df*dt``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegeneratePulseError
from .fingerprint import TissueParams

GAMMA_HZ_PER_T = 42.58e6


def rot(axis: str, theta: float) -> np.ndarray:
    """Counterclockwise rotation by ``theta`` about ``axis`` ('x', 'y' or 'z')."""
    c = math.cos(theta)
    s = math.sin(theta)
    if axis == "x":
        return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    if axis == "y":
        return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    if axis == "z":
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown rotation axis {axis!r}")


def relax_step(m, dt, t1, t2):
    """Free relaxation of ``m`` over ``dt`` seconds (no precession)."""
    if t1 <= 0 or t2 <= 0:
        raise ValueError("T1 and T2 must be positive")
    if dt < 0:
        raise ValueError("dt must be non-negative")
    e2 = math.exp(-dt / t2)
    e1 = math.exp(-dt / t1)
    m = np.asarray(m, dtype=np.float64)
    return np.array([m[0] * e2, m[1] * e2, 1.0 + (m[2] - 1.0) * e1])


@dataclass(frozen=True)
class RfPulse:
    """Hard pulse: flip ``alpha`` about the transverse axis at phase ``phi``.

    ``tau`` (seconds) and ``delta_omega`` (rad/s) only matter for the full
    effective-field rotation.
    """

    alpha: float
    phi: float = 0.0
    tau: float | None = None
    delta_omega: float = 0.0


def rf_matrix(p: RfPulse, simplified: bool = True) -> np.ndarray:
    if simplified:
        return rot("z", p.phi) @ rot("x", -p.alpha) @ rot("z", -p.phi)
    if p.alpha == 0:
        raise DegeneratePulseError("effective-field tilt is undefined for a zero flip angle")
    if p.tau is None or p.tau <= 0:
        raise ValueError("full RF rotation needs a positive pulse duration tau")
    beta = math.atan(p.tau * p.delta_omega / p.alpha)
    alpha_eff = -p.tau * math.sqrt(p.delta_omega**2 + (p.alpha / p.tau) ** 2)
    return (rot("z", p.phi) @ rot("y", beta) @ rot("x", alpha_eff)
            @ rot("y", -beta) @ rot("z", -p.phi))


def _free(m, dt, params):
    m = relax_step(m, dt, params.t1, params.t2)
    return rot("z", 2.0 * math.pi * params.df * dt) @ m


def evolve_tr(m, pulse: RfPulse, tr, te, params: TissueParams, simplified=True):
    """One repetition; returns ``(sample, m_out)``."""
    if not 0 < te < tr:
        raise ValueError("need 0 < te < tr")
    m = rf_matrix(pulse, simplified) @ np.asarray(m, dtype=np.float64)
    m = _free(m, te, params)
    sample = complex(m[0], m[1])
    m = _free(m, tr - te, params)
    return sample, m


INVERSION = rf_matrix(RfPulse(math.pi, 0.0))
M_START = INVERSION @ np.array([0.0, 0.0, 1.0])


def _rot_stack(axis, theta):
    """Stacked counterclockwise rotations, shape (n, 3, 3)."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros(theta.shape + (3, 3))
    i, j = {"x": (1, 2), "y": (2, 0), "z": (0, 1)}[axis]
    k = 3 - i - j
    out[..., k, k] = 1.0
    out[..., i, i] = c
    out[..., j, j] = c
    out[..., i, j] = -s
    out[..., j, i] = s
    return out


def rf_stack(sched, simplified=True, df=0.0, tau=None) -> np.ndarray:
    """Per-timepoint RF rotations of ``sched`` as an (n, 3, 3) array."""
    flips = np.asarray(sched.flip, dtype=np.float64)
    phases = np.asarray(sched.phase, dtype=np.float64)
    if not simplified:
        dw = 2.0 * math.pi * df
        return np.array([rf_matrix(RfPulse(a, p, tau, dw), False)
                         for a, p in zip(flips, phases)])
    return _rot_stack("z", phases) @ _rot_stack("x", -flips) @ _rot_stack("z", -phases)


def intervals(sched):
    """Pre- and post-readout free-evolution intervals in seconds.

    Taken from the millisecond columns so that TE = TR/2 yields two
    bit-identical intervals, which the kernels exploit.
    """
    te = np.ascontiguousarray(sched.te_ms * 1e-3)
    tl = np.ascontiguousarray((sched.tr_ms - sched.te_ms) * 1e-3)
    return te, tl


def readout_times(sched):
    """Time of each readout (seconds) measured from the first excitation."""
    tr = sched.tr_ms * 1e-3
    return np.cumsum(tr) - tr + sched.te_ms * 1e-3


class Simulator:
    """Schedule-bound batch simulator.

    Precomputes the RF stack once; every call then goes straight to the
    compiled kernel. Only the simplified RF form is supported here because
    the full form makes the rotation depend on ``df``.
    """

    def __init__(self, sched):
        self.sched = sched
        self.rf = np.ascontiguousarray(rf_stack(sched))
        self.te, self.tl = intervals(sched)
        self.t_read = readout_times(sched)
        self.m0 = M_START.copy()

    def __len__(self):
        return len(self.te)

    def batch(self, t1, t2, df):
        """Fingerprints for parameter arrays (T1, T2 in seconds, df in Hz)."""
        t1, t2, df = (np.ascontiguousarray(np.atleast_1d(a), dtype=np.float64)
                      for a in (t1, t2, df))
        return kernels.simulate(t1, t2, df, self.rf, self.te, self.tl, self.m0)

    def inner(self, t1, t2, df, q):
        """``(sum q*conj(entry), sum |entry|^2)`` per parameter triple."""
        t1, t2, df = (np.ascontiguousarray(np.atleast_1d(a), dtype=np.float64)
                      for a in (t1, t2, df))
        return kernels.inner(t1, t2, df, self.rf, self.te, self.tl, self.m0, q)


def simulate_fingerprint(params: TissueParams, sched, simplified=True, tau=None):
    """Ideal fingerprint for ``params``; scaled by the proton density."""
    if simplified:
        sim = Simulator(sched)
        sig = sim.batch(params.t1, params.t2, params.df)[0]
    else:
        rf = np.ascontiguousarray(rf_stack(sched, False, params.df, tau))
        one = np.ones(1)
        te, tl = intervals(sched)
        sig = kernels.simulate(one * params.t1, one * params.t2, one * params.df, rf,
                               te, tl, M_START.copy())[0]
    if params.pd != 1.0:
        sig = sig * params.pd
    return sig
