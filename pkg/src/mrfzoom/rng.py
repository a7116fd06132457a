"""Counter-based SplitMix64 generator.

Value ``k`` of stream ``s`` under seed ``x`` is::

    mix(x ^ (s * 0xD1B54A32D192ED03) + (k + 1) * 0x9E3779B97F4A7C15)

with the standard SplitMix64 finalizer ``mix`` (shifts 30/27/31,
multipliers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Uniform doubles
take the top 53 bits. Normals use the cosine branch of Box-Muller on
consecutive uniform pairs. Everything is plain 64-bit integer arithmetic,
so any language reproduces the same streams bit for bit.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
STREAM = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def raw(seed, n, stream=0):
    """First ``n`` uint64 outputs of ``stream`` under ``seed``."""
    base = np.uint64(int(seed) & _MASK)
    with np.errstate(over="ignore"):
        base = base ^ (np.uint64(stream) * STREAM)
        k = np.arange(1, n + 1, dtype=np.uint64)
        return _mix(base + k * GOLDEN)


def uniform(seed, n, stream=0):
    """``n`` doubles in [0, 1)."""
    return (raw(seed, n, stream) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def normal(seed, n, stream=0):
    """``n`` standard-normal doubles."""
    u = uniform(seed, 2 * n, stream)
    u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
    u2 = u[1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
