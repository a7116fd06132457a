"""Synthetic brain-like slice: integer T1/T2/df maps over an intracranial mask.

The layout is a crude axial slice: an elliptical head, a gray-matter rim,
white matter inside, two CSF ventricles and a few deep gray nuclei. Each
tissue gets a smooth spatial modulation so neighboring voxels are similar
but not identical. The off-resonance map is a smooth low-order field.
Values are rounded to whole ms / Hz so they sit on a 1 ms / 1 ms / 1 Hz
lattice.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SLICE_HEADER = "row,col,t1_ms,t2_ms,df_hz"

# (T1 ms, T2 ms) centers per tissue
TISSUES = {
    "wm": (850.0, 70.0),
    "gm": (1350.0, 100.0),
    "deep": (1150.0, 85.0),
    "csf": (3000.0, 560.0),
}


@dataclass
class SliceMaps:
    """Ground-truth maps; entries outside ``mask`` are NaN."""

    t1: np.ndarray
    t2: np.ndarray
    df: np.ndarray
    mask: np.ndarray

    @property
    def shape(self):
        return self.mask.shape

    def voxels(self):
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.mask)]

    def to_csv(self):
        out = io.StringIO()
        rows, cols = self.shape
        out.write(f"# rows={rows} cols={cols}\n")
        out.write(SLICE_HEADER + "\n")
        for r, c in self.voxels():
            out.write(f"{r},{c},{self.t1[r, c]:.9g},{self.t2[r, c]:.9g},{self.df[r, c]:.9g}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        if len(lines) < 2 or not lines[0].startswith("#"):
            raise ValueError("slice file must start with '# rows=R cols=C'")
        try:
            meta = dict(kv.split("=") for kv in lines[0][1:].split())
            rows, cols = int(meta["rows"]), int(meta["cols"])
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed slice header: {lines[0]!r}") from exc
        if lines[1] != SLICE_HEADER:
            raise ValueError(f"expected column header '{SLICE_HEADER}'")
        maps = [np.full((rows, cols), np.nan) for _ in range(3)]
        mask = np.zeros((rows, cols), dtype=bool)
        for ln in lines[2:]:
            parts = ln.split(",")
            if len(parts) != 5:
                raise ValueError(f"malformed slice row: {ln!r}")
            r, c = int(parts[0]), int(parts[1])
            if not (0 <= r < rows and 0 <= c < cols):
                raise ValueError(f"voxel ({r}, {c}) outside a {rows}x{cols} slice")
            if mask[r, c]:
                raise ValueError(f"duplicate voxel ({r}, {c})")
            mask[r, c] = True
            for m, v in zip(maps, parts[2:]):
                m[r, c] = float(v)
        if not mask.any():
            raise ValueError("slice file has no voxels")
        return cls(*maps, mask)

    def save(self, path):
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path):
        return cls.from_csv(Path(path).read_text())


def head_mask(size=64, n_voxels=1731):
    """The ``n_voxels`` pixels closest to the center in an elliptical metric."""
    y, x = np.mgrid[0:size, 0:size].astype(float)
    cy, cx = (size - 1) / 2.0, (size - 1) / 2.0
    r = np.hypot((x - cx) / 0.80, (y - cy) / 1.0)
    order = np.argsort(r.ravel(), kind="stable")
    mask = np.zeros(size * size, dtype=bool)
    mask[order[:n_voxels]] = True
    return mask.reshape(size, size)


def synthetic_slice(size=64, n_voxels=1731, seed=0):
    """Build the bundled slice. ``seed`` only shifts the texture phases."""
    rng = np.random.default_rng(seed)
    mask = head_mask(size, n_voxels)
    y, x = np.mgrid[0:size, 0:size].astype(float)
    u = (x - (size - 1) / 2.0) / (size / 2.0)
    v = (y - (size - 1) / 2.0) / (size / 2.0)
    # normalized elliptical radius that reaches ~1 on the mask edge
    rr = np.hypot(u / 0.80, v)
    rr = rr / rr[mask].max()

    ph = rng.uniform(0, 2 * np.pi, 4)
    texture = 0.5 * np.sin(5.0 * u + ph[0]) * np.cos(4.0 * v + ph[1]) + \
        0.5 * np.sin(3.0 * (u + v) + ph[2])

    tissue = np.full(mask.shape, "wm", dtype=object)
    tissue[rr > 0.82 + 0.05 * np.sin(9 * np.arctan2(v, u) + ph[3])] = "gm"
    vent = (((u - 0.12) / 0.07) ** 2 + (v / 0.22) ** 2 < 1) | \
        (((u + 0.12) / 0.07) ** 2 + (v / 0.22) ** 2 < 1)
    deep = (((np.abs(u) - 0.33) / 0.10) ** 2 + ((v - 0.05) / 0.14) ** 2 < 1)
    tissue[deep] = "deep"
    tissue[vent] = "csf"
    tissue[(rr > 0.96)] = "csf"

    t1 = np.full(mask.shape, np.nan)
    t2 = np.full(mask.shape, np.nan)
    for name, (a, b) in TISSUES.items():
        sel = mask & (tissue == name)
        t1[sel] = a * (1.0 + 0.12 * texture[sel])
        t2[sel] = b * (1.0 + 0.10 * texture[sel])
    t1 = np.clip(np.round(t1), 800, 3200)
    t2 = np.clip(np.round(t2), 50, 600)

    field = 18.0 + 40.0 * v + 22.0 * u * u - 15.0 * u * v + 10.0 * (v * v - 0.3)
    df = np.clip(np.round(field), -48, 84)
    for m in (t1, t2, df):
        m[~mask] = np.nan
    return SliceMaps(t1, t2, df, mask)


def slice_fingerprints(maps: SliceMaps, sched, sim=None):
    """Noise-free fingerprints for every masked voxel as an (H, W, N) array.

    Unmasked voxels are left at zero.
    """
    from .bloch import Simulator

    sim = sim if sim is not None else Simulator(sched)
    vox = maps.voxels()
    idx = tuple(np.array(vox).T)
    sig = sim.batch(maps.t1[idx] * 1e-3, maps.t2[idx] * 1e-3, maps.df[idx])
    out = np.zeros(maps.shape + (len(sched),), dtype=np.complex128)
    out[idx] = sig
    return out
