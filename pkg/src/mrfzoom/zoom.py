"""Parameter-separable multi-resolution dictionary search.

Off-resonance is located first with T1/T2 held fixed, then T1/T2 are found
by hill-climbing "zooms" whose step shrinks stage by stage. Dictionary
entries are simulated on demand and memoized, so the cost of a search is
the number of distinct lattice points it touches.

All zoom coordinates are integer indices into the finest lattice of the
search grid; step sizes given in ms or Hz are converted to whole lattice
steps (rounded down, at least one).
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bloch import Simulator
from .dictionary import Axis, Dictionary, ParameterGrid, generate, score_from_inner
from .errors import LengthMismatchError
from .fingerprint import TissueParams, energy, estimate_pd, normalize, smoothed_inner


@dataclass(frozen=True)
class ZoomConfig:
    # None: use 1/mean(TR) of the schedule being matched
    omega: float | None = None
    df_coarse: float = 60.0
    df_window: float = 150.0
    df_refine: float = 3.0
    df_fine: float = 1.0
    # fixed T1/T2 (ms) while df is searched, and the zoom starting point
    probe_t1: float = 1000.0
    probe_t2: float = 30.0
    t1_init: float = 1000.0
    t2_init: float = 500.0
    coarse_2d: tuple = (200.0, 100.0)
    interleave_1d: tuple = (100.0, 50.0, 20.0, 10.0)
    final_2d: float = 1.0
    epsilon: float = 1e-7
    metric: str = "cc"
    final_metric: str | None = None
    range_first_stage: bool = False
    # remedial df settings when the df stage finds nothing above noise_floor
    noise_floor: float = 0.1
    noisy_coarse: float = 30.0
    noisy_window: float = 300.0
    # rerun the df stage at the tentative T1/T2 when the match stays below this
    recheck_cc: float = 0.9
    # half-width (Hz) of the df rescan after the T1/T2 zooms, and how often
    # a moved df may trigger another round of T1/T2 zooming
    df_polish: float = 3.0
    max_polish: int = 3
    prior_t1: float = 3000.0
    prior_t2: float = 800.0
    prior_df: float = 150.0

    def __post_init__(self):
        if self.omega is not None and not self.df_coarse < self.omega:
            raise ValueError("coarse df step must be smaller than omega")
        if not self.df_coarse > self.df_refine > 0 or not self.df_refine >= self.df_fine > 0:
            raise ValueError("df stage steps must decrease")
        steps = list(self.coarse_2d) + list(self.interleave_1d) + [self.final_2d]
        if any(b >= a for a, b in zip(self.coarse_2d, self.coarse_2d[1:])) or \
                any(b >= a for a, b in zip(self.interleave_1d, self.interleave_1d[1:])) or \
                min(steps) <= 0:
            raise ValueError("zoom stage steps must be positive and strictly decreasing")
        for m in (self.metric, self.final_metric):
            if m not in ("cc", "euclidean", None):
                raise ValueError(f"unknown metric {m!r}")

    def resolved(self, sched):
        """Copy with ``omega`` filled in from ``sched`` if unset.

        A coarse step that would not stay below the derived period is
        lowered to ``omega - df_fine``.
        """
        if self.omega is not None:
            return self
        omega = 1000.0 / float(np.mean(sched.tr_ms))
        return replace(self, omega=omega, df_coarse=min(self.df_coarse, omega - self.df_fine))


@dataclass
class QuantResult:
    params: TissueParams
    score: float
    evaluations: int
    elapsed: float
    index: tuple
    trace: list = field(default_factory=list)


def lattice_steps(step, axis: Axis):
    """Whole lattice steps not exceeding ``step`` (at least one)."""
    return max(1, int(math.floor(step / axis.step + 1e-9)))


class Objective:
    """Memoized match score of one fingerprint against simulated entries.

    Points are addressed by physical values (T1 ms, T2 ms, df Hz). The memo
    keeps the raw inner product and entry energy, so switching ``metric``
    never triggers a re-simulation. ``evaluations`` counts entry
    generations plus prior-dictionary lookups; memo hits are free.
    """

    def __init__(self, fp, sched, metric="cc", smooth_k=None, sim=None,
                 df_dict: Dictionary | None = None, full_dict: Dictionary | None = None,
                 smooth_frame="lab"):
        fp = np.asarray(fp, dtype=np.complex128)
        if fp.shape != (len(sched),):
            raise LengthMismatchError(f"fingerprint length {fp.size} vs schedule length {len(sched)}")
        if smooth_k and full_dict is not None:
            raise ValueError("a stored dictionary cannot be smoothed on the fly")
        if smooth_k and df_dict is not None:
            raise ValueError("a prior dictionary cannot be smoothed on the fly")
        self.smooth_k = smooth_k
        self.smooth_frame = smooth_frame
        self.q = normalize(fp)
        self.sim = sim if sim is not None else Simulator(sched)
        self.metric = metric
        self.df_dict = df_dict
        self.full_dict = full_dict
        self.memo = {}
        self.evaluations = 0
        self.generated = 0
        self.lookups = 0

    @staticmethod
    def _key(t1, t2, df):
        return (round(float(t1), 9), round(float(t2), 9), round(float(df), 9))

    def _lookup(self, d: Dictionary, key):
        try:
            idx = d.grid.index_of(TissueParams.from_ms(*key))
        except ValueError:
            return None
        e = d.entry(d.grid.flat_index(*idx))
        return np.sum(self.q * e.conj()), float(energy(e))

    def _fill(self, keys):
        missing = []
        for key in keys:
            if key in self.memo:
                continue
            hit = None
            for d in (self.full_dict, self.df_dict):
                if d is not None:
                    hit = self._lookup(d, key)
                    if hit is not None:
                        break
            if hit is not None:
                self.memo[key] = hit
                self.evaluations += 1
                self.lookups += 1
            else:
                missing.append(key)
        if not missing:
            return
        arr = np.array(missing, dtype=np.float64)
        t1, t2, df = arr[:, 0] * 1e-3, arr[:, 1] * 1e-3, arr[:, 2]
        if self.smooth_k:
            inner, en = smoothed_inner(self.q, self.sim.batch(t1, t2, df), df,
                                       self.sim.t_read, self.smooth_k, self.smooth_frame)
        else:
            inner, en = self.sim.inner(t1, t2, df, self.q)
        for key, a, b in zip(missing, inner, en):
            self.memo[key] = (complex(a), float(b))
        self.evaluations += len(missing)
        self.generated += len(missing)

    def scores(self, points):
        keys = [self._key(*p) for p in points]
        # dict.fromkeys dedupes while keeping order
        self._fill(list(dict.fromkeys(keys)))
        inner = np.array([self.memo[k][0] for k in keys], dtype=np.complex128)
        en = np.array([self.memo[k][1] for k in keys], dtype=np.float64)
        return score_from_inner(inner, en, self.metric)

    def __call__(self, t1, t2, df):
        return float(self.scores([(t1, t2, df)])[0])


def _argmax_first(values):
    return int(np.argmax(values))


def zoom_1d(f, lo, hi, init, steps, trace=None):
    """Hill-climb an integer coordinate in ``[lo, hi]`` with shrinking steps.

    At each step size the left flank is tried first; a flank that beats the
    center is moved to at once, without evaluating the other flank. Ties
    keep the center. ``f`` should be memoized by the caller.
    """
    if not steps:
        raise ValueError("empty step schedule")
    if not lo <= init <= hi:
        raise ValueError("initial point outside the search range")
    c = init
    fc = f(c)
    for s in steps:
        moves = 0
        while True:
            left = max(lo, c - s)
            if left != c:
                fl = f(left)
                if fl > fc:
                    c, fc, moves = left, fl, moves + 1
                    continue
            right = min(hi, c + s)
            if right != c:
                fr = f(right)
                if fr > fc:
                    c, fc, moves = right, fr, moves + 1
                    continue
            break
        if trace is not None:
            trace.append({"step": s, "moves": moves, "center": c, "score": fc})
    return c


def zoom_2d(f, lo, hi, init, steps, trace=None):
    """Two-dimensional zoom on integer coordinates.

    Left and down flanks are tried first. Both better: jump to the
    down-left corner. Both worse: try right and up; both worse again means
    the stage has converged, both better jumps to the up-right corner,
    otherwise move to the better one. Mixed: test the flank opposite the
    losing one and jump to that corner if it also wins, else to the winning
    flank. A corner is only taken if it beats the winning flanks, which
    keeps the center score strictly increasing.
    """
    if not steps:
        raise ValueError("empty step schedule")
    (lo1, lo2), (hi1, hi2) = lo, hi
    x, y = init
    if not (lo1 <= x <= hi1 and lo2 <= y <= hi2):
        raise ValueError("initial point outside the search range")

    def clamp(a, b):
        return (min(max(a, lo1), hi1), min(max(b, lo2), hi2))

    c = (x, y)
    fc = f(c)
    for s1, s2 in steps:
        moves = 0
        while True:
            x, y = c

            def val(p):
                return fc if p == c else f(p)

            L, D = clamp(x - s1, y), clamp(x, y - s2)
            fL, fD = val(L), val(D)
            gL, gD = fL > fc, fD > fc
            winners = []
            corner = None
            if gL and gD:
                winners = [(L, fL), (D, fD)]
                corner = clamp(x - s1, y - s2)
            elif not gL and not gD:
                R, U = clamp(x + s1, y), clamp(x, y + s2)
                fR, fU = val(R), val(U)
                gR, gU = fR > fc, fU > fc
                if not gR and not gU:
                    break
                if gR:
                    winners.append((R, fR))
                if gU:
                    winners.append((U, fU))
                if gR and gU:
                    corner = clamp(x + s1, y + s2)
            elif gL:
                U = clamp(x, y + s2)
                fU = val(U)
                winners = [(L, fL)]
                if fU > fc:
                    winners.append((U, fU))
                    corner = clamp(x - s1, y + s2)
            else:
                R = clamp(x + s1, y)
                fR = val(R)
                winners = [(D, fD)]
                if fR > fc:
                    winners.append((R, fR))
                    corner = clamp(x + s1, y - s2)
            cand = []
            if corner is not None and corner != c:
                cand.append((corner, f(corner)))
            cand += winners
            best = cand[0]
            for p in cand[1:]:
                if p[1] > best[1]:
                    best = p
            c, fc = best
            moves += 1
        if trace is not None:
            trace.append({"step": (s1, s2), "moves": moves, "center": c, "score": fc})
    return c


def search_df(obj: Objective, cfg: ZoomConfig, t1_ms, t2_ms, axis: Axis, trace=None,
              coarse=None, window=None):
    """Locate off-resonance with T1/T2 held at ``(t1_ms, t2_ms)``.

    Coarse scan, refine around the optimum, hill-climb its omega-translates
    (re-refining while one wins), then a fine scan over one period.

    Returns ``(df index on axis, best score, stop reason)``. The reason is
    ``"plateau"`` when the last three stage bests agree within ``epsilon``
    and ``"finest"`` otherwise.
    """
    if cfg.omega is None:
        raise ValueError("omega unset; call cfg.resolved(schedule) first")
    if axis.count < 1:
        raise ValueError("empty df range")
    coarse = cfg.df_coarse if coarse is None else coarse
    window = cfg.df_window if window is None else window
    h = axis.step
    n = axis.count

    def scan(idx, stage):
        idx = sorted({int(i) for i in idx if 0 <= i < n})
        before = obj.evaluations
        v = obj.scores([(t1_ms, t2_ms, axis.value(i)) for i in idx])
        k = _argmax_first(v)
        if trace is not None:
            trace.append({"stage": stage, "points": len(idx),
                          "evaluations": obj.evaluations - before,
                          "df": axis.value(idx[k]), "score": float(v[k])})
        return idx[k], float(v[k])

    def refine(center):
        r = max(1, int(math.floor(cfg.df_refine / h + 1e-9)))
        half = int(math.floor(window / 2 / h + 1e-9)) // r
        return scan([center + j * r for j in range(-half, half + 1)], "df_refine")

    def climb_translates(shifts):
        # the pseudo-period is only approximate, so each translate is
        # hill-climbed within a quarter period before lobes are compared
        before = obj.evaluations
        reach = max(1, int(math.floor(cfg.omega / 4 / h + 1e-9)))
        steps = sorted({lattice_steps(cfg.df_refine, axis), lattice_steps(cfg.df_fine, axis)},
                       reverse=True)

        def f(i):
            return obj(t1_ms, t2_ms, axis.value(i))

        best = None
        for t in shifts:
            lo, hi = max(0, t - reach), min(n - 1, t + reach)
            k = zoom_1d(f, lo, hi, min(max(t, lo), hi), steps)
            v = f(k)
            if best is None or v > best[1]:
                best = (k, v)
        if trace is not None:
            trace.append({"stage": "df_translate", "points": len(shifts),
                          "evaluations": obj.evaluations - before,
                          "df": axis.value(best[0]), "score": float(best[1])})
        return best

    # Stage bests are tracked for the plateau rule, but the 1 Hz stage always
    # runs: coarse and refine scans often re-select the same point, and an
    # early stop there misses peaks narrower than the refine step.
    bests = []

    def plateau(v):
        bests.append(v)
        return len(bests) >= 3 and max(bests[-3:]) - min(bests[-3:]) < cfg.epsilon

    b, bv = scan(range(0, n, max(1, int(math.floor(coarse / h + 1e-9)))), "df_coarse")
    plateau(bv)
    b, bv = refine(b)
    plateau(bv)

    period = cfg.omega / h
    for _ in range(n):
        m_lo = int(math.ceil(-b / period))
        m_hi = int(math.floor((n - 1 - b) / period))
        shifts = [int(round(b + m * period)) for m in range(m_lo, m_hi + 1) if m != 0]
        if not shifts:
            break
        t, tv = climb_translates(shifts)
        if tv <= bv:
            break
        b, bv = refine(t)
        plateau(bv)

    f = max(1, int(math.floor(cfg.df_fine / h + 1e-9)))
    half = int(math.floor(cfg.omega / 2 / h + 1e-9))
    b, bv = scan(range(b - half, b + half + 1, f), "df_fine")
    reason = "plateau" if plateau(bv) else "finest"
    return b, bv, reason


def _stage(trace, name, obj, before, **extra):
    trace.append({"stage": name, "evaluations": obj.evaluations - before, **extra})


def quantify(fp, grid: ParameterGrid, sched, cfg: ZoomConfig | None = None, init=None,
             df_dict: Dictionary | None = None, full_dict: Dictionary | None = None,
             smooth_k=None, sim=None, smooth_frame="lab") -> QuantResult:
    """Find T1/T2/df of ``fp`` on ``grid``'s finest lattice.

    Pipeline: df stage at the fixed initial T1/T2, coarse 2-D zoom, 1 Hz df
    rescan, interleaved 1-D T1/T2 zooms, final 2-D zoom at lattice
    resolution. ``init`` overrides the starting T1/T2 (ms) of the zooms.
    """
    cfg = (cfg or ZoomConfig()).resolved(sched)
    t0 = time.perf_counter()
    obj = Objective(fp, sched, cfg.metric, smooth_k, sim, df_dict, full_dict, smooth_frame)
    trace = []
    a1, a2, a3 = grid.axes

    def f3(i1, i2, i3):
        return obj(a1.value(i1), a2.value(i2), a3.value(i3))

    # 1) off-resonance at the fixed starting T1/T2
    before = obj.evaluations
    i3, dv, reason = search_df(obj, cfg, cfg.probe_t1, cfg.probe_t2, a3, trace)
    if dv < cfg.noise_floor:
        i3, dv, reason = search_df(obj, cfg, cfg.probe_t1, cfg.probe_t2, a3, trace,
                                   coarse=cfg.noisy_coarse, window=cfg.noisy_window)
    _stage(trace, "df_search", obj, before, df=a3.value(i3), score=dv, stop=reason)

    t1_start, t2_start = init if init is not None else (cfg.t1_init, cfg.t2_init)
    i1, i2 = a1.nearest(t1_start), a2.nearest(t2_start)
    lo, hi = (0, 0), (a1.count - 1, a2.count - 1)
    half_df = int(math.floor(cfg.omega / 2 / a3.step + 1e-9))
    fine_df = lattice_steps(cfg.df_fine, a3)

    def coarse_t1t2(i1, i2, i3):
        steps = [(lattice_steps(s, a1), lattice_steps(s, a2)) for s in cfg.coarse_2d]
        if cfg.range_first_stage:
            steps.insert(0, (max(1, a1.count // 4), max(1, a2.count // 4)))
        before = obj.evaluations
        i1, i2 = zoom_2d(lambda p: f3(p[0], p[1], i3), lo, hi, (i1, i2), steps)
        _stage(trace, "zoom_2d_coarse", obj, before, t1=a1.value(i1), t2=a2.value(i2))
        return i1, i2

    def rescan_df(i1, i2, i3):
        before = obj.evaluations
        idx = [i for i in range(i3 - half_df, i3 + half_df + 1, fine_df) if 0 <= i < a3.count]
        v = obj.scores([(a1.value(i1), a2.value(i2), a3.value(i)) for i in idx])
        k = _argmax_first(v)
        _stage(trace, "df_rescan", obj, before, df=a3.value(idx[k]), score=float(v[k]))
        return idx[k], float(v[k])

    # 2) tentative T1/T2, 3) 1 Hz df rescan
    i1, i2 = coarse_t1t2(i1, i2, i3)
    i3, sv = rescan_df(i1, i2, i3)
    if cfg.metric == "cc" and sv < cfg.recheck_cc:
        # a weak match means the df stage may have settled on a side lobe;
        # repeat it with the tentative T1/T2, which sharpens the true peak
        before = obj.evaluations
        j3, jv, reason = search_df(obj, cfg, a1.value(i1), a2.value(i2), a3, trace)
        _stage(trace, "df_recheck", obj, before, df=a3.value(j3), score=jv, stop=reason)
        if jv > sv and j3 != i3:
            j1, j2 = coarse_t1t2(i1, i2, j3)
            j3, jv = rescan_df(j1, j2, j3)
            if jv > sv:
                i1, i2, i3, sv = j1, j2, j3, jv

    # 4) interleaved 1-D zooms, 5) final 2-D zoom at lattice resolution, then
    # a short df rescan; if df moves, T1/T2 are re-zoomed at the new df
    final_metric = cfg.final_metric or cfg.metric
    polish = int(math.floor(cfg.df_polish / a3.step + 1e-9))
    for attempt in range(cfg.max_polish + 1):
        obj.metric = cfg.metric
        for s in cfg.interleave_1d:
            before = obj.evaluations
            i1 = zoom_1d(lambda k: f3(k, i2, i3), 0, a1.count - 1, i1, [lattice_steps(s, a1)])
            i2 = zoom_1d(lambda k: f3(i1, k, i3), 0, a2.count - 1, i2, [lattice_steps(s, a2)])
            _stage(trace, "zoom_1d", obj, before, step=s, t1=a1.value(i1), t2=a2.value(i2))

        obj.metric = final_metric
        before = obj.evaluations
        step = (lattice_steps(cfg.final_2d, a1), lattice_steps(cfg.final_2d, a2))
        i1, i2 = zoom_2d(lambda p: f3(p[0], p[1], i3), lo, hi, (i1, i2), [step])
        _stage(trace, "zoom_2d_final", obj, before, t1=a1.value(i1), t2=a2.value(i2))

        if polish < 1 or attempt == cfg.max_polish:
            break
        before = obj.evaluations
        idx = [i for i in range(i3 - polish, i3 + polish + fine_df, fine_df) if 0 <= i < a3.count]
        v = obj.scores([(a1.value(i1), a2.value(i2), a3.value(i)) for i in idx])
        j3 = idx[_argmax_first(v)]
        _stage(trace, "df_polish", obj, before, df=a3.value(j3), score=float(v.max()))
        if j3 == i3:
            break
        i3 = j3

    score = f3(i1, i2, i3)
    elapsed = time.perf_counter() - t0
    params = grid.params(i1, i2, i3)
    # one extra simulation for the signal scale; not a dictionary evaluation
    ideal = obj.sim.batch(params.t1, params.t2, params.df)[0]
    params = replace(params, pd=estimate_pd(fp, ideal))
    return QuantResult(params, score, obj.evaluations, elapsed, (i1, i2, i3), trace)


def df_dictionary(grid: ParameterGrid, sched, cfg: ZoomConfig | None = None) -> Dictionary:
    """Prior dictionary over ``grid``'s df axis at the df-stage probe T1/T2."""
    cfg = cfg or ZoomConfig()
    g = ParameterGrid(Axis(cfg.probe_t1, 1.0, 1), Axis(cfg.probe_t2, 1.0, 1), grid.df)
    return generate(g, sched)


@dataclass
class SliceResult:
    t1: np.ndarray
    t2: np.ndarray
    df: np.ndarray
    pd: np.ndarray
    score: np.ndarray
    evaluations: np.ndarray
    elapsed: float
    results: dict

    @property
    def total_evaluations(self):
        return int(np.nansum(self.evaluations))


def _prior_of(mask, done, r, c):
    for rr, cc in ((r, c - 1), (r - 1, c)):
        if rr >= 0 and cc >= 0 and mask[rr, cc] and (rr, cc) in done:
            return done[(rr, cc)]
    return None


def quantify_slice(fps, mask, grid: ParameterGrid, sched, cfg: ZoomConfig | None = None,
                   use_prior=False, df_dict=None, workers=1, smooth_k=None,
                   smooth_frame="lab") -> SliceResult:
    """Quantify every masked voxel in raster order.

    ``fps`` is an ``(H, W, N)`` array (or a mapping from ``(row, col)`` to a
    fingerprint). With ``use_prior`` each voxel's search grid is intersected
    with windows around the left (else upper) already-solved neighbor, and
    that neighbor's T1/T2 start the zooms.
    """
    cfg = cfg or ZoomConfig()
    mask = np.asarray(mask, dtype=bool)
    voxels = [tuple(int(v) for v in rc) for rc in np.argwhere(mask)]
    if not voxels:
        raise ValueError("empty mask")
    sim = Simulator(sched)
    t0 = time.perf_counter()
    done = {}

    def solve(rc, prior):
        fp = fps[rc] if isinstance(fps, dict) else fps[rc[0], rc[1]]
        if prior is None:
            return quantify(fp, grid, sched, cfg, df_dict=df_dict, sim=sim,
                            smooth_k=smooth_k, smooth_frame=smooth_frame)
        g = grid.window(prior, cfg.prior_t1, cfg.prior_t2, cfg.prior_df)
        return quantify(fp, g, sched, cfg, init=(prior.t1_ms, prior.t2_ms), df_dict=df_dict,
                        sim=sim, smooth_k=smooth_k, smooth_frame=smooth_frame)

    if use_prior:
        results = {}
        for rc in voxels:
            results[rc] = solve(rc, _prior_of(mask, done, *rc))
            done[rc] = results[rc].params
    elif workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = dict(zip(voxels, pool.map(lambda rc: solve(rc, None), voxels)))
    else:
        results = {rc: solve(rc, None) for rc in voxels}

    shape = mask.shape
    maps = {k: np.full(shape, np.nan) for k in ("t1", "t2", "df", "pd", "score", "evaluations")}
    for (r, c), res in results.items():
        maps["t1"][r, c] = res.params.t1_ms
        maps["t2"][r, c] = res.params.t2_ms
        maps["df"][r, c] = res.params.df
        maps["pd"][r, c] = res.params.pd
        maps["score"][r, c] = res.score
        maps["evaluations"][r, c] = res.evaluations
    return SliceResult(elapsed=time.perf_counter() - t0, results=results, **maps)
