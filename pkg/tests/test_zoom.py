import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mrfzoom import dictionary as dm
from mrfzoom.bloch import Simulator
from mrfzoom.dictionary import Axis, grid_from_ranges
from mrfzoom.errors import LengthMismatchError
from mrfzoom.zoom import (
    Objective, ZoomConfig, df_dictionary, lattice_steps, quantify, quantify_slice, search_df,
    zoom_1d, zoom_2d,
)

# 30 x 30 x 121 points: small enough to hold in memory as a brute-force oracle
RANGES = [(500, 2000), (200, 800), (40, 161)]
STEPS = (50, 20, 1)


@pytest.fixture(scope="module")
def grid():
    return grid_from_ranges(RANGES, STEPS)


@pytest.fixture(scope="module")
def sim(sched):
    return Simulator(sched)


@pytest.fixture(scope="module")
def stored(grid, sched):
    return dm.generate(grid, sched)


def make_fp(sim, t1, t2, df):
    return sim.batch(t1 * 1e-3, t2 * 1e-3, df)[0]


class Counter:
    """Objective wrapper that records every call."""

    def __init__(self, f):
        self.f = f
        self.calls = []

    def __call__(self, p):
        self.calls.append(p)
        return self.f(p)


# ---- zoom_1d -------------------------------------------------------------

@st.composite
def unimodal_1d(draw):
    n = draw(st.integers(2, 200))
    peak = draw(st.integers(0, n - 1))
    rise = draw(st.lists(st.floats(0.01, 10), min_size=n, max_size=n))
    vals = np.empty(n)
    vals[peak] = 0.0
    for i in range(peak - 1, -1, -1):
        vals[i] = vals[i + 1] - rise[i]
    for i in range(peak + 1, n):
        vals[i] = vals[i - 1] - rise[i]
    steps = sorted(set(draw(st.lists(st.integers(1, 64), max_size=4))) | {1}, reverse=True)
    init = draw(st.integers(0, n - 1))
    return vals, steps, init


@given(unimodal_1d())
def test_zoom_1d_finds_unimodal_argmax(case):
    vals, steps, init = case
    got = zoom_1d(lambda i: vals[i], 0, len(vals) - 1, init, steps)
    assert got == int(np.argmax(vals))


def test_zoom_1d_boundary_constant_and_errors():
    assert zoom_1d(lambda i: i, 0, 50, 10, [16, 4, 1]) == 50
    assert zoom_1d(lambda i: -i, 0, 50, 10, [16, 4, 1]) == 0
    assert zoom_1d(lambda i: 1.0, 0, 50, 17, [8, 1]) == 17
    with pytest.raises(ValueError):
        zoom_1d(lambda i: 0, 0, 5, 1, [])
    with pytest.raises(ValueError):
        zoom_1d(lambda i: 0, 0, 5, 9, [1])


def test_zoom_1d_shortcut_skips_opposite_flank():
    calls = []

    def f(i):
        calls.append(i)
        return -abs(i - 3)

    zoom_1d(f, 0, 20, 10, [7])
    # left flank 3 wins at once, so 17 is never looked at
    assert calls[:2] == [10, 3] and 17 not in calls


def test_zoom_1d_tie_prefers_center():
    assert zoom_1d(lambda i: 0.0 if i in (4, 5, 6) else -1.0, 0, 10, 5, [1]) == 5


# ---- zoom_2d -------------------------------------------------------------

@st.composite
def separable_2d(draw):
    a = draw(unimodal_1d())
    b = draw(unimodal_1d())
    return a, b


@given(separable_2d())
def test_zoom_2d_finds_separable_argmax(case):
    (va, sa, ia), (vb, sb, ib) = case
    k = max(len(sa), len(sb))
    sa = sa + [1] * (k - len(sa))
    sb = sb + [1] * (k - len(sb))
    got = zoom_2d(lambda p: va[p[0]] + vb[p[1]], (0, 0), (len(va) - 1, len(vb) - 1), (ia, ib),
                  list(zip(sa, sb)))
    table = va[:, None] + vb[None, :]
    assert got == np.unravel_index(np.argmax(table), table.shape)


def test_zoom_2d_converged_costs_four():
    f = Counter(lambda p: -(p[0] - 5) ** 2 - (p[1] - 5) ** 2)
    assert zoom_2d(f, (0, 0), (10, 10), (5, 5), [(1, 1)]) == (5, 5)
    assert f.calls == [(5, 5), (4, 5), (5, 4), (6, 5), (5, 6)]


def test_zoom_2d_left_down_costs_three():
    f = Counter(lambda p: -(p[0] - 2) ** 2 - (p[1] - 2) ** 2)
    zoom_2d(f, (0, 0), (10, 10), (5, 5), [(3, 3)])
    # L and D both win, the corner is taken with no right/up probes
    assert f.calls[1:4] == [(2, 5), (5, 2), (2, 2)]
    assert f.calls[4:6] == [(0, 2), (2, 0)]


def test_zoom_2d_mixed_case():
    # L wins, D loses: the complementary flank U is tried, then corner (L, U)
    f = Counter(lambda p: -(p[0] - 3) ** 2 - (p[1] - 8) ** 2)
    got = zoom_2d(f, (0, 0), (10, 10), (5, 5), [(2, 3), (1, 1)])
    assert f.calls[1:5] == [(3, 5), (5, 2), (5, 8), (3, 8)]
    assert got == (3, 8)


def test_zoom_2d_errors():
    with pytest.raises(ValueError):
        zoom_2d(lambda p: 0, (0, 0), (3, 3), (1, 1), [])
    with pytest.raises(ValueError):
        zoom_2d(lambda p: 0, (0, 0), (3, 3), (4, 1), [(1, 1)])


# ---- configuration and objective ----------------------------------------

def test_config_validation(sched):
    with pytest.raises(ValueError):
        ZoomConfig(omega=50.0)
    with pytest.raises(ValueError):
        ZoomConfig(coarse_2d=(100.0, 200.0))
    with pytest.raises(ValueError):
        ZoomConfig(df_refine=0.5)
    with pytest.raises(ValueError):
        ZoomConfig(metric="l1")
    r = ZoomConfig().resolved(sched)
    assert math.isclose(r.omega, 1000.0 / sched.tr_ms.mean())
    assert r.df_coarse < r.omega
    assert ZoomConfig(omega=70.0).resolved(sched).omega == 70.0


def test_lattice_steps():
    a = Axis(0, 10, 100)
    assert [lattice_steps(s, a) for s in (200, 25, 10, 1)] == [20, 2, 1, 1]


def test_objective_memo(sched, sim):
    fp = make_fp(sim, 1400, 500, 100)
    obj = Objective(fp, sched, sim=sim)
    a = obj(1400, 500, 100)
    assert math.isclose(a, 1.0, rel_tol=1e-12)
    assert obj(1400, 500, 100) == a
    obj.scores([(1000, 100, 0), (1000, 100, 0), (1400, 500, 100)])
    assert obj.evaluations == obj.generated == 2
    obj.metric = "euclidean"
    assert abs(obj(1400, 500, 100)) < 1e-6
    assert obj.generated == 2
    with pytest.raises(LengthMismatchError):
        Objective(fp[:10], sched)


def test_objective_dictionary_lookups(sched, sim, grid):
    ddf = df_dictionary(grid, sched)
    cfg = ZoomConfig()
    obj = Objective(make_fp(sim, 1400, 500, 100), sched, sim=sim, df_dict=ddf)
    obj(cfg.probe_t1, cfg.probe_t2, 100.0)
    obj(cfg.probe_t1, cfg.probe_t2, 100.0)
    obj(1400, 500, 100)
    assert (obj.lookups, obj.generated, obj.evaluations) == (1, 1, 2)
    ref = Objective(make_fp(sim, 1400, 500, 100), sched, sim=sim)
    assert math.isclose(ref(cfg.probe_t1, cfg.probe_t2, 100.0),
                        obj(cfg.probe_t1, cfg.probe_t2, 100.0), rel_tol=1e-6)
    with pytest.raises(ValueError):
        Objective(make_fp(sim, 1400, 500, 100), sched, smooth_k=3, df_dict=ddf)


# ---- df stage ------------------------------------------------------------

@pytest.mark.parametrize("probe", [(1000, 500), (1000, 30)])
@pytest.mark.parametrize("target", [(1400, 500, 100), (1400, 500, 0), (900, 300, -30)])
def test_search_df_on_target(sched, sim, target, probe):
    cfg = ZoomConfig(probe_t1=probe[0], probe_t2=probe[1]).resolved(sched)
    ax = Axis.from_range(-300, 300, 1)
    obj = Objective(make_fp(sim, *target), sched, sim=sim)
    i, v, reason = search_df(obj, cfg, *probe, ax)
    assert reason in ("plateau", "finest")
    full = obj.scores([(*probe, x) for x in ax.values()])
    assert i == int(np.argmax(full))
    if probe == (1000, 500):
        assert ax.value(i) == target[2]


@pytest.mark.parametrize("target,lobe", [((2000, 700, 101), 42.0), ((1500, 300, 390), 204.0)])
def test_search_df_escapes_side_lobe(sched, sim, target, lobe):
    cfg = ZoomConfig().resolved(sched)
    ax = Axis.from_range(-30, 450, 1)
    obj = Objective(make_fp(sim, *target), sched, sim=sim)
    trace = []
    i, _, _ = search_df(obj, cfg, cfg.probe_t1, cfg.probe_t2, ax, trace)
    first = next(t for t in trace if t["stage"] == "df_refine")
    assert first["df"] == lobe
    assert any(t["stage"] == "df_translate" for t in trace)
    # 1 Hz exhaustive scan at the same fixed T1/T2
    full = obj.scores([(cfg.probe_t1, cfg.probe_t2, v) for v in ax.values()])
    assert i == int(np.argmax(full))


def test_search_df_requires_omega(sched, sim):
    obj = Objective(make_fp(sim, 1400, 500, 100), sched, sim=sim)
    with pytest.raises(ValueError):
        search_df(obj, ZoomConfig(), 1000, 500, Axis(0, 1, 10))


# ---- end to end ----------------------------------------------------------

def _targets(grid, n, seed):
    rng = np.random.default_rng(seed)
    flat = rng.choice(grid.total, n, replace=False)
    return [grid.unravel(int(f)) for f in flat]


def test_quantify_matches_brute_force(grid, stored, sched, sim):
    cfg = ZoomConfig(final_metric="euclidean")
    for idx in _targets(grid, 6, 2):
        p = grid.params(*idx)
        fp = sim.batch(p.t1, p.t2, p.df)[0]
        ref = dm.brute_force_search(fp, stored)
        res = quantify(fp, grid, sched, sim=sim)
        assert res.index[1:] == ref.index[1:]
        assert abs(res.index[0] - ref.index[0]) <= 3
        assert quantify(fp, grid, sched, cfg, sim=sim).index == ref.index == idx
        assert res.evaluations < 1000
        assert res.evaluations < grid.total


def test_quantify_modes_agree(grid, stored, sched, sim):
    ddf = df_dictionary(grid, sched)
    for idx in _targets(grid, 3, 5):
        p = grid.params(*idx)
        fp = sim.batch(p.t1, p.t2, p.df)[0]
        a = quantify(fp, grid, sched, sim=sim)
        b = quantify(fp, grid, sched, df_dict=ddf, sim=sim)
        c = quantify(fp, grid, sched, full_dict=stored, sim=sim)
        assert a.index == b.index == c.index
        assert c.evaluations == a.evaluations
        assert any(t.get("stage") == "df_search" for t in a.trace)


@pytest.mark.parametrize("init", [(500, 200), (800, 500), (2000, 800)])
def test_quantify_initial_values(grid, sched, sim, init):
    fp = make_fp(sim, 1400, 500, 100)
    res = quantify(fp, grid, sched, init=init, sim=sim)
    assert res.index == grid.index_of(res.params) == (18, 15, 60)


@given(st.floats(0.05, 20.0), st.floats(-math.pi, math.pi))
def test_quantify_scale_phase_invariant(grid, sched, sim, c, psi):
    fp = make_fp(sim, 1150, 360, 77)
    a = quantify(fp, grid, sched, sim=sim)
    b = quantify(c * np.exp(1j * psi) * fp, grid, sched, sim=sim)
    assert a.index == b.index
    assert math.isclose(b.params.pd, c * a.params.pd, rel_tol=1e-9)


def test_quantify_length_mismatch(grid, sched, sim):
    with pytest.raises(LengthMismatchError):
        quantify(make_fp(sim, 1400, 500, 100)[:100], grid, sched)


# ---- slices --------------------------------------------------------------

def _tiny_slice(grid, sim):
    mask = np.zeros((4, 5), dtype=bool)
    mask[1:4, 1:4] = True
    mask[0, 2] = True
    rng = np.random.default_rng(3)
    truth = {}
    fps = np.zeros((4, 5, len(sim)), dtype=complex)
    for r, c in np.argwhere(mask):
        i = (10 + rng.integers(-2, 3), 12 + rng.integers(-2, 3), 40 + rng.integers(-6, 7))
        truth[(r, c)] = i
        p = grid.params(*i)
        fps[r, c] = sim.batch(p.t1, p.t2, p.df)[0]
    return fps, mask, truth


def test_slice_prior_equals_noprior(grid, sched, sim):
    fps, mask, truth = _tiny_slice(grid, sim)
    a = quantify_slice(fps, mask, grid, sched)
    b = quantify_slice(fps, mask, grid, sched, use_prior=True)
    c = quantify_slice(fps, mask, grid, sched, workers=3)
    for m in ("t1", "t2", "df"):
        assert np.array_equal(getattr(a, m), getattr(b, m), equal_nan=True)
        assert np.array_equal(getattr(a, m), getattr(c, m), equal_nan=True)
    for (r, cc), i in truth.items():
        assert a.results[(r, cc)].index[1:] == i[1:]
    assert np.isnan(a.t1[0, 0])
    assert b.total_evaluations > 0 and np.isnan(b.evaluations[0, 0])


def test_single_voxel_slice_equals_quantify(grid, sched, sim):
    fp = make_fp(sim, 1400, 500, 100)
    mask = np.zeros((3, 3), dtype=bool)
    mask[1, 2] = True
    res = quantify_slice({(1, 2): fp}, mask, grid, sched, use_prior=True)
    one = quantify(fp, grid, sched, sim=sim)
    assert res.results[(1, 2)].index == one.index
    assert res.results[(1, 2)].evaluations == one.evaluations
    with pytest.raises(ValueError):
        quantify_slice({}, np.zeros((2, 2), dtype=bool), grid, sched)
