import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from mrfzoom.bloch import (
    M_START, RfPulse, Simulator, evolve_tr, readout_times, relax_step, rf_matrix, rf_stack,
    rot, simulate_fingerprint,
)
from mrfzoom.errors import DegeneratePulseError
from mrfzoom.fingerprint import TissueParams
from mrfzoom.sequence import Schedule

angles = st.floats(-10.0, 10.0, allow_nan=False)


def test_rot_examples():
    assert np.allclose(rot("z", 0.0), np.eye(3), atol=0)
    assert np.allclose(rot("z", math.pi / 2) @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    assert np.allclose(rot("x", 0.6458) @ rot("x", -0.6458), np.eye(3), atol=1e-12)
    with pytest.raises(ValueError):
        rot("w", 1.0)


@pytest.mark.parametrize("axis", "xyz")
@given(theta=angles)
def test_rot_is_proper_rotation(axis, theta):
    r = rot(axis, theta)
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(r) - 1.0) < 1e-12


@pytest.mark.parametrize("axis,vec", [("x", (1, 0, 0)), ("y", (0, 1, 0)), ("z", (0, 0, 1))])
@given(theta=angles)
def test_rot_matches_rodrigues(axis, vec, theta):
    assert np.allclose(rot(axis, theta), oracles.rodrigues(vec, theta), atol=1e-12)


def test_relax_examples():
    m = np.array([0.3, -0.2, -0.7])
    assert np.array_equal(relax_step(m, 0.0, 1.0, 0.1), m)
    assert np.allclose(relax_step(m, 100.0, 1.0, 0.1), [0, 0, 1], atol=1e-9)
    assert math.isclose(relax_step([1, 0, 0], 0.05, 1.0, 0.05)[0], math.exp(-1), rel_tol=1e-12)
    for bad in ((0.0, 0.1), (1.0, -0.1)):
        with pytest.raises(ValueError):
            relax_step(m, 0.01, *bad)
    with pytest.raises(ValueError):
        relax_step(m, -0.01, 1.0, 0.1)


@given(st.tuples(*[st.floats(-1, 1)] * 3), st.floats(0, 5), st.floats(0.01, 5), st.floats(0.001, 2))
def test_relax_contracts_toward_equilibrium(m, dt, t1, t2):
    out = relax_step(m, dt, t1, t2)
    assert math.hypot(out[0], out[1]) <= math.hypot(m[0], m[1]) + 1e-15
    lo, hi = min(m[2], 1.0), max(m[2], 1.0)
    assert lo - 1e-15 <= out[2] <= hi + 1e-15


def test_rf_examples():
    assert np.allclose(rf_matrix(RfPulse(math.pi, 0.0)) @ [0, 0, 1], [0, 0, -1], atol=1e-15)
    assert np.allclose(rf_matrix(RfPulse(math.pi / 2, math.pi / 2)) @ [0, 0, 1], [-1, 0, 0],
                       atol=1e-15)
    assert np.allclose(M_START, [0, 0, -1], atol=1e-15)


@given(st.floats(0.01, math.pi), st.floats(-math.pi, math.pi), st.floats(1e-6, 1e-2))
def test_full_rf_collapses_without_offresonance(alpha, phi, tau):
    p = RfPulse(alpha, phi, tau, 0.0)
    assert np.allclose(rf_matrix(p, False), rf_matrix(p, True), atol=1e-12)


@given(st.floats(0.0, math.pi), st.floats(-math.pi, math.pi), st.tuples(*[st.floats(-1, 1)] * 3))
def test_rf_matches_rodrigues_and_keeps_norm(alpha, phi, m):
    r = rf_matrix(RfPulse(alpha, phi))
    assert np.allclose(r, oracles.rf_oracle(alpha, phi), atol=1e-12)
    assert abs(np.linalg.norm(r @ m) - np.linalg.norm(m)) < 1e-12


def test_rf_errors():
    with pytest.raises(DegeneratePulseError):
        rf_matrix(RfPulse(0.0, 0.0, 1e-3, 10.0), simplified=False)
    with pytest.raises(ValueError):
        rf_matrix(RfPulse(0.5, 0.0, None, 10.0), simplified=False)


def test_evolve_tr_no_precession_before_readout():
    params = TissueParams(1.0, 0.1, 0.0)
    s, _ = evolve_tr([0, 0, 1], RfPulse(math.pi / 2, 0.0), 0.010, 0.005, params)
    # excitation about x by -90 degrees tips z onto +y
    assert abs(s.real) < 1e-15
    assert math.isclose(s.imag, math.exp(-0.005 / 0.1), rel_tol=1e-12)


def test_evolve_tr_fast_transverse_decay():
    s, _ = evolve_tr([0, 0, 1], RfPulse(1.0, 0.3), 0.010, 0.005, TissueParams(1.0, 1e-6, 40.0))
    assert abs(s) < 1e-9


def test_evolve_tr_rejects_bad_te():
    with pytest.raises(ValueError):
        evolve_tr([0, 0, 1], RfPulse(1.0), 0.010, 0.010, TissueParams(1.0, 0.1))


def test_evolve_tr_matches_euler():
    t1, t2, tr, te = 1.0, 0.1, 0.010, 0.005
    s, m = evolve_tr([0, 0, 1], RfPulse(math.pi / 2, 0.0), tr, te, TissueParams(t1, t2, 0.0))
    m1 = oracles.euler_interval(oracles.rf_oracle(math.pi / 2, 0.0) @ [0, 0, 1], te, t1, t2, 0.0)
    assert abs(s - complex(m1[0], m1[1])) < 1e-6
    m2 = oracles.euler_interval(m1, tr - te, t1, t2, 0.0)
    assert np.allclose(m, m2, atol=1e-6)


def test_evolve_tr_with_offresonance_matches_rk4():
    t1, t2, df, tr, te = 0.8, 0.06, 37.0, 0.016, 0.008
    m0 = np.array([0.2, -0.1, 0.6])
    s, m = evolve_tr(m0, RfPulse(0.7, math.pi / 2), tr, te, TissueParams(t1, t2, df))
    a = oracles.rf_oracle(0.7, math.pi / 2) @ m0
    a = (oracles.rk4_propagator(te, t1, t2, df) @ np.append(a, 1))[:3]
    assert abs(s - complex(a[0], a[1])) < 1e-10
    a = (oracles.rk4_propagator(tr - te, t1, t2, df) @ np.append(a, 1))[:3]
    assert np.allclose(m, a, atol=1e-10)


def test_fingerprint_basic(sched):
    p = TissueParams.from_ms(1400, 500, 100)
    a = simulate_fingerprint(p, sched)
    assert a.shape == (500,) and np.all(np.isfinite(a))
    assert np.array_equal(a, simulate_fingerprint(p, sched))
    assert np.allclose(simulate_fingerprint(TissueParams.from_ms(1400, 500, 100, pd=2.5), sched),
                       2.5 * a, rtol=1e-14)


def test_fingerprint_matches_integrator_at_timepoints(sched):
    sig = simulate_fingerprint(TissueParams.from_ms(1400, 500, 100), sched)
    ref = oracles.simulate_oracle(1.4, 0.5, 100.0, sched.flip_deg, sched.phase_deg,
                                  sched.tr_ms, sched.te_ms)
    for j in (0, 100, 499):
        assert abs(sig[j] - ref[j]) < 1e-4


def test_batch_matches_per_tr_loop(short_sched):
    """Compiled batch kernel against the scalar evolve_tr route."""
    sim = Simulator(short_sched)
    params = [(0.9, 0.07, -42.0), (2.5, 0.4, 130.0), (0.3, 0.2, 0.0)]
    got = sim.batch(*np.array(params).T)
    for row, (t1, t2, df) in zip(got, params):
        m = M_START
        ref = []
        for a, p, tr, te in zip(short_sched.flip, short_sched.phase, short_sched.tr, short_sched.te):
            s, m = evolve_tr(m, RfPulse(a, p), tr, te, TissueParams(t1, t2, df))
            ref.append(s)
        assert np.allclose(row, ref, atol=1e-12)


def test_inner_matches_batch(short_sched):
    sim = Simulator(short_sched)
    rng = np.random.default_rng(0)
    q = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    t1, t2, df = np.array([0.5, 1.7]), np.array([0.05, 0.3]), np.array([12.0, -80.0])
    sig = sim.batch(t1, t2, df)
    inner, en = sim.inner(t1, t2, df, q)
    assert np.allclose(inner, (q * sig.conj()).sum(1), rtol=1e-12)
    assert np.allclose(en, (np.abs(sig) ** 2).sum(1), rtol=1e-12)


def test_full_rf_path_near_simplified_for_short_pulse(short_sched):
    p = TissueParams.from_ms(1000, 100, 50)
    # the generated train contains a 0 degree pulse, where the tilt is undefined
    with pytest.raises(DegeneratePulseError):
        simulate_fingerprint(p, short_sched, simplified=False, tau=1e-7)
    s = Schedule(short_sched.flip_deg + 1.0, short_sched.phase_deg, short_sched.tr_ms,
                 short_sched.te_ms)
    a = simulate_fingerprint(p, s)
    b = simulate_fingerprint(p, s, simplified=False, tau=1e-7)
    assert np.abs(a - b).max() < 1e-4
    assert not np.array_equal(a, b)


def test_rf_stack_matches_rf_matrix(short_sched):
    st_ = rf_stack(short_sched)
    for r, a, p in zip(st_, short_sched.flip, short_sched.phase):
        assert np.allclose(r, rf_matrix(RfPulse(a, p)), rtol=0, atol=1e-15)


def test_readout_times(short_sched):
    t = readout_times(short_sched)
    assert math.isclose(t[0], short_sched.te[0])
    assert np.allclose(np.diff(t), short_sched.tr[:-1] - short_sched.te[:-1] + short_sched.te[1:])
