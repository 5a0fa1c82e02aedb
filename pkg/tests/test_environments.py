import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sympolicy.environments import (
    CSTR_RANGES,
    PRESETS,
    AcrobotParams,
    CSTRParams,
    ObservationModel,
    SHOParams,
    acrobot_drift,
    acrobot_energy,
    acrobot_terms,
    check_termination,
    cstr_drift,
    cstr_step,
    get_experiment,
    observe,
    sample_trial,
    sho_drift,
    wrap_angle,
)
from sympolicy.exprtree import ACROBOT_OPERATORS, CSTR_OPERATORS, SHO_OPERATORS


def test_sho_drift_examples():
    p = SHOParams(1.0, 0.0)
    np.testing.assert_array_equal(sho_drift(p, [1, 0], 0), [0, -1])
    np.testing.assert_array_equal(sho_drift(p, [0, 0], 0), [0, 0])
    np.testing.assert_array_equal(sho_drift(p, [0, 0], 1), [0, 1])


@given(st.floats(0, 2), st.floats(0, 1.5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_sho_drift_is_linear(omega, zeta, x1, x2, u):
    p = SHOParams(omega, zeta)
    np.testing.assert_allclose(sho_drift(p, [x1, x2], u), p.A @ [x1, x2] + p.b * u, atol=1e-12)


def test_sho_params_validated():
    with pytest.raises(ValueError):
        SHOParams(-1.0, 0.0)


def _acrobot_oracle(x, u=0.0, m1=1, m2=1, l1=1, lc1=0.5, lc2=0.5, I1=1, I2=1, g=9.81):
    th1, th2, w1, w2 = x
    d1 = m1 * lc1 ** 2 + m2 * (l1 ** 2 + lc2 ** 2 + 2 * l1 * lc2 * np.cos(th2)) + I1 + I2
    d2 = m2 * (lc2 ** 2 + l1 * lc2 * np.cos(th2)) + I2
    phi2 = m2 * lc2 * g * np.sin(th1 + th2)
    phi1 = -m2 * l1 * lc2 * np.sin(th2) * (w2 ** 2 + 2 * w1 * w2) + (m1 * lc1 + m2 * l1) * g * np.sin(th1) + phi2
    acc2 = (u + d2 / d1 * phi1 - m2 * l1 * lc2 * w1 ** 2 * np.sin(th2) - phi2) / (m2 * lc2 ** 2 + I2 - d2 ** 2 / d1)
    acc1 = -(d2 * acc2 + phi1) / d1
    return d1, d2, phi1, phi2, np.array([w1, w2, acc1, acc2])


def test_acrobot_d1_at_straight_link():
    d1, *_ = acrobot_terms(AcrobotParams(), [0.3, 0.0, 0.0, 0.0])
    assert d1 == pytest.approx(4.5)


@given(st.tuples(*[st.floats(-4, 4)] * 4), st.floats(-1, 1))
def test_acrobot_matches_transcription(x, u):
    p = AcrobotParams()
    d1, d2, phi1, phi2, f = _acrobot_oracle(x, u)
    np.testing.assert_allclose(acrobot_terms(p, x), (d1, d2, phi1, phi2), rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(acrobot_drift(p, x, [u]), f, rtol=1e-10, atol=1e-10)


def test_acrobot_rest_is_equilibrium():
    np.testing.assert_allclose(acrobot_drift(AcrobotParams(), [0, 0, 0, 0], [0]), 0, atol=1e-12)


def test_acrobot_second_control_enters_first_link():
    p = AcrobotParams(two_controls=True)
    x = [0.1, -0.2, 0.3, 0.0]
    a = acrobot_drift(p, x, [0.0, 0.0])
    b = acrobot_drift(p, x, [0.0, 1.0])
    d1, *_ = acrobot_terms(p, x)
    assert b[3] == a[3]
    assert b[2] - a[2] == pytest.approx(1.0 / d1)


@pytest.mark.parametrize("dt", [1e-4])
def test_acrobot_energy_conserved(dt):
    p = AcrobotParams()
    x = np.array([1.0, -0.5, 0.0, 0.0])
    e0 = acrobot_energy(p, x)
    drifts = []
    for h in (dt, dt / 2):
        y = x.copy()
        for _ in range(int(round(1.0 / h))):
            y = y + acrobot_drift(p, y, [0.0]) * h
        drifts.append(abs(acrobot_energy(p, y) - e0))
    assert drifts[0] < 0.05 * abs(e0) + 0.05
    assert 0.4 < drifts[1] / drifts[0] < 0.6  # first-order energy error


def test_cstr_rate():
    k = 7.2e10 * math.exp(-72750 / (8.314 * 400))
    assert CSTRParams().rate(400.0) == pytest.approx(k)
    assert k == pytest.approx(22.6, abs=0.2)


def test_cstr_examples():
    p = CSTRParams()
    f = cstr_drift(p, [p.c_f, 1e-3, 300.0], 0.0)
    assert f[0] == pytest.approx(0.0, abs=1e-12)
    f = cstr_drift(p, [0.5, p.T_cf, p.T_cf], 150.0)
    assert f[2] == pytest.approx(0.0, abs=1e-12)


def test_cstr_reaction_consumes():
    p = CSTRParams()
    x = [0.8, 420.0, 300.0]
    no_flow = CSTRParams(q_r=1e-12)
    assert cstr_drift(no_flow, x, 0)[0] < 0
    assert cstr_drift(CSTRParams(reaction_sign=1.0), x, 0)[0] > cstr_drift(p, x, 0)[0]


def test_cstr_control_clipped():
    p = CSTRParams()
    x = [0.8, 400.0, 350.0]
    np.testing.assert_array_equal(cstr_drift(p, x, 1000.0), cstr_drift(p, x, 300.0))
    np.testing.assert_array_equal(cstr_drift(p, x, -5.0), cstr_drift(p, x, 0.0))


def test_cstr_params_validated():
    with pytest.raises(ValueError):
        CSTRParams(dH=1.0)
    with pytest.raises(ValueError):
        CSTRParams(V_r=0.0)


@pytest.mark.parametrize("x", [[0.9, 360.0, 290.0], [0.5, 450.0, 300.0], [0.7, 380.0, 400.0]])
def test_cstr_step_converges_to_drift_flow(x):
    """The exponential reaction step is first order against a very fine explicit Euler."""
    p = CSTRParams()
    T, fine = 0.05, 200_000
    ref = np.array(x, dtype=float)
    for _ in range(fine):
        ref = ref + cstr_drift(p, ref, 120.0) * (T / fine)
    errs = []
    for dt in (2e-3, 1e-3, 5e-4):
        y = np.array(x, dtype=float)
        for _ in range(int(round(T / dt))):
            y = cstr_step(p, y, 120.0, dt)
        errs.append(np.abs(y - ref).max())
    assert errs[-1] < 0.5
    for coarse, finer in zip(errs, errs[1:]):
        assert 0.4 < finer / coarse < 0.6


def test_cstr_step_stable_in_runaway():
    p = CSTRParams(V_r=75.0, q_r=125.0, dH=-55000.0, C_p=0.2, UA=25000.0)
    x = np.array([1.0, 600.0, 300.0])
    for _ in range(200):
        x = cstr_step(p, x, 0.0, 0.01)
        assert np.isfinite(x).all() and x[0] >= 0


def test_observe_identity_noiseless(rng):
    m = ObservationModel(np.eye(3), [0, 0, 0], [False] * 3)
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(observe(m, x, rng), x)


def test_observation_noise_scale(rng):
    m = ObservationModel(np.eye(2), [0.3, 0.3], [False, False])
    y = observe(m, np.zeros((200_000, 2)), rng)
    np.testing.assert_allclose(y.var(axis=0), 0.3, rtol=0.02)


def test_observation_model_validated():
    with pytest.raises(ValueError):
        ObservationModel(np.eye(2), [-1, 0], [False, False])
    with pytest.raises(ValueError):
        ObservationModel(np.eye(2), [1], [False, False])


@given(st.floats(-1e3, 1e3))
def test_wrap_idempotent(theta):
    w = wrap_angle(theta)
    assert -math.pi <= w < math.pi
    assert wrap_angle(w) == pytest.approx(w, abs=1e-12)
    assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)


def test_acrobot_observation_wrapped(rng):
    m = get_experiment("acrobot-noise").observation
    y = m.apply(np.array([[7.0, -9.0, 12.0, -30.0]]), np.zeros((1, 4)))
    assert np.all(np.abs(y[0, :2]) <= math.pi)
    np.testing.assert_array_equal(y[0, 2:], [12.0, -30.0])


@pytest.mark.parametrize("eid", sorted(PRESETS))
def test_trial_supports(eid):
    exp = get_experiment(eid)
    n = 20_000 if exp.env != "cstr" else 5_000
    rngs = np.random.default_rng(7)
    trials = [sample_trial(exp, rngs, i) for i in range(n)]
    x0 = np.array([t.x0 for t in trials])
    if exp.env == "sho":
        xs = np.array([t.xstar[0] for t in trials])
        assert np.all(np.abs(xs) <= 3)
        assert all(t.target[1] == 0 for t in trials)
        np.testing.assert_allclose(x0.var(axis=0), [3.0, 1.0], rtol=0.05)
        om = np.array([t.params.omega for t in trials])
        ze = np.array([t.params.zeta for t in trials])
        if exp.vary_params:
            assert om.min() >= 0 and om.max() <= 2 and ze.min() >= 0 and ze.max() <= 1.5
        else:
            assert np.all(om == 1) and np.all(ze == 0)
    elif exp.env == "acrobot":
        assert np.all(np.abs(x0) < 0.1)
    else:
        lo = np.array([0.5, 350.0, 275.0])
        hi = np.array([1.0, 375.0, 300.0])
        assert np.all((x0 > lo) & (x0 < hi))
        sp = np.array([t.xstar[0] for t in trials])
        assert sp.min() >= 400 and sp.max() <= 500
        for name, (a, b) in CSTR_RANGES.items():
            v = np.array([getattr(t.params, name) for t in trials])
            assert v.min() >= a and v.max() <= b


def test_termination_examples():
    assert check_termination("acrobot-noise", [math.pi, 0, 0, 0]) == "success"
    assert check_termination("acrobot-noise", [0, 0, 0, 0]) == "continue"
    assert check_termination("acrobot-noise", [0, 0, 8 * math.pi + 0.1, 0]) == "abort"
    assert check_termination("acrobot-noise", [0, 0, -8 * math.pi - 0.1, 0]) == "abort"
    assert check_termination("acrobot-noise", [0, 0, 0, 18 * math.pi + 0.1]) == "abort"
    assert check_termination("sho-noise", [100, 100]) == "continue"


# preset rows of the GP hyperparameter table
PRESET_ROWS = {
    "sho-noise": (500, 30, 2, SHO_OPERATORS),
    "sho-partial": (500, 50, 2, SHO_OPERATORS),
    "sho-varying": (1000, 100, 2, SHO_OPERATORS),
    "acrobot-noise": (500, 50, 2, ACROBOT_OPERATORS),
    "acrobot-partial": (500, 50, 2, ACROBOT_OPERATORS),
    "acrobot-two-u": (1000, 50, 3, ACROBOT_OPERATORS),
    "cstr": (1000, 100, 2, CSTR_OPERATORS),
}


@pytest.mark.parametrize("eid", sorted(PRESET_ROWS))
def test_preset_audit(eid):
    exp = get_experiment(eid)
    assert (exp.population_size, exp.generations, exp.latent_size, exp.operators) == PRESET_ROWS[eid]


def test_observation_settings():
    for eid in ("sho-noise", "sho-varying", "acrobot-noise", "acrobot-two-u"):
        obs = get_experiment(eid).observation
        np.testing.assert_array_equal(obs.D, np.eye(obs.dim))
        np.testing.assert_array_equal(obs.sigma, 0.3)
    cstr = get_experiment("cstr").observation
    np.testing.assert_array_equal(cstr.D, [[0, 1, 0], [0, 0, 1]])
    np.testing.assert_array_equal(cstr.sigma, [7.5, 7.5])


def test_unknown_experiment():
    with pytest.raises(KeyError):
        get_experiment("pendulum")
