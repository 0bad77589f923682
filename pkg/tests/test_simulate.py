import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticefronts.lattice import Direction, PlaneState, mixed_norm, nagumo_system
from latticefronts.simulate import (COLUMNS, BlowUpError, DenseFamily, FitError, InterfaceData, OutOfTubeError,
                                    Perturbation, ProfileFamily, SimulationConfig, bump, calibrate_speed,
                                    extract_interface, fit_decay, front_plane, init_perturbation,
                                    lagrange_weights, reconstruct, run_experiment, step_rk4)
from latticefronts.wave import ConfigurationError


@pytest.fixture(scope="module")
def data10(front10):
    return InterfaceData(front10)


SMALL = dict(n_half=50, l_count=32, T=20.0, t_relax=30.0)


def test_equilibrium_plane_is_fixed():
    # both clamp values at u = 1 so the constant plane is a genuine equilibrium
    sys = dataclasses.replace(nagumo_system(0.4), u_minus=np.array([1.0]))
    s = PlaneState(-5, np.ones((11, 4, 1)), 0.0)
    out = step_rk4(s, 0.1, sys, Direction(2, 1))
    assert np.max(np.abs(out.values - 1)) == 0
    assert out.time == pytest.approx(0.1)


def test_step_errors():
    sys = nagumo_system(0.4)
    s = PlaneState(-5, np.ones((11, 4, 1)), 0.0)
    with pytest.raises(ConfigurationError):
        step_rk4(s, 0.0, sys, Direction(1, 0))
    big = np.ones((11, 4, 1))
    big[3, 2, 0] = 1e120
    with pytest.raises(BlowUpError) as exc:
        step_rk4(PlaneState(-5, big, 0.0), 0.1, sys, Direction(1, 0))
    assert exc.value.site is not None


def test_rk4_fourth_order(front10):
    sys, d = front10.system, front10.direction
    s0 = front_plane(front10, -30, 30, 4)

    def run(dt, T=4.0):
        s = s0
        for _ in range(int(round(T / dt))):
            s = step_rk4(s, dt, sys, d)
        return s.values

    a, b, c = run(0.2), run(0.1), run(0.05)
    order = math.log2(np.max(np.abs(a - b)) / np.max(np.abs(b - c)))
    assert 3.7 < order < 4.3


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 10), st.floats(-1, 1), st.integers(0, 1000))
def test_lagrange_reproduces_polynomials(k, s, seed):
    r = np.random.default_rng(seed)
    nodes = np.sort(r.uniform(-2, 2, size=k)) + np.arange(k) * 0.3
    coef = r.normal(size=k)
    W, dW = lagrange_weights(np.array([s]), nodes[None, :])
    p = np.polynomial.Polynomial(coef)
    assert W[0] @ p(nodes) == pytest.approx(p(s), abs=1e-7 * (1 + abs(p(s))))
    assert dW[0] @ p(nodes) == pytest.approx(p.deriv()(s), abs=1e-5 * (1 + abs(p.deriv()(s))))
    assert W.sum() == pytest.approx(1.0)


@pytest.fixture(scope="module")
def relaxed(front10):
    """Rows of a relaxed single-column front around a reference step."""
    sys, d = front10.system, front10.direction
    s = front_plane(front10, -20, 70, 1)  # the front moves ~38 sites in t = 20
    dt, K = 0.1, 12
    rows = []
    for k in range(200 + K + 1):
        if k >= 200 - K:
            rows.append(s.values[:, 0].copy())
        s = step_rk4(s, dt, sys, d)
    return np.array(rows), K, dt


def test_dense_family_is_exact_on_its_own_row(relaxed, front10):
    rows, K, dt = relaxed
    c, res = calibrate_speed(rows, -K, dt, front10.c, [-1.0], [1.0])
    assert res < 1e-8
    assert abs(c - front10.c) < 1e-2  # lattice wave vs O(h^2) profile speed
    fam = DenseFamily(rows, -K, dt, c, 0.0, [-1.0], [1.0])
    vals, _ = fam.evaluate(np.zeros(3))
    assert np.array_equal(vals[:, 0], rows[K])
    # one step later the wave has moved by c dt
    vals, dv = fam.evaluate(np.array([c * dt]))
    assert np.max(np.abs(vals[:, 0] - rows[K + 1])) == 0
    with pytest.raises(OutOfTubeError):
        fam.evaluate(np.array([0.0, 50.0]))


def test_init_perturbation(front10):
    s0, n0 = init_perturbation(front10, Perturbation("phase_bump", 0.0), -20, 20, 16)
    assert n0 == 0
    assert np.array_equal(s0.values, front_plane(front10, -20, 20, 16).values)
    b = 0.05 * bump(16, 4)
    s, nv = init_perturbation(front10, Perturbation("phase_bump", 0.05, support=4), -20, 20, 16)
    assert np.allclose(s.values, front_plane(front10, -20, 20, 16, b).values, atol=1e-15)
    lip = np.max(np.abs(front10.derivative()))
    assert 0 < nv <= lip * np.sum(np.abs(b)) * (1 + 1e-12)
    r1, _ = init_perturbation(front10, Perturbation("random_local", 1e-3, seed=5), -20, 20, 16)
    r2, _ = init_perturbation(front10, Perturbation("random_local", 1e-3, seed=5), -20, 20, 16)
    assert np.array_equal(r1.values, r2.values)
    with pytest.raises(ConfigurationError):
        init_perturbation(front10, Perturbation("phase_bump", 0.2))
    with pytest.raises(ConfigurationError):
        init_perturbation(front10, Perturbation("nope", 0.01))


def test_extract_exact_front(front10, data10):
    n = np.arange(-40, 41)
    fam = ProfileFamily(front10, n, 3.0)
    state = PlaneState(-40, fam.evaluate(np.zeros(8))[0], 3.0)
    dec = extract_interface(state, fam, data10)
    assert np.max(np.abs(dec.theta)) == 0
    assert np.max(np.abs(dec.w.values)) == 0


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.1, 0.1))
def test_extract_rigid_translate(front10, data10, a):
    n = np.arange(-40, 41)
    fam = ProfileFamily(front10, n, 0.0)
    state = PlaneState(-40, fam.evaluate(np.full(8, a))[0], 0.0)
    dec = extract_interface(state, fam, data10)
    assert np.max(np.abs(dec.theta - a)) <= 1e-9
    assert dec.constraint_defect <= 1e-8


def test_extract_transverse_wave_and_roundtrip(fronts_g5):
    p = fronts_g5[(2, 1)]
    data = InterfaceData(p)
    n = np.arange(-40, 41)
    L = 64
    th = 0.05 * np.cos(2 * np.pi * np.arange(L) / L)
    fam = ProfileFamily(p, n, 0.0)
    state = PlaneState(-40, fam.evaluate(th)[0], 0.0)
    dec = extract_interface(state, fam, data)
    assert np.max(np.abs(dec.theta - th)) <= 1e-3
    assert dec.constraint_defect <= 1e-8
    assert np.max(np.abs(reconstruct(dec, fam) - state.values)) <= 1e-10
    # a random in-tube frame
    rng = np.random.default_rng(2)
    noisy = state.values + 1e-3 * rng.normal(size=state.values.shape)
    dec = extract_interface(PlaneState(-40, noisy, 0.0), fam, data)
    assert np.max(np.abs(reconstruct(dec, fam) - noisy)) <= 1e-10


def test_out_of_tube(front10, data10):
    n = np.arange(-40, 41)
    fam = ProfileFamily(front10, n, 0.0)
    vals = np.where(np.arange(8)[None, :, None] == 3, 1.0, fam.evaluate(np.zeros(8))[0])
    with pytest.raises(OutOfTubeError) as exc:
        extract_interface(PlaneState(-40, vals, 0.0), fam, data10)
    assert 3 in exc.value.rows


def test_fit_decay_examples():
    t = np.linspace(0, 200, 200)
    f = fit_decay(t, 3.7 * (1 + t) ** -0.75)
    assert f.exponent == pytest.approx(0.75, abs=1e-6) and not f.flagged
    assert fit_decay(t, np.full_like(t, 2.0)).exponent == pytest.approx(0.0, abs=1e-9)
    f = fit_decay(t, np.log1p(t) / (1 + t))
    assert f.exponent < 1 and f.flagged
    assert 0 <= f.r_squared <= 1
    with pytest.raises(FitError):
        fit_decay(t, np.zeros_like(t))


def test_unperturbed_run_is_exactly_zero(front10, data10):
    res = run_experiment(front10, SimulationConfig(perturbation=Perturbation("phase_bump", 0.0), **SMALL),
                         data10)
    for c in COLUMNS[1:]:
        assert np.max(res.table[c]) <= 1e-9


def test_gauge_translate(front10, data10):
    """A rigid translate of the front stays one: theta constant, w ~ 0."""
    cfg = SimulationConfig(perturbation=Perturbation("theta_wave", 0.05, mode=0), **SMALL)
    seen = []
    res = run_experiment(front10, cfg, data10, progress=lambda t, dec: seen.append(dec.theta.copy()))
    th = np.array(seen)
    assert np.max(np.abs(th - 0.05)) <= 1e-8
    assert np.max(res.table["w_pinf"]) <= 1e-8


def test_experiment_invariants(fronts_g5):
    p = fronts_g5[(2, 1)]
    cfg = SimulationConfig(perturbation=Perturbation("phase_bump", 1e-2, support=6), **SMALL)
    res = run_experiment(p, cfg)
    assert res.max_defect <= 1e-8
    assert res.max_roundtrip <= 1e-10
    tab = res.table
    assert np.all(tab["theta_linf"] <= tab["theta_l2"] * (1 + 1e-12))
    assert np.all(tab["thetadiff_linf"] <= tab["thetadiff_l2"] * (1 + 1e-12))
    assert np.all(tab["w_pinf"] <= tab["w_p2"] * (1 + 1e-12))
    assert tab["theta_linf"][-1] < tab["theta_linf"][0]


def test_random_perturbation_relaxes_to_translates(front10, data10):
    cfg = SimulationConfig(perturbation=Perturbation("random_local", 1e-3, seed=1), **SMALL)
    spread = []
    run_experiment(front10, cfg, data10,
                   progress=lambda t, dec: spread.append(np.ptp(dec.theta) + mixed_norm(dec.w, "inf", "inf")))
    later = np.array(spread[5:])
    assert np.all(np.diff(later) <= 1e-6 * later[0])
