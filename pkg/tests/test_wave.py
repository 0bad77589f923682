import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from latticefronts.lattice import CubicNagumo, Direction, nagumo_system
from latticefronts.wave import (ConfigurationError, NonConvergenceError, ProfileGrid, WaveProfile,
                                assemble_residual, continuation, is_pinned, load_profile,
                                pinning_threshold, save_profile, solve_wave, tanh_guess,
                                translation_mode)


def _profile(values, c, rho=0.3, d=(1, 0), gamma=1e-6, L=10.0, h=0.1):
    return WaveProfile(ProfileGrid(L, h), values, c, gamma, nagumo_system(rho),
                       Direction(*d).shifts(), "integer", Direction(*d), rho)


def test_grid_rejects_bad_spacing():
    with pytest.raises(ConfigurationError):
        ProfileGrid(40.0, 0.3)


@given(st.floats(-2, 2), st.floats(-0.9, 0.9))
@settings(max_examples=20, deadline=None)
def test_equilibrium_residual_vanishes(c, rho):
    g = ProfileGrid(10.0, 0.1)
    R, _ = assemble_residual(_profile(np.ones((g.size, 1)), c, rho))
    assert np.max(np.abs(R)) < 1e-13


def test_odd_profile_gives_odd_residual():
    g = ProfileGrid(10.0, 0.1)
    v = np.tanh(g.xi)[:, None]
    R, _ = assemble_residual(_profile(v, 0.0, rho=0.0))
    assert np.allclose(R, -R[::-1], atol=1e-13)


@pytest.mark.parametrize("d", [(1, 0), (2, 1)])
def test_symmetric_double_well_stands(d):
    t0 = time.perf_counter()
    p = solve_wave(0.0, Direction(*d), 1e-6)
    assert time.perf_counter() - t0 < 10
    assert abs(p.c) <= 1e-8
    assert np.max(np.abs(p.values[:, 0] + p.values[::-1, 0])) <= 1e-7


def test_converged_front_invariants(front10):
    R, phase = assemble_residual(front10)
    assert np.max(np.abs(R)) < 1e-9
    assert abs(phase) < 1e-12
    assert front10.values[0, 0] == -1 and front10.values[-1, 0] == 1
    v = front10.values[:, 0]
    dv = np.diff(v)
    assert dv.min() > -1e-15  # tails saturate to +-1 in floating point
    core = np.abs(v[:-1]) < 1 - 1e-9
    assert np.all(dv[core] > 0)


def test_speed_sign_matches_lattice_simulation(front10):
    """The -1 state invades for rho > 0: the front moves toward +n, so c < 0."""
    g = CubicNagumo(0.9)
    n = np.arange(-100, 101)

    def rhs(_, u):
        up = np.r_[u[1:], 1.0]
        um = np.r_[-1.0, u[:-1]]
        return up + um - 2 * u + g.g(u)

    sol = solve_ivp(rhs, (0, 30), np.tanh(n / 2.0), t_eval=[10.0, 30.0], rtol=1e-10, atol=1e-12)
    pos = [np.interp(0.0, sol.y[:, k], n) for k in range(2)]
    v = (pos[1] - pos[0]) / 20.0
    assert np.sign(front10.c) == -np.sign(v)
    assert abs(front10.c + v) < 1e-2  # O(h^2) profile discretization error


def test_speed_monotone_along_continuation():
    rhos = np.round(np.arange(0.1, 0.91, 0.1), 3)
    cs = np.array([p.c for p in continuation(rhos, Direction(1, 0), 1e-6)])
    assert np.all(np.diff(np.abs(cs)) > 0)
    assert np.all(cs < 0)


def test_grid_refinement_second_order():
    cs = [solve_wave(0.9, Direction(1, 0), 1e-6, 40.0, h).c for h in (0.1, 0.05, 0.025)]
    order = np.log2(abs(cs[0] - cs[1]) / abs(cs[1] - cs[2]))
    assert order >= 1.8


def test_shifted_guess_same_solution(front10):
    g = tanh_guess(front10.grid, front10.system)
    q = solve_wave(0.9, Direction(1, 0), 1e-6, initial_guess=np.roll(g, 1, axis=0))
    assert abs(q.c - front10.c) < 1e-9
    assert np.max(np.abs(q.values - front10.values)) < 1e-8


def test_translation_mode(front10, fronts_g5):
    for p in [front10, *fronts_g5.values()]:
        t, res = translation_mode(p)
        assert res <= 1e-6
        ref = p.derivative()
        cosang = abs(np.vdot(ref, t)) / (np.linalg.norm(ref) * np.linalg.norm(t))
        assert cosang > 0.999


def test_rejects_zero_gamma_and_long_shift():
    with pytest.raises(ConfigurationError):
        solve_wave(0.5, Direction(1, 0), 0.0)
    with pytest.raises(ConfigurationError):
        solve_wave(0.5, Direction(3, 2), 1e-6, L=2.0)


def test_newton_failure_reports_residual():
    g = ProfileGrid(40.0, 0.1)
    with pytest.raises(NonConvergenceError) as exc:
        solve_wave(0.9, Direction(1, 0), 1e-6, initial_guess=np.cos(g.xi)[:, None], max_iter=3)
    assert exc.value.residual > 0


def test_profile_file_roundtrip(tmp_path, fronts_g5):
    p = fronts_g5[(2, 1)]
    save_profile(tmp_path / "w.txt", p)
    q = load_profile(tmp_path / "w.txt")
    assert q.c == p.c and q.gamma == p.gamma and q.direction == p.direction
    assert np.array_equal(q.values, p.values)
    assert tuple((tmp_path / "w.txt").read_text().split("\n")[0].split()[-2:]) == ("integer", "1")


def test_pinning_bracket():
    lo, hi, branch = pinning_threshold(Direction(1, 0), 1e-6)
    assert 0 < lo < hi < 1 and hi - lo <= 1e-4
    rho, c = np.array(branch).T
    assert np.all(np.abs(c) >= 1e-3)
    assert np.all(np.diff(np.abs(c)) > 0)
    assert is_pinned(None, 1e-3)
    # above the bracket a travelling front, at its lower end a pinned one
    assert not is_pinned(solve_wave(hi, Direction(1, 0), 1e-6), 1e-3)


def test_pinning_threshold_drops_with_gamma():
    lo6, hi6, _ = pinning_threshold(Direction(1, 0), 1e-6)
    lo4, hi4, _ = pinning_threshold(Direction(1, 0), 1e-4)
    assert hi4 <= hi6 and lo4 <= lo6
