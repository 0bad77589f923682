"""Travelling-wave profiles of the regularized mixed-type equation.

Solves, on a uniform grid xi_k = -L + k h,

    c Phi'(xi) = gamma Phi''(xi) + f(Phi(xi+r1), Phi(xi+r2), Phi(xi-r1), Phi(xi-r2), Phi(xi))

for (Phi, c) by Newton on the bordered system with phase condition
Phi(0) = (u_- + u_+)/2 (first component).  Values beyond +-L are clamped to
u_-+.  With integer shifts and 1/h integer every shift lands on a node;
normalized shifts (cos theta, sin theta) use 4-point cubic interpolation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .lattice import Direction, ReactionSystem, nagumo_system

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(f"{msg} (last residual {residual:.3e})")
        self.residual = residual


class ThresholdNotFoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProfileGrid:
    L: float = 40.0
    h: float = 0.1

    def __post_init__(self):
        if self.h <= 0 or self.L <= 0:
            raise ConfigurationError("grid needs L > 0 and h > 0")
        inv = 1.0 / self.h
        if abs(inv - round(inv)) > 1e-9:
            raise ConfigurationError(f"1/h = {inv} must be an integer")
        if abs(self.L / self.h - round(self.L / self.h)) > 1e-9:
            raise ConfigurationError("L must be a multiple of h")

    @property
    def size(self) -> int:
        return int(round(2 * self.L / self.h)) + 1

    @property
    def center(self) -> int:
        return int(round(self.L / self.h))

    @property
    def xi(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.size)

    def shift_matrix(self, r: float) -> sp.csr_matrix:
        """Sparse (N, N) map Phi -> Phi(xi_k + r), with clamping past the ends."""
        N = self.size
        x = np.arange(N) + r / self.h
        near = np.round(x)
        if abs(r / self.h - round(r / self.h)) < 1e-9:
            cols = np.clip(near.astype(int), 0, N - 1)
            return sp.csr_matrix((np.ones(N), (np.arange(N), cols)), shape=(N, N))
        base = np.floor(x).astype(int)
        t = x - base
        # Lagrange weights on nodes base-1 .. base+2
        w = np.stack([
            -t * (t - 1) * (t - 2) / 6,
            (t + 1) * (t - 1) * (t - 2) / 2,
            -(t + 1) * t * (t - 2) / 2,
            (t + 1) * t * (t - 1) / 6,
        ], axis=1)
        rows = np.repeat(np.arange(N), 4)
        cols = np.clip((base[:, None] + np.arange(-1, 3)[None, :]).ravel(), 0, N - 1)
        return sp.csr_matrix((w.ravel(), (rows, cols)), shape=(N, N))

    def diff_matrices(self, upwind: int = 0):
        """First and second difference matrices (rows at the ends are zero).

        ``upwind`` = 0 gives the centered first difference; +1 / -1 give the
        second-order one-sided difference drawing on nodes to the right / left
        (centered on the node next to the boundary).
        """
        N, h = self.size, self.h
        k = np.arange(1, N - 1)
        if upwind == 0:
            D = sp.csr_matrix(
                (np.r_[np.full(N - 2, -0.5 / h), np.full(N - 2, 0.5 / h)],
                 (np.r_[k, k], np.r_[k - 1, k + 1])), shape=(N, N))
        else:
            s = upwind
            far = k[(k + 2 * s >= 0) & (k + 2 * s <= N - 1)]
            edge = np.setdiff1d(k, far)
            rows = np.r_[far, far, far, edge, edge]
            cols = np.r_[far, far + s, far + 2 * s, edge - 1, edge + 1]
            vals = np.r_[np.full(far.size, -1.5 * s / h), np.full(far.size, 2.0 * s / h),
                         np.full(far.size, -0.5 * s / h),
                         np.full(edge.size, -0.5 / h), np.full(edge.size, 0.5 / h)]
            D = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        D2 = sp.csr_matrix(
            (np.r_[np.full(N - 2, 1 / h**2), np.full(N - 2, -2 / h**2), np.full(N - 2, 1 / h**2)],
             (np.r_[k, k, k], np.r_[k - 1, k, k + 1])), shape=(N, N))
        return D, D2


UPWIND_BLEND_SPEED = 0.05


def _upwind_weight(c: float, scheme: str):
    if scheme != "upwind" or c == 0:
        return 0.0, 0.0
    e = math.exp(-((c / UPWIND_BLEND_SPEED) ** 2))
    return 1.0 - e, 2.0 * c / UPWIND_BLEND_SPEED**2 * e


def _block_diag(blocks: np.ndarray) -> sp.csr_matrix:
    """Sparse block-diagonal matrix from an (N, d, d) array."""
    N, d, _ = blocks.shape
    if d == 1:
        return sp.diags(blocks[:, 0, 0]).tocsr()
    return sp.bsr_matrix((blocks, np.arange(N), np.arange(N + 1)), shape=(N * d, N * d)).tocsr()


def _kron_id(S, d):
    return S if d == 1 else sp.kron(S, sp.identity(d), format="csr")


@dataclass
class WaveProfile:
    grid: ProfileGrid
    values: np.ndarray  # (N, d)
    c: float
    gamma: float
    system: ReactionSystem
    shifts: tuple[float, float]
    shift_mode: str = "integer"
    direction: Direction | None = None
    rho: float = float("nan")
    scheme: str = "upwind"
    info: dict = field(default_factory=dict)

    @property
    def xi(self):
        return self.grid.xi

    @property
    def d(self):
        return self.system.d

    def operators(self):
        return Operators.for_profile(self)

    def derivative(self) -> np.ndarray:
        """Centered-difference Phi' on all nodes (one-sided zero at the ends)."""
        v = self.values
        out = np.zeros_like(v)
        out[1:-1] = (v[2:] - v[:-2]) / (2 * self.grid.h)
        return out

    def interpolant(self) -> "ProfileInterpolant":
        return ProfileInterpolant(self)

    def residual(self) -> np.ndarray:
        return assemble_residual(self)[0]


class Operators:
    """Grid operators shared by residual, Jacobian and the frequency operators."""

    _cache: dict = {}

    def __init__(self, grid: ProfileGrid, shifts, d: int):
        r1, r2 = shifts
        self.grid, self.d = grid, d
        self.offsets = (r1, r2, -r1, -r2, 0.0)
        for r in self.offsets:
            if abs(r) > grid.L:
                raise ConfigurationError(f"shift {r} exceeds half-length L={grid.L}")
        self.S = [grid.shift_matrix(r) for r in self.offsets]
        self.D, self.D2 = grid.diff_matrices()
        self._Dup = {s: grid.diff_matrices(s)[0] for s in (-1, 1)}
        self.Sd = [_kron_id(S, d) for S in self.S]
        self.D2d = _kron_id(self.D2, d)
        self._Dd = {0: _kron_id(self.D, d)}
        self._Dd.update({s: _kron_id(m, d) for s, m in self._Dup.items()})
        N = grid.size
        self.interior = np.arange(d, (N - 1) * d)  # flat indices of interior nodes

    @classmethod
    def for_profile(cls, p: WaveProfile) -> "Operators":
        key = (p.grid, tuple(p.shifts), p.d)
        if key not in cls._cache:
            if len(cls._cache) > 16:
                cls._cache.clear()
            cls._cache[key] = cls(p.grid, p.shifts, p.d)
        return cls._cache[key]

    def first_difference(self, c: float, scheme: str, *, kron: bool = False):
        """Difference matrix for the c Phi' term.

        The upwind scheme blends the centered difference into the one-sided
        one reading from the side the wave comes from (larger xi when c < 0);
        this damps the grid-scale checkerboard mode that the centered
        difference cannot see.  The blend weight 1 - exp(-(c/c0)^2) keeps
        c -> c D(c) twice differentiable through c = 0.
        """
        table = self._Dd if kron else {0: self.D, **self._Dup}
        w, _ = _upwind_weight(c, scheme)
        if w == 0.0:
            return table[0]
        side = 1 if c < 0 else -1
        return table[0] + w * (table[side] - table[0])

    def speed_column(self, values: np.ndarray, c: float, scheme: str) -> np.ndarray:
        """d/dc of the residual -c D(c) Phi on all nodes."""
        col = -(self.first_difference(c, scheme) @ values)
        w, dw = _upwind_weight(c, scheme)
        if dw != 0.0:
            side = 1 if c < 0 else -1
            col -= c * dw * ((self._Dup[side] - self.D) @ values)
        return col

    def stencil(self, values: np.ndarray) -> np.ndarray:
        """tau Phi on every node: array (5, N, d)."""
        return np.stack([S @ values for S in self.S])


def assemble_residual(profile: WaveProfile):
    """Residual on interior nodes (flattened) and the phase-condition defect."""
    ops = profile.operators()
    v = profile.values
    tau = ops.stencil(v)
    F = profile.system.f(tau)
    D = ops.first_difference(profile.c, profile.scheme)
    R = -profile.c * (D @ v) + profile.gamma * (ops.D2 @ v) + F
    mid = 0.5 * (profile.system.u_minus[0] + profile.system.u_plus[0])
    phase = v[profile.grid.center, 0] - mid
    return R[1:-1].ravel(), phase


def _jacobian(profile: WaveProfile, ops: Operators):
    """Sparse Jacobian of the full-node residual w.r.t. full-node values."""
    tau = ops.stencil(profile.values)
    blocks = profile.system.df(tau)  # (5, N, d, d)
    J = -profile.c * ops.first_difference(profile.c, profile.scheme, kron=True)
    J = J + profile.gamma * ops.D2d
    for j in range(5):
        J = J + _block_diag(blocks[j]) @ ops.Sd[j]
    return J.tocsr()


def linearization(profile: WaveProfile) -> np.ndarray:
    """Dense Jacobian of the interior residual w.r.t. interior values."""
    ops = profile.operators()
    J = _jacobian(profile, ops)
    idx = ops.interior
    return J[idx][:, idx].toarray()


def bordered_matrix(profile: WaveProfile) -> np.ndarray:
    ops = profile.operators()
    A = linearization(profile)
    m = A.shape[0]
    col = ops.speed_column(profile.values, profile.c, profile.scheme)[1:-1].ravel()
    B = np.zeros((m + 1, m + 1))
    B[:m, :m] = A
    B[:m, m] = col
    B[m, (profile.grid.center - 1) * profile.d] = 1.0
    return B


def translation_mode(profile: WaveProfile) -> tuple[np.ndarray, float]:
    """Discrete counterpart of Phi' spanning the kernel of the linearization.

    The centered difference of Phi only annihilates the linearization up to
    O(h^2).  Instead take the tangent t of the discrete solution family: solve
    the bordered system [J, dR/dc; e_0^T, 0] (t, mu) = (0, 1) and rescale t to
    best match the centered Phi'.  Then J t = -mu dR/dc, and mu is tiny because
    the grid breaks translation invariance only weakly.  Returns the mode on
    all nodes (zero at the ends) and the relative residual |J t| / |t|.
    """
    B = bordered_matrix(profile)
    m = B.shape[0] - 1
    rhs = np.zeros(m + 1)
    rhs[m] = 1.0
    sol = np.linalg.solve(B, rhs)
    t = np.zeros_like(profile.values)
    t[1:-1] = sol[:m].reshape(-1, profile.d)
    ref = profile.derivative()
    t *= np.vdot(ref, t) / np.vdot(t, t)
    res = B[:m, :m] @ t[1:-1].ravel()
    return t, float(np.max(np.abs(res)) / np.max(np.abs(t)))


def tanh_guess(grid: ProfileGrid, system: ReactionSystem, offset: float = 0.0, width: float = 1.0):
    s = 0.5 * (1 + np.tanh((grid.xi - offset) / width))
    return system.u_minus[None, :] + s[:, None] * (system.u_plus - system.u_minus)[None, :]


def newton_solve(profile: WaveProfile, tol: float = 1e-10, max_iter: int = 50,
                 res_tol: float = 1e-9) -> WaveProfile:
    """Newton iteration on (interior Phi, c); returns a new converged profile."""
    p = replace(profile, values=profile.values.copy())
    d = p.d
    p.values[0] = p.system.u_minus
    p.values[-1] = p.system.u_plus
    odd = p.c == 0.0 and _is_odd_problem(p)
    res, ph = assemble_residual(p)
    rnorm = max(np.max(np.abs(res)), abs(ph))
    for it in range(max_iter):
        B = bordered_matrix(p)
        rhs = -np.r_[res, ph]
        try:
            step = sla.lu_solve(sla.lu_factor(B, check_finite=False), rhs, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise NonConvergenceError(f"singular bordered Jacobian: {exc}", rnorm)
        if not np.all(np.isfinite(step)):
            raise NonConvergenceError("non-finite Newton step", rnorm)
        if odd:
            # exact steps stay in the odd subspace with c = 0; drop roundoff
            full = np.zeros_like(p.values)
            full[1:-1] = step[:-1].reshape(-1, d)
            step[:-1] = (0.5 * (full - full[::-1]))[1:-1].ravel()
            step[-1] = 0.0
        # damped step: halve until the residual does not blow up
        lam = 1.0
        while True:
            trial = replace(p, values=p.values.copy(), c=p.c + lam * step[-1])
            trial.values[1:-1] += lam * step[:-1].reshape(-1, d)
            tres, tph = assemble_residual(trial)
            tnorm = max(np.max(np.abs(tres)), abs(tph))
            if tnorm <= max(rnorm, 1e-12) * (1 - 1e-4 * lam) or lam < 1 / 64 or tnorm < res_tol:
                break
            lam *= 0.5
        p, res, ph, rnorm = trial, tres, tph, tnorm
        upd = lam * np.max(np.abs(step))
        log.debug("newton it=%d |res|=%.3e |step|=%.3e c=%.12f", it, rnorm, upd, p.c)
        if upd < tol and rnorm < res_tol:
            p.info = {**p.info, "newton_iterations": it + 1, "residual": rnorm}
            return p
    raise NonConvergenceError(f"Newton did not converge in {max_iter} iterations", rnorm)


def _is_odd_problem(p: WaveProfile) -> bool:
    """Reflection xi -> -xi, u -> -u maps the problem to itself (forcing c = 0)."""
    sysm = p.system
    if not np.allclose(sysm.u_minus, -sysm.u_plus, atol=1e-14):
        return False
    if not np.allclose(p.values, -p.values[::-1], atol=1e-12):
        return False
    pts = np.random.default_rng(1).uniform(-1.5, 1.5, size=(5, 8, sysm.d))
    return bool(np.allclose(sysm.f(-pts), -sysm.f(pts), atol=1e-13))


def solve_wave(rho: float | None = None, direction: Direction | None = None, gamma: float = 1e-6,
               L: float = 40.0, h: float = 0.1, initial_guess=None, *, c0: float = 0.0,
               shift_mode: str = "integer", shifts=None, system: ReactionSystem | None = None,
               scheme: str = "upwind", tol: float = 1e-10, max_iter: int = 50) -> WaveProfile:
    """Solve for a front (Phi, c) travelling in ``direction`` (or along ``shifts``).

    ``initial_guess`` may be an (N, d) array, a WaveProfile (continuation) or
    None for a tanh ramp.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be > 0; the singular limit is not handled")
    if system is None:
        if rho is None:
            raise ConfigurationError("need rho or an explicit reaction system")
        system = nagumo_system(rho)
    grid = ProfileGrid(L, h)
    if isinstance(direction, (tuple, list, str)):
        direction = Direction(*direction) if not isinstance(direction, str) else Direction.parse(direction)
    if shifts is None:
        if direction is None:
            raise ConfigurationError("need a direction or explicit shifts")
        shifts = direction.shifts(shift_mode)
    elif shift_mode == "integer" and any(abs(s - round(s)) > 1e-12 for s in shifts):
        raise ConfigurationError("integer shift mode needs integer shifts")
    if isinstance(initial_guess, WaveProfile):
        c0 = initial_guess.c
        initial_guess = initial_guess.values
    values = tanh_guess(grid, system) if initial_guess is None else np.array(initial_guess, float)
    values = values.reshape(grid.size, system.d)
    p = WaveProfile(grid, values, c0, gamma, system, tuple(float(s) for s in shifts),
                    shift_mode, direction, float(rho) if rho is not None else float("nan"),
                    scheme)
    return newton_solve(p, tol=tol, max_iter=max_iter)


def continuation(rhos, direction=None, gamma=1e-6, L=40.0, h=0.1, start=None, *,
                 shift_mode="integer", shifts=None, min_step=1e-4, on_failure="raise"):
    """Natural-parameter continuation in rho with step halving on failure.

    Returns a list of converged profiles, one per requested rho value.
    """
    out = []
    prev = start
    for target in rhos:
        if prev is None:
            prev = solve_wave(target, direction, gamma, L, h, shift_mode=shift_mode, shifts=shifts)
            out.append(prev)
            continue
        rho = prev.rho
        step = target - rho
        while abs(target - rho) > 1e-14:
            trial_rho = rho + step if abs(step) < abs(target - rho) else target
            try:
                cur = solve_wave(trial_rho, direction, gamma, L, h, prev,
                                 shift_mode=shift_mode, shifts=shifts)
            except NonConvergenceError:
                step /= 2
                if abs(step) < min_step:
                    if on_failure == "stop":
                        return out
                    raise
                continue
            prev, rho = cur, trial_rho
        out.append(prev)
    return out


def is_pinned(profile: WaveProfile | None, c_tol: float, mono_tol: float = 1e-4) -> bool:
    """Pinning test used by the threshold search.

    A solve counts as pinned when Newton failed (``profile is None``), when
    |c| < c_tol, or, for scalar fronts, when the profile has stopped being
    monotone.  The last case matters on coarse grids: below the threshold the
    exact regularized profile is a staircase whose jumps are far narrower than
    h, and the discrete problem then returns a spurious O(h) speed.
    """
    if profile is None or abs(profile.c) < c_tol:
        return True
    if profile.d == 1:
        dv = np.diff(profile.values[:, 0])
        sign = np.sign(profile.system.u_plus[0] - profile.system.u_minus[0])
        return bool(np.min(sign * dv) < -mono_tol)
    return False


def pinning_threshold(direction: Direction, gamma: float = 1e-6, c_tol: float = 1e-3,
                      L: float = 40.0, h: float = 0.1, rho_start: float = 0.9,
                      rho_step: float = 0.05, width: float = 1e-4, shift_mode="integer",
                      shifts=None, mono_tol: float = 1e-4):
    """Largest pinned rho, bracketed to ``width``.

    Continues the branch downward from ``rho_start``; the first rho that
    ``is_pinned`` flags brackets the threshold, which is then refined by
    bisection.  Returns ``(rho_lo, rho_hi, branch)``: rho_lo is pinned, rho_hi
    is not, and ``branch`` holds the (rho, c) pairs of the travelling branch.
    """
    kw = dict(shift_mode=shift_mode, shifts=shifts)

    def attempt(rho, guess):
        try:
            cur = solve_wave(rho, direction, gamma, L, h, guess, **kw)
        except NonConvergenceError:
            return None, True
        return cur, is_pinned(cur, c_tol, mono_tol)

    hi, pinned = attempt(rho_start, None)
    if pinned:
        raise ThresholdNotFoundError(f"front already pinned at rho={rho_start}")
    branch = [(hi.rho, hi.c)]
    lo_rho = None
    rho = rho_start
    while lo_rho is None:
        rho = round(rho - rho_step, 12)
        if rho <= 0:
            raise ThresholdNotFoundError("no pinning detected on (0, rho_start]")
        cur, pinned = attempt(rho, hi)
        if pinned:
            lo_rho = rho
        else:
            branch.append((cur.rho, cur.c))
            hi = cur
    hi_rho = hi.rho
    while hi_rho - lo_rho > width:
        mid = 0.5 * (lo_rho + hi_rho)
        cur, pinned = attempt(mid, hi)
        if pinned:
            lo_rho = mid
        else:
            hi, hi_rho = cur, mid
            branch.append((cur.rho, cur.c))
    branch.sort()
    return lo_rho, hi_rho, branch


# ---------------------------------------------------------------- interpolation


class ProfileInterpolant:
    """C^2 cubic-spline evaluation of Phi (and Phi') with clamping beyond +-L."""

    def __init__(self, profile: WaveProfile):
        self.profile = profile
        self.L = profile.grid.L
        self._spline = CubicSpline(profile.xi, profile.values, axis=0, bc_type="clamped")
        self.u_minus = profile.system.u_minus
        self.u_plus = profile.system.u_plus

    def __call__(self, x, nu: int = 0):
        x = np.asarray(x, dtype=float)
        out = self._spline(np.clip(x, -self.L, self.L), nu)
        if nu == 0:
            out = np.where((x < -self.L)[..., None], self.u_minus, out)
            out = np.where((x > self.L)[..., None], self.u_plus, out)
        else:
            out = np.where((np.abs(x) > self.L)[..., None], 0.0, out)
        return out


def sample_on_grid(values_fn, grid: ProfileGrid, d: int):
    return np.asarray(values_fn(grid.xi)).reshape(grid.size, d)


# ---------------------------------------------------------------- file format


def save_profile(path, p: WaveProfile) -> None:
    """Header ``L h c gamma rho sigma1 sigma2 shift_mode d`` then xi, Phi columns."""
    with open(path, "w") as fh:
        head = [float(x) for x in (p.grid.L, p.grid.h, p.c, p.gamma, p.rho, *p.shifts)]
        fh.write(" ".join(repr(x) for x in head) + f" {p.shift_mode} {p.d}\n")
        np.savetxt(fh, np.column_stack([p.xi, p.values]), fmt="%.17e")


def load_profile(path, system: ReactionSystem | None = None) -> WaveProfile:
    lines = Path(path).read_text().splitlines()
    L, h, c, gamma, rho, s1, s2, mode, d = lines[0].split()
    d = int(d)
    data = np.loadtxt(lines[1:], ndmin=2)
    rho = float(rho)
    if system is None:
        system = nagumo_system(rho)
    shifts = (float(s1), float(s2))
    direction = None
    if mode == "integer":
        try:
            direction = Direction(int(round(shifts[0])), int(round(shifts[1])))
        except ValueError:
            direction = None
    grid = ProfileGrid(float(L), float(h))
    if data.shape != (grid.size, d + 1):
        raise ConfigurationError("profile file does not match its header")
    return WaveProfile(grid, data[:, 1:].copy(), float(c), float(gamma), system, shifts, mode,
                       direction, rho)


def angle_shifts(theta: float) -> tuple[float, float]:
    return math.cos(theta), math.sin(theta)
