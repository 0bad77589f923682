"""Transverse-frequency linearizations about a planar front.

For a transverse Fourier mode e^{i omega l} the linearization of the lattice
equation about Phi reduces to the one-dimensional operator

    L_omega p = -c p' + gamma p'' + sum_j e^{i alpha_j omega} A_j(xi) p(xi + r_j)

with A_j = d f / d u_j along tau Phi and l-offsets alpha = (s2, -s1, -s2, s1, 0)
of the cross stencil.  Everything here is discretized on the profile grid
(interior nodes, Dirichlet zeros at +-L) using the same difference
operators as the wave solver.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.integrate as si
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Direction, ReactionSystem
from .wave import (ConfigurationError, WaveProfile, _block_diag, translation_mode)

log = logging.getLogger(__name__)

DELTA_OMEGA = math.pi / 4


class BranchLossError(RuntimeError):
    """Inverse iteration landed on a different eigenvalue branch."""


class ConsistencyError(RuntimeError):
    """Two independent evaluations of the same quantity disagree."""


def stencil_phases(direction: Direction) -> np.ndarray:
    s1, s2 = direction.sigma1, direction.sigma2
    return np.array([s2, -s1, -s2, s1, 0], dtype=float)


@dataclass
class FrequencyOperator:
    """L_omega on interior nodes, kept as its omega-independent pieces."""

    omega: float
    base: sp.csr_matrix  # -c D + gamma D2 (real)
    couplings: list  # A_j S_j restricted to the interior (real, sparse)
    phases: np.ndarray
    h: float
    d: int

    def _combine(self, weights) -> sp.csr_matrix:
        out = sp.csr_matrix(self.base.shape, dtype=complex)
        for w, C in zip(weights, self.couplings):
            if w != 0:
                out = out + w * C
        return out.tocsr()

    @property
    def sparse(self) -> sp.csr_matrix:
        w = np.exp(1j * self.phases * self.omega)
        return (self.base + self._combine(w)).tocsr()

    @property
    def matrix(self) -> np.ndarray:
        return self.sparse.toarray()

    def d_omega(self) -> sp.csr_matrix:
        """Analytic d/d omega: sum_j i alpha_j e^{i alpha_j omega} A_j S_j."""
        return self._combine(1j * self.phases * np.exp(1j * self.phases * self.omega))

    def d2_omega(self) -> sp.csr_matrix:
        return self._combine(-self.phases ** 2 * np.exp(1j * self.phases * self.omega))

    def at(self, omega: float) -> "FrequencyOperator":
        return FrequencyOperator(float(omega), self.base, self.couplings, self.phases, self.h, self.d)

    def inner(self, a, b) -> complex:
        """Trapezoid <a, b> = h sum conj(a) b (endpoint values are zero)."""
        return self.h * np.vdot(a, b)


def build_frequency_operator(profile: WaveProfile, omega: float = 0.0,
                             phases=None) -> FrequencyOperator:
    if phases is None:
        s1, s2 = profile.shifts
        phases = np.array([s2, -s1, -s2, s1, 0.0])
    ops = profile.operators()
    idx = ops.interior
    tau = ops.stencil(profile.values)
    blocks = profile.system.df(tau)
    Dc = ops.first_difference(profile.c, profile.scheme, kron=True)
    base = (-profile.c * Dc + profile.gamma * ops.D2d).tocsr()[idx][:, idx]
    couplings = [(_block_diag(blocks[j]) @ ops.Sd[j]).tocsr()[idx][:, idx] for j in range(5)]
    return FrequencyOperator(float(omega), base.tocsr(), couplings, np.asarray(phases, float),
                             profile.grid.h, profile.d)


# ---------------------------------------------------------------- eigenpairs


def _inverse_iteration(A: sp.spmatrix, shift: complex, v0: np.ndarray, tol=1e-12, max_iter=60):
    n = A.shape[0]
    lu = spla.splu((A - shift * sp.identity(n, format="csc")).tocsc())
    v = v0 / np.linalg.norm(v0)
    lam = shift
    for _ in range(max_iter):
        w = lu.solve(v)
        lam = shift + np.vdot(v, v) / np.vdot(v, w)
        v = w / np.linalg.norm(w)
        res = np.linalg.norm(A @ v - lam * v)
        if res < tol * max(1.0, abs(lam)):
            return lam, v, True
    return lam, v, False


def _overlap(a, b) -> float:
    return abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))


def leading_eigenpair(op: FrequencyOperator, seed: np.ndarray, guess: complex = 0.0,
                      offset: float = 1e-7):
    """Eigenpair continuing ``seed`` (interior vector) near ``guess``.

    Shifted inverse iteration first; a dense eigensolve with overlap matching
    is the fallback.  The eigenvector is scaled so that <seed, phi> = <seed, seed>.
    """
    A = op.sparse
    lam, v, ok = _inverse_iteration(A, guess + offset, seed)
    if not ok or _overlap(seed, v) < 0.5:
        ev, V = np.linalg.eig(A.toarray())
        ov = np.abs(V.conj().T @ seed) / np.linalg.norm(seed)
        k = int(np.argmax(ov))
        lam, v = ev[k], V[:, k]
    ov = _overlap(seed, v)
    if ov < 0.5:
        raise BranchLossError(f"overlap {ov:.3f} with seed at omega={op.omega}")
    v = v * (np.vdot(seed, seed) / np.vdot(seed, v))
    return complex(lam), v


def adjoint_eigenpair(op: FrequencyOperator, lam: complex, phi: np.ndarray, seed=None):
    """Left eigenvector psi (L^H psi = conj(lam) psi) with <psi, phi> = 1."""
    AH = op.sparse.conj().T.tocsr()
    if seed is None:
        seed = phi
    mu, q, ok = _inverse_iteration(AH, np.conj(lam) + 1e-7, seed)
    if not ok:
        ev, V = np.linalg.eig(AH.toarray())
        k = int(np.argmin(np.abs(ev - np.conj(lam))))
        q = V[:, k]
    # orientation-free: scale so that h sum conj(psi) phi = 1
    return q / np.conj(op.inner(q, phi))


def eigenvalue_gap(op: FrequencyOperator, lam: complex) -> float:
    """Distance in real part from lam to the next eigenvalue (dense diagnostic)."""
    ev = np.linalg.eigvals(op.matrix)
    ev = ev[np.argsort(-ev.real)]
    k = int(np.argmin(np.abs(ev - lam)))
    others = np.delete(ev, k)
    return float(lam.real - others.real.max())


# ---------------------------------------------------------------- branch


@dataclass
class SpectralBranch:
    omegas: np.ndarray
    lambdas: np.ndarray
    phis: np.ndarray  # (n_omega, m) interior vectors
    psis: np.ndarray
    op: FrequencyOperator
    profile: WaveProfile
    phi1: np.ndarray | None = None
    lambda1: float | None = None
    melnikov: float | None = None
    info: dict = field(default_factory=dict)

    def index(self, omega: float) -> int:
        return int(np.argmin(np.abs(self.omegas - omega)))

    @property
    def phi0(self):
        return self.phis[self.index(0.0)]

    @property
    def psi0(self):
        return self.psis[self.index(0.0)]


def ground_state(profile: WaveProfile, phases=None):
    """(op, lambda_0, phi_0, psi_0) at omega = 0, with phi_0 scaled like Phi'."""
    op = build_frequency_operator(profile, 0.0, phases)
    t, _ = translation_mode(profile)
    seed = t[1:-1].ravel().astype(complex)
    lam, phi = leading_eigenpair(op, seed, 0.0)
    psi = adjoint_eigenpair(op, lam, phi)
    return op, lam, phi, psi


def track_branch(profile: WaveProfile, omegas, phases=None) -> SpectralBranch:
    """Follow lambda_omega from omega = 0 outward in both directions."""
    omegas = np.unique(np.r_[np.asarray(omegas, float), 0.0])
    op0, lam0, phi0, psi0 = ground_state(profile, phases)
    m = phi0.size
    lams = np.zeros(omegas.size, complex)
    phis = np.zeros((omegas.size, m), complex)
    psis = np.zeros((omegas.size, m), complex)
    k0 = int(np.flatnonzero(omegas == 0.0)[0])
    lams[k0], phis[k0], psis[k0] = lam0, phi0, psi0
    for order in (range(k0 + 1, omegas.size), range(k0 - 1, -1, -1)):
        prev = k0
        prev2 = None
        for k in order:
            op = op0.at(omegas[k])
            guess = lams[prev]
            if prev2 is not None:  # secant predictor
                slope = (lams[prev] - lams[prev2]) / (omegas[prev] - omegas[prev2])
                guess = lams[prev] + slope * (omegas[k] - omegas[prev])
            lams[k], phis[k] = leading_eigenpair(op, phis[prev], guess)
            psis[k] = adjoint_eigenpair(op, lams[k], phis[k], seed=psis[prev])
            prev2, prev = prev, k
    return SpectralBranch(omegas, lams, phis, psis, op0, profile)


def eigenvalue_at(profile_or_op, omega: float, seed=None, guess: complex = 0.0) -> complex:
    op = profile_or_op if isinstance(profile_or_op, FrequencyOperator) else build_frequency_operator(profile_or_op)
    lam, _ = leading_eigenpair(op.at(omega), seed, guess)
    return lam


# ---------------------------------------------------------------- rotated derivatives


def _b_operator(op: FrequencyOperator) -> sp.csr_matrix:
    """B = -i dL/domega at 0 = sum_j alpha_j A_j S_j (real)."""
    return op.at(0.0).d_omega().multiply(-1j).real.tocsr()


def rotated_derivatives(op: FrequencyOperator, phi: np.ndarray, psi: np.ndarray,
                        fd_delta: float | None = 1e-3):
    """Solve L_0 phi1 = -B phi + lambda1 phi with <psi, phi1> = 0.

    Returns (phi1, lambda1, info); ``info`` carries the bordered-system defect
    and, if ``fd_delta`` is given, the finite-difference value of lambda1.
    """
    op0 = op.at(0.0)
    A = op0.sparse.real.tocsr()
    phi_r, psi_r = phi.real, psi.real
    B = _b_operator(op0)
    m = A.shape[0]
    border = sp.bmat([[A, -phi_r[:, None]], [op0.h * psi_r[None, :], None]], format="csc")
    rhs = np.r_[-(B @ phi_r), 0.0]
    sol = spla.spsolve(border, rhs)
    defect = float(np.linalg.norm(border @ sol - rhs))
    if not np.all(np.isfinite(sol)) or defect > 1e-6 * max(1.0, np.linalg.norm(rhs)):
        raise ConsistencyError(f"singular rotated-derivative system, defect {defect:.3e}")
    phi1, lam1 = sol[:m], float(sol[m])
    info = {"defect": defect, "lambda1_projection": float(op0.inner(psi_r, B @ phi_r).real)}
    if fd_delta:
        lp = eigenvalue_at(op0, fd_delta, phi, 0.0)
        lm = eigenvalue_at(op0, -fd_delta, phi, 0.0)
        fd = -1j * (lp - lm) / (2 * fd_delta)
        info["lambda1_fd"] = complex(fd)
    return phi1, lam1, info


def melnikov_integral(op: FrequencyOperator, phi, psi, phi1, lam1) -> float:
    """M = -d^2 lambda/domega^2 at 0 from the second-order solvability condition."""
    op0 = op.at(0.0)
    C = op0.d2_omega().real
    B = _b_operator(op0)
    phi_r, psi_r = phi.real, psi.real
    term1 = -op0.inner(psi_r, C @ phi_r).real
    term2 = 2 * op0.inner(psi_r, B @ phi1 - lam1 * phi1).real
    return float(term1 + term2)


def melnikov_fd(op: FrequencyOperator, phi, delta: float = 1e-2) -> float:
    """-d^2 Re lambda / domega^2 at 0 by the 5-point fourth-order stencil."""
    vals = {}
    for k in (-2, -1, 1, 2):
        vals[k] = eigenvalue_at(op, k * delta, phi, 0.0).real
    lam0 = eigenvalue_at(op, 0.0, phi, 0.0).real
    d2 = (-vals[2] + 16 * vals[1] - 30 * lam0 + 16 * vals[-1] - vals[-2]) / (12 * delta ** 2)
    return float(-d2)


@dataclass
class MelnikovResult:
    integral: float
    fd: float
    lambda1: float
    discrepancy: float

    @property
    def value(self):
        return self.integral


def melnikov_constant(profile: WaveProfile, rtol: float = 1e-3, delta: float = 1e-2,
                      phases=None, check: bool = True) -> MelnikovResult:
    op, lam0, phi, psi = ground_state(profile, phases)
    phi1, lam1, _ = rotated_derivatives(op, phi, psi, fd_delta=None)
    M_int = melnikov_integral(op, phi, psi, phi1, lam1)
    M_fd = melnikov_fd(op, phi, delta)
    disc = abs(M_int - M_fd) / max(abs(M_int), 1e-300)
    if check and disc > rtol:
        raise ConsistencyError(f"Melnikov integral {M_int:.8g} vs finite difference {M_fd:.8g}")
    return MelnikovResult(M_int, M_fd, lam1, disc)


# ---------------------------------------------------------------- chi


@dataclass
class ChiSequence:
    """chi_n(theta) on lattice sites n = n_lo..n_hi for sampled theta."""

    n: np.ndarray
    thetas: np.ndarray
    values: np.ndarray  # (len(thetas), len(n), d)
    defects: np.ndarray


def chi_function(phi_fn, psi_fn, phi1_fn, n: np.ndarray, theta: float):
    """chi_n(theta) = phi1(n+theta) - phi(n+theta) S1 / S0 with lattice sums
    S0 = sum <psi, phi>, S1 = sum <psi, phi1> at n + theta.

    Dividing by S0 (equal to one up to discretization error) makes the
    projection defect vanish to roundoff.
    """
    x = n + theta
    ph, ps, p1 = phi_fn(x), psi_fn(x), phi1_fn(x)
    S0 = np.sum(ps * ph)
    S1 = np.sum(ps * p1)
    chi = p1 - ph * (S1 / S0)
    defect = abs(np.sum(ps * chi))
    return chi, defect


def chi_sequence(profile: WaveProfile, n: np.ndarray, thetas=None, phases=None,
                 branch_data=None) -> ChiSequence:
    if thetas is None:
        thetas = np.linspace(0.0, 1.0, 64, endpoint=False)
    if branch_data is None:
        branch_data = interface_functions(profile, phases)
    phi_fn, psi_fn, phi1_fn = branch_data
    vals, defects = [], []
    for th in thetas:
        chi, dfc = chi_function(phi_fn, psi_fn, phi1_fn, np.asarray(n, float), th)
        vals.append(chi)
        defects.append(dfc)
    return ChiSequence(np.asarray(n), np.asarray(thetas, float), np.array(vals), np.array(defects))


class GridFunction:
    """Cubic-spline evaluation of an interior-node vector (zero beyond +-L)."""

    def __init__(self, profile: WaveProfile, interior: np.ndarray):
        from scipy.interpolate import CubicSpline
        d = profile.d
        full = np.zeros((profile.grid.size, d))
        full[1:-1] = np.asarray(interior).real.reshape(-1, d)
        self.L = profile.grid.L
        self._s = CubicSpline(profile.xi, full, axis=0)

    def __call__(self, x, nu: int = 0):
        x = np.asarray(x, float)
        out = self._s(np.clip(x, -self.L, self.L), nu)
        return np.where((np.abs(x) > self.L)[..., None], 0.0, out)


def interface_functions(profile: WaveProfile, phases=None):
    """Interpolants (phi, psi, phi1) of the omega = 0 eigen-data."""
    op, lam0, phi, psi = ground_state(profile, phases)
    phi1, lam1, _ = rotated_derivatives(op, phi, psi, fd_delta=None)
    return GridFunction(profile, phi), GridFunction(profile, psi), GridFunction(profile, phi1)


# ---------------------------------------------------------------- essential spectrum


def essential_spectrum_margin(rho: float | None = None, direction: Direction | None = None,
                              c: float = 0.0, omega_grid=None, nu_grid=None, *,
                              system: ReactionSystem | None = None, gamma: float = 0.0,
                              return_sides: bool = False):
    """Largest real part on the curves det(Delta^pm_omega(i nu) - lambda) = 0.

    For the scalar Nagumo case Re Delta = 2cos(nu s1 + omega s2) +
    2cos(nu s2 - omega s1) - 4 + g'(u_pm); the general case takes eigenvalues of
    the d x d symbol sum_j e^{i(nu r_j + omega alpha_j)} A_j - c i nu - gamma nu^2.
    """
    from .lattice import nagumo_system
    if system is None:
        system = nagumo_system(rho)
    if omega_grid is None:
        omega_grid = np.linspace(-np.pi, np.pi, 257)
    if nu_grid is None:
        nu_grid = np.linspace(-np.pi, np.pi, 257)
    r = np.array(direction.shifts("integer") if direction is not None else (1.0, 0.0))
    offs = np.array([r[0], r[1], -r[0], -r[1], 0.0])
    alpha = stencil_phases(direction) if direction is not None else np.array([0, -1, 0, 1, 0.0])
    W, V = np.meshgrid(np.asarray(omega_grid, float), np.asarray(nu_grid, float), indexing="ij")
    sides = {}
    for side in ("minus", "plus"):
        A = system.equilibrium_jacobian(side)  # (5, d, d)
        ph = np.exp(1j * (V[..., None] * offs + W[..., None] * alpha))  # (..., 5)
        sym = np.einsum("...j,jab->...ab", ph, A.astype(complex))
        sym = sym - (1j * c * V + gamma * V ** 2)[..., None, None] * np.eye(system.d)
        sides[side] = float(np.linalg.eigvals(sym).real.max())
    out = max(sides.values())
    return (out, sides) if return_sides else out


# ---------------------------------------------------------------- multipliers


def multiplier_norm(k: int, kappa: float, t: float, q_pair=("inf", 1)) -> float:
    """||m_{k,t}||_{L^q1 -> L^q2} on [-pi, pi] for m = |omega|^k exp(-kappa omega^2 t).

    Pointwise multiplication maps L^q1 -> L^q2 (q2 <= q1) with norm ||m||_{L^s},
    1/s = 1/q2 - 1/q1.
    """
    q1, q2 = (math.inf if str(q) == "inf" else float(q) for q in q_pair)
    inv_s = 1.0 / q2 - (0.0 if math.isinf(q1) else 1.0 / q1)
    if inv_s < -1e-14:
        raise ConfigurationError("need q2 <= q1 on a bounded frequency interval")
    m = lambda w: w ** k * np.exp(-kappa * w * w * t)
    if inv_s <= 1e-14:  # sup norm
        if k == 0:
            return 1.0
        w_star = min(math.sqrt(k / (2 * kappa * t)), math.pi)
        return float(m(w_star))
    s = 1.0 / inv_s
    scale = 1.0 / math.sqrt(kappa * t)
    pts = [p for p in (scale, 4 * scale, 16 * scale) if p < math.pi]
    val, _ = si.quad(lambda w: m(w) ** s, 0.0, math.pi, points=pts or None, limit=200,
                     epsabs=0.0, epsrel=1e-12)
    return float((2 * val) ** (1.0 / s))


def multiplier_norm_scaling(k: int, kappa: float = 1.0, t_list=None, q_pair=("inf", 1)):
    """Fitted decay exponent of the multiplier norm against log(1+t)."""
    if t_list is None:
        t_list = 2.0 ** np.arange(4, 13)
    t_list = np.asarray(t_list, float)
    norms = np.array([multiplier_norm(k, kappa, t, q_pair) for t in t_list])
    slope = np.polyfit(np.log1p(t_list), np.log(norms), 1)[0]
    return float(-slope), t_list, norms


# ---------------------------------------------------------------- frequency LDE


def evolve_frequency_lde(profile: WaveProfile, omega: float, w0: np.ndarray, T: float,
                         dt: float | None = None, sample: float = 0.5, phases=None):
    """RK4 for dw/dt = L_omega w in the co-moving frame; returns (t, ||w||_2).

    The default dt keeps dt * max|row sum| below 2, inside the RK4 stability
    region for the (mostly advective) spectrum of the discretized operator.
    """
    A = build_frequency_operator(profile, omega, phases).sparse
    if dt is None:
        bound = float(abs(A).sum(axis=1).max())
        dt = sample / math.ceil(sample * bound / 2.0)
    w = np.asarray(w0, complex).copy()
    nsteps = int(round(T / dt))
    every = max(1, int(round(sample / dt)))
    ts, norms = [0.0], [np.linalg.norm(w)]
    for k in range(1, nsteps + 1):
        k1 = A @ w
        k2 = A @ (w + 0.5 * dt * k1)
        k3 = A @ (w + 0.5 * dt * k2)
        k4 = A @ (w + dt * k3)
        w = w + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % every == 0:
            ts.append(k * dt)
            norms.append(np.linalg.norm(w))
    return np.array(ts), np.array(norms)


def exponential_rate(ts, norms, window=(0.5, 1.0)) -> float:
    """Slope of log ||w|| over the fractional time window."""
    T = ts[-1]
    sel = (ts >= window[0] * T) & (ts <= window[1] * T)
    return float(np.polyfit(ts[sel], np.log(norms[sel]), 1)[0])
