"""Coordinates, stencils, nonlinearities and mixed norms for planar LDE fronts.

The 2-D lattice is rewritten in rotated coordinates

    n = i*s1 + j*s2      (along the direction of propagation)
    l = i*s2 - j*s1      (transverse)

in which the nearest-neighbour "+" stencil becomes the cross stencil

    (u[n+s1, l+s2], u[n+s2, l-s1], u[n-s1, l-s2], u[n-s2, l+s1], u[n, l]).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np


class WindowError(IndexError):
    """Stencil access outside a window that has no boundary policy."""


@dataclass(frozen=True)
class Direction:
    """Rational propagation direction (s1, s2) with gcd(s1, s2) = 1."""

    sigma1: int
    sigma2: int

    def __post_init__(self):
        s1, s2 = int(self.sigma1), int(self.sigma2)
        if (s1, s2) != (self.sigma1, self.sigma2):
            raise ValueError("direction components must be integers")
        if (s1, s2) == (0, 0) or math.gcd(abs(s1), abs(s2)) != 1:
            raise ValueError(f"direction ({s1},{s2}) must have gcd 1")

    @classmethod
    def parse(cls, text: str) -> "Direction":
        a, b = text.split(",")
        return cls(int(a), int(b))

    @property
    def angle(self) -> float:
        return math.atan2(self.sigma2, self.sigma1)

    @property
    def norm2(self) -> int:
        return self.sigma1**2 + self.sigma2**2

    def unit_shifts(self) -> tuple[float, float]:
        """Normalized shifts (cos theta, sin theta)."""
        return math.cos(self.angle), math.sin(self.angle)

    def shifts(self, mode: str = "integer") -> tuple[float, float]:
        if mode == "integer":
            return float(self.sigma1), float(self.sigma2)
        if mode == "normalized":
            return self.unit_shifts()
        raise ValueError(f"unknown shift mode {mode!r}")

    def __str__(self):
        return f"{self.sigma1},{self.sigma2}"


def to_wave_coords(i, j, direction: Direction):
    s1, s2 = direction.sigma1, direction.sigma2
    return i * s1 + j * s2, i * s2 - j * s1


def from_wave_coords(n, l, direction: Direction):
    """Inverse of :func:`to_wave_coords`; raises if (n, l) is off the sublattice."""
    s1, s2 = direction.sigma1, direction.sigma2
    q = direction.norm2
    a, b = n * s1 + l * s2, n * s2 - l * s1
    if np.any(np.asarray(a) % q) or np.any(np.asarray(b) % q):
        raise ValueError(f"({n},{l}) is not on the sublattice of direction {direction}")
    return a // q, b // q


def on_sublattice(n, l, direction: Direction):
    q = direction.norm2
    s1, s2 = direction.sigma1, direction.sigma2
    return ((n * s1 + l * s2) % q == 0) & ((n * s2 - l * s1) % q == 0)


# ---------------------------------------------------------------- nonlinearity


@dataclass(frozen=True)
class CubicNagumo:
    """g(u; rho) = -(5/2)(u^2 - 1)(u - rho), bistable for rho in (-1, 1)."""

    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho={self.rho} must lie in (-1, 1)")

    def g(self, u):
        return -2.5 * (u * u - 1.0) * (u - self.rho)

    def dg(self, u):
        # d/du of -(5/2)(u^3 - rho u^2 - u + rho)
        return -2.5 * (3.0 * u * u - 2.0 * self.rho * u - 1.0)

    def d2g(self, u):
        return -2.5 * (6.0 * u - 2.0 * self.rho)


def nagumo_rhs(stencil, rho: float):
    """Discrete Laplacian plus cubic reaction for a 5-tuple of stencil values."""
    u1, u2, u3, u4, u5 = stencil
    return u1 + u2 + u3 + u4 - 4.0 * u5 + CubicNagumo(rho).g(u5)


@dataclass
class ReactionSystem:
    """Nonlinearity f: (R^d)^5 -> R^d with its five Jacobian blocks.

    ``f`` receives an array of shape (5, ..., d) and returns (..., d);
    ``df`` returns the blocks D_1 f, ..., D_5 f stacked as (5, ..., d, d).
    """

    d: int
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    u_minus: np.ndarray
    u_plus: np.ndarray
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.u_minus = np.atleast_1d(np.asarray(self.u_minus, dtype=float))
        self.u_plus = np.atleast_1d(np.asarray(self.u_plus, dtype=float))
        if self.u_minus.shape != (self.d,) or self.u_plus.shape != (self.d,):
            raise ValueError("equilibria must be d-vectors")

    def equilibrium_defect(self) -> float:
        out = 0.0
        for u in (self.u_minus, self.u_plus):
            st = np.broadcast_to(u, (5, self.d))
            out = max(out, float(np.max(np.abs(self.f(st)))))
        return out

    def jacobian_defect(self, point=None, eps: float = 1e-6, seed: int = 0) -> float:
        """Max relative mismatch between ``df`` and central differences of ``f``."""
        rng = np.random.default_rng(seed)
        if point is None:
            point = rng.uniform(-1.0, 1.0, size=(5, self.d))
        point = np.asarray(point, dtype=float)
        blocks = self.df(point)
        worst = 0.0
        for j in range(5):
            for k in range(self.d):
                e = np.zeros_like(point)
                e[j, k] = eps
                fd = (self.f(point + e) - self.f(point - e)) / (2 * eps)
                an = blocks[j][:, k]
                scale = max(1.0, float(np.max(np.abs(an))))
                worst = max(worst, float(np.max(np.abs(fd - an))) / scale)
        return worst

    def equilibrium_jacobian(self, side: str) -> np.ndarray:
        u = self.u_minus if side == "minus" else self.u_plus
        return self.df(np.broadcast_to(u, (5, self.d)).copy())


def nagumo_system(rho: float) -> ReactionSystem:
    """Scalar Nagumo LDE f(u1..u5) = u1+u2+u3+u4-4u5+g(u5; rho)."""
    cubic = CubicNagumo(rho)

    def f(st):
        st = np.asarray(st)
        return st[0] + st[1] + st[2] + st[3] - 4.0 * st[4] + cubic.g(st[4])

    def df(st):
        st = np.asarray(st)
        out = np.ones((5,) + st.shape[1:] + (1,))
        out[4] = (-4.0 + cubic.dg(st[4]))[..., None]
        return out

    return ReactionSystem(
        d=1, f=f, df=df, u_minus=[-1.0], u_plus=[1.0], name="nagumo", params={"rho": rho}
    )


# ---------------------------------------------------------------- plane states


@dataclass(frozen=True)
class PlaneState:
    """Field u[n, l] on n_lo..n_hi times l_count transverse sites (periodic in l).

    ``values`` has shape (n_hi - n_lo + 1, l_count, d).
    """

    n_lo: int
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 2:
            v = v[..., None]
        if v.ndim != 3:
            raise ValueError("values must have shape (n_count, l_count, d)")
        if not np.all(np.isfinite(v)):
            raise ValueError("plane state contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_hi(self) -> int:
        return self.n_lo + self.values.shape[0] - 1

    @property
    def n_count(self) -> int:
        return self.values.shape[0]

    @property
    def l_count(self) -> int:
        return self.values.shape[1]

    @property
    def d(self) -> int:
        return self.values.shape[2]

    @property
    def n(self) -> np.ndarray:
        return np.arange(self.n_lo, self.n_hi + 1)

    def at(self, n: int, l: int) -> np.ndarray:
        if not self.n_lo <= n <= self.n_hi:
            raise WindowError(f"n={n} outside window [{self.n_lo}, {self.n_hi}]")
        return self.values[n - self.n_lo, l % self.l_count]

    def replace(self, values=None, time=None, n_lo=None) -> "PlaneState":
        return PlaneState(
            self.n_lo if n_lo is None else n_lo,
            self.values if values is None else values,
            self.time if time is None else time,
        )

    def recentered(self, shift: int, u_minus, u_plus) -> "PlaneState":
        """Move the window by ``shift`` sites in n, filling with the clamp values."""
        if shift == 0:
            return self
        v = self.values
        out = np.empty_like(v)
        if shift > 0:
            out[:-shift] = v[shift:]
            out[-shift:] = np.asarray(u_plus)
        else:
            out[-shift:] = v[:shift]
            out[:-shift] = np.asarray(u_minus)
        return PlaneState(self.n_lo + shift, out, self.time)


def pad_n(values: np.ndarray, width: int, u_minus, u_plus) -> np.ndarray:
    """Extend an (n, l, d) array by ``width`` clamped sites at both ends in n."""
    n, lc, d = values.shape
    out = np.empty((n + 2 * width, lc, d))
    out[width : width + n] = values
    out[:width] = np.asarray(u_minus).reshape(1, 1, d)
    out[width + n :] = np.asarray(u_plus).reshape(1, 1, d)
    return out


def stencil_arrays(values: np.ndarray, direction: Direction, u_minus=None, u_plus=None):
    """Cross stencil evaluated at every site of an (n, l, d) window.

    Returns an array (5, n, l, d).  Out-of-window n is clamped to ``u_minus``
    (left) and ``u_plus`` (right); l is periodic.
    """
    s1, s2 = direction.sigma1, direction.sigma2
    if u_minus is None or u_plus is None:
        raise WindowError("whole-window stencils need clamp values u_minus/u_plus")
    width = max(abs(s1), abs(s2))
    padded = pad_n(values, width, u_minus, u_plus)
    n = values.shape[0]

    def take(dn, dl):
        block = padded[width + dn : width + dn + n]
        return np.roll(block, -dl, axis=1) if dl else block

    return np.stack(
        [take(s1, s2), take(s2, -s1), take(-s1, -s2), take(-s2, s1), take(0, 0)]
    )


def cross_stencil(state: PlaneState, n: int, l: int, direction: Direction,
                  u_minus=None, u_plus=None):
    """The five stencil values at site (n, l), in cross-stencil order, shape (5, d)."""
    s1, s2 = direction.sigma1, direction.sigma2
    offsets = [(s1, s2), (s2, -s1), (-s1, -s2), (-s2, s1), (0, 0)]
    out = []
    for dn, dl in offsets:
        m = n + dn
        if m < state.n_lo:
            if u_minus is None:
                raise WindowError(f"n={m} left of window")
            out.append(np.atleast_1d(np.asarray(u_minus, dtype=float)))
        elif m > state.n_hi:
            if u_plus is None:
                raise WindowError(f"n={m} right of window")
            out.append(np.atleast_1d(np.asarray(u_plus, dtype=float)))
        else:
            out.append(state.at(m, l + dl))
    return np.array(out)


def plus_stencil(field2d: np.ndarray, i: int, j: int):
    """'+' stencil (u[i+1,j], u[i,j+1], u[i-1,j], u[i,j-1], u[i,j]) on a dict/array."""
    return (field2d[i + 1, j], field2d[i, j + 1], field2d[i - 1, j],
            field2d[i, j - 1], field2d[i, j])


# ---------------------------------------------------------------- norms


def _lp(a: np.ndarray, p, axis):
    a = np.abs(a)
    if isinstance(p, str):
        p = np.inf if p == "inf" else int(p)
    if a.shape[axis] == 0:
        return np.zeros(np.delete(a.shape, axis))
    if p == np.inf:
        return np.max(a, axis=axis)
    if p == 1:
        return np.sum(a, axis=axis)
    if p == 2:
        # scale by the max so tiny or huge entries neither underflow nor overflow
        m = np.max(a, axis=axis, keepdims=True)
        safe = np.where(m > 0, m, 1.0)
        return np.squeeze(m, axis) * np.sqrt(np.sum((a / safe) ** 2, axis=axis))
    raise ValueError(f"unsupported exponent {p!r}")


def seq_norm(a, p) -> float:
    """l^p norm of a flat real sequence, p in {1, 2, inf}."""
    return float(_lp(np.ravel(np.asarray(a, dtype=float)), p, 0))


def mixed_norm(state, p, q) -> float:
    """X_{p,q} norm: l^q over l of the Euclidean site norm, then l^p over n."""
    v = state.values if isinstance(state, PlaneState) else np.asarray(state, dtype=float)
    if v.ndim == 2:
        v = v[..., None]
    site = _lp(v, 2, 2)
    return float(_lp(_lp(site, q, 1), p, 0))


# ---------------------------------------------------------------- file format


def save_plane(path, state: PlaneState) -> None:
    """Write ``state`` as text.

    Header ``n_lo n_hi l_count time d``; then one row per transverse index l
    (l = 0..l_count-1), holding the n_count*d values of that row ordered by n
    and, within a site, by component.
    """
    v = state.values
    rows = np.transpose(v, (1, 0, 2)).reshape(state.l_count, -1)
    with open(path, "w") as fh:
        fh.write(f"{state.n_lo} {state.n_hi} {state.l_count} {state.time!r} {state.d}\n")
        np.savetxt(fh, rows, fmt="%.17e")


def load_plane(path) -> PlaneState:
    text = Path(path).read_text().splitlines()
    n_lo, n_hi, l_count, time, d = text[0].split()
    n_lo, n_hi, l_count, d = int(n_lo), int(n_hi), int(l_count), int(d)
    rows = np.loadtxt(text[1:], ndmin=2)
    v = rows.reshape(l_count, n_hi - n_lo + 1, d).transpose(1, 0, 2)
    return PlaneState(n_lo, v, float(time))
