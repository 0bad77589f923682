"""Flat key=value run configuration with a closed per-command schema.

A config file holds one ``key = value`` pair per line (``#`` starts a comment).
Keys are the long CLI flag names without the leading dashes, so every flag
can be moved into a file and back.  Command-line flags override the file.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lattice import Direction
from .simulate import PERTURBATION_KINDS
from .wave import ConfigurationError

WORKERS_ENV = "LATTICEFRONTS_WORKERS"


def _direction(text) -> Direction:
    if isinstance(text, Direction):
        return text
    try:
        return Direction.parse(str(text))
    except ValueError as exc:
        raise ConfigurationError(f"bad direction {text!r}: {exc}") from None


def _pair(text) -> tuple[float, float]:
    if isinstance(text, (tuple, list)):
        a, b = text
    else:
        a, b = str(text).split(",")
    return float(a), float(b)


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(x) for x in text)
    return tuple(float(x) for x in str(text).split(","))


def _norm_index(text) -> str:
    s = str(text).strip().lower()
    if s not in ("1", "2", "inf"):
        raise ConfigurationError(f"norm index must be 1, 2 or inf, got {text!r}")
    return s


def _text(text) -> str:
    return str(text)


def _fmt(value) -> str:
    if isinstance(value, Direction):
        return str(value)
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    parse: callable
    default: object = None
    help: str = ""
    check: callable | None = None
    bounds: str = ""
    required: bool = False


def _open_interval(lo, hi):
    return lambda v: lo < v < hi


def _positive(v):
    return v > 0


def _in(*opts):
    return lambda v: v in opts


RHO = Key(float, 0.9, "detuning rho of the cubic", _open_interval(-1, 1), "in (-1, 1)")
GAMMA = Key(float, 1e-6, "regularization gamma", _positive, "> 0")
DIR = Key(_direction, Direction(1, 0), "direction S1,S2 (gcd 1)")
L_KEY = Key(float, 40.0, "half-length of the profile grid", _positive, "> 0")
H_KEY = Key(float, 0.1, "profile grid spacing", _positive, "> 0")
OUT = Key(_text, None, "output file", required=True)
PROFILE = Key(_text, None, "profile file written by `wave`", required=True)

SCHEMAS: dict[str, dict[str, Key]] = {
    "wave": {
        "rho": RHO, "dir": DIR, "gamma": GAMMA, "L": L_KEY, "h": H_KEY, "out": OUT,
        "tol": Key(float, 1e-10, "Newton tolerance", _positive, "> 0"),
    },
    "pin": {
        "dir": DIR, "gamma": GAMMA, "L": L_KEY, "h": H_KEY,
        "c-tol": Key(float, 1e-3, "|c| below this counts as pinned", _positive, "> 0"),
        "width": Key(float, 1e-4, "bracket width", _positive, "> 0"),
        "rho-start": Key(float, 0.9, "start of the downward continuation", _open_interval(0, 1), "in (0, 1)"),
        "rho-step": Key(float, 0.05, "continuation step", _positive, "> 0"),
        "out": Key(_text, "", "optional CSV of the travelling branch (rho, c)"),
    },
    "spectrum": {
        "profile": PROFILE,
        "omega-max": Key(float, math.pi, "largest frequency", _positive, "> 0"),
        "samples": Key(int, 33, "number of frequencies on [-W, W]", lambda v: v >= 3, ">= 3"),
        "out": OUT,
    },
    "melnikov": {
        "profile": PROFILE,
        "delta": Key(float, 1e-2, "finite-difference step in omega", _positive, "> 0"),
        "rtol": Key(float, 1e-3, "allowed relative integral/FD discrepancy", _positive, "> 0"),
    },
    "melnikov-polar": {
        "rho": RHO, "gamma": Key(float, 1e-5, "regularization gamma", _positive, "> 0"),
        "thetas": Key(int, 64, "number of propagation angles on [0, 2pi)", lambda v: v >= 1, ">= 1"),
        "L": L_KEY, "h": H_KEY, "out": OUT,
    },
    "ess-spec": {
        "rho": RHO, "dir": DIR,
        "c": Key(float, 0.0, "wave speed entering the symbol"),
        "samples": Key(int, 257, "grid points per frequency axis", lambda v: v >= 3, ">= 3"),
    },
    "simulate": {
        "profile": PROFILE,
        "perturb": Key(_text, "phase_bump", "perturbation kind", _in(*PERTURBATION_KINDS),
                       "|".join(PERTURBATION_KINDS)),
        "amp": Key(float, 1e-2, "perturbation amplitude", lambda v: 0 <= v <= 0.1, "in [0, 0.1]"),
        "support": Key(int, 8, "half-width of the perturbation", lambda v: v >= 1, ">= 1"),
        "mode": Key(int, 1, "transverse wavenumber of theta_wave", lambda v: v >= 0, ">= 0"),
        "seed": Key(int, 0, "seed of random_local"),
        "T": Key(float, 200.0, "final time", _positive, "> 0"),
        "dt": Key(float, 0.1, "RK4 step", _positive, "> 0"),
        "sample": Key(float, 1.0, "sampling interval (multiple of dt)", _positive, "> 0"),
        "n-half": Key(int, 100, "window is n in [-n_half, n_half]", lambda v: v >= 20, ">= 20"),
        "l-count": Key(int, 512, "transverse period", lambda v: v >= 4, ">= 4"),
        "p": Key(_norm_index, "inf", "norm index along the wave direction"),
        "t-relax": Key(float, 60.0, "relaxation time of the reference front", lambda v: v >= 0, ">= 0"),
        "out": OUT,
    },
    "decay-fit": {
        "in": Key(_text, None, "CSV written by `simulate`", required=True),
        "col": Key(_text, "w_pinf", "column to fit"),
        "window": Key(_pair, None, "fit window a,b (default [T/4, T])"),
        "bound": Key(float, None, "theorem exponent for the one-sided check"),
        "tol": Key(float, 0.2, "fitting tolerance of the check", lambda v: v >= 0, ">= 0"),
    },
    "reproduce-figure": {
        "figure": Key(_text, "c_of_rho", "figure id", _in("melnikov_polar", "c_of_rho"),
                      "melnikov_polar|c_of_rho"),
        "dir": DIR,
        "gamma": GAMMA,
        "gammas": Key(_floats, (1e-5, 1e-4), "gamma values of the polar sweep"),
        "rho": RHO,
        "thetas": Key(int, 64, "number of propagation angles", lambda v: v >= 1, ">= 1"),
        "rho-grid": Key(_floats, (0.0, 0.9, 0.02), "rho sweep lo,hi,step"),
        "L": L_KEY, "h": H_KEY, "out": OUT,
    },
}


def validate(command: str, values: dict) -> dict:
    """Parse and range-check ``values`` against the schema; fill defaults."""
    if command not in SCHEMAS:
        raise ConfigurationError(f"unknown command {command!r}")
    schema = SCHEMAS[command]
    unknown = sorted(set(values) - set(schema))
    if unknown:
        raise ConfigurationError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    out = {}
    for key, spec in schema.items():
        raw = values.get(key)
        if raw is None:
            if spec.required:
                raise ConfigurationError(f"{command}: missing required key {key!r}")
            out[key] = spec.default
            continue
        try:
            val = spec.parse(raw)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{command}: bad value {raw!r} for {key}: {exc}") from None
        if isinstance(val, float) and not math.isfinite(val):
            raise ConfigurationError(f"{command}: {key} must be finite")
        if spec.check is not None and not spec.check(val):
            raise ConfigurationError(f"{command}: {key}={raw!r} must be {spec.bounds}")
        out[key] = val
    return out


def read_config(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ConfigurationError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = val
    return values


def format_config(values: dict) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in values.items() if v is not None)


# ---------------------------------------------------------------- artifacts


def atomic_write(path, data: str | bytes) -> None:
    """Write via a temporary file in the target directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns: dict) -> str:
    """Header line plus rows in 17-significant-digit scientific notation."""
    names = list(columns)
    data = np.column_stack([np.asarray(columns[k], float) for k in names])
    lines = [",".join(names)]
    lines += [",".join(f"{x:.16e}" for x in row) for row in data]
    return "\n".join(lines) + "\n"


def write_csv(path, columns: dict) -> None:
    atomic_write(path, csv_text(columns))


def read_csv(path) -> dict:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {k: data[:, i] for i, k in enumerate(names)}


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def code_version() -> str:
    from importlib.metadata import PackageNotFoundError, version
    try:
        ver = version("artifact")
    except PackageNotFoundError:
        ver = "unknown"
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{ver}+{rev}" if rev else ver


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = field(default_factory=code_version)
    platform: str = field(default_factory=platform.platform)
    wall_clock: float = 0.0
    tolerances: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    status: int = 0

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256(path)

    def to_json(self) -> str:
        cfg = {k: _fmt(v) for k, v in self.config.items() if v is not None}
        body = dict(command=self.command, config=cfg, version=self.version, platform=self.platform,
                    wall_clock=self.wall_clock, tolerances=self.tolerances, outputs=self.outputs,
                    status=self.status)
        return json.dumps(body, indent=2, sort_keys=True, default=float) + "\n"

    def write(self, path) -> None:
        atomic_write(path, self.to_json())


class Stopwatch:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def worker_count() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"{WORKERS_ENV} must be >= 1")
    return n
