"""Command-line entry point: ``latticefronts <command> [--config FILE] [flags]``.

Exit codes: 0 success, 2 configuration error, 3 numerical non-convergence,
4 failed acceptance check.  Every run writes a JSON manifest next to its main
output (or to ``--manifest``).
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .config import SCHEMAS, RunManifest, Stopwatch, read_csv, write_csv
from .simulate import (BlowUpError, FitError, OutOfTubeError, Perturbation, SimulationConfig,
                       fit_decay, run_experiment)
from .spectral import (BranchLossError, ConsistencyError, essential_spectrum_margin, melnikov_constant,
                       track_branch)
from .wave import (ConfigurationError, NonConvergenceError, ThresholdNotFoundError, is_pinned,
                   load_profile, pinning_threshold, save_profile, solve_wave)

log = logging.getLogger("latticefronts")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
NUMERIC_ERRORS = (NonConvergenceError, ThresholdNotFoundError, BranchLossError, BlowUpError,
                  OutOfTubeError, FitError, np.linalg.LinAlgError, FloatingPointError)


class CheckFailed(RuntimeError):
    """A requested acceptance check did not hold."""


# ---------------------------------------------------------------- commands


def cmd_wave(c, man):
    prof = solve_wave(c["rho"], c["dir"], c["gamma"], c["L"], c["h"], tol=c["tol"])
    save_profile(c["out"], prof)
    man.tolerances.update(newton_residual=prof.info.get("residual"), c=prof.c)
    print(f"c = {prof.c:.12g}")
    return [c["out"]]


def cmd_pin(c, man):
    lo, hi, branch = pinning_threshold(c["dir"], c["gamma"], c["c-tol"], c["L"], c["h"],
                                       c["rho-start"], c["rho-step"], c["width"])
    man.tolerances.update(rho_lo=lo, rho_hi=hi, width=hi - lo)
    print(f"rho* in [{lo:.6f}, {hi:.6f}]  width {hi - lo:.2e}")
    if c["out"]:
        rho, cs = np.array(branch).T
        write_csv(c["out"], {"rho": rho, "c": cs})
        return [c["out"]]
    return []


def cmd_spectrum(c, man):
    prof = load_profile(c["profile"])
    omegas = np.linspace(-c["omega-max"], c["omega-max"], c["samples"])
    br = track_branch(prof, omegas)
    write_csv(c["out"], {"omega": br.omegas, "re_lambda": br.lambdas.real, "im_lambda": br.lambdas.imag})
    man.tolerances.update(lambda0=abs(br.lambdas[br.index(0.0)]))
    return [c["out"]]


def cmd_melnikov(c, man):
    prof = load_profile(c["profile"])
    res = melnikov_constant(prof, rtol=c["rtol"], delta=c["delta"], check=False)
    print(f"M_integral = {res.integral:.12g}\nM_fd = {res.fd:.12g}\ndiscrepancy = {res.discrepancy:.3e}")
    man.tolerances.update(M_integral=res.integral, M_fd=res.fd, discrepancy=res.discrepancy)
    if res.discrepancy > c["rtol"]:
        raise CheckFailed(f"Melnikov discrepancy {res.discrepancy:.2e} exceeds {c['rtol']:.1e}")
    return []


def _polar_point(args):
    theta, rho, gamma, L, h = args
    prof = solve_wave(rho, None, gamma, L, h, shifts=(math.cos(theta), math.sin(theta)),
                      shift_mode="normalized")
    res = melnikov_constant(prof, check=False)
    return res.integral, res.discrepancy, prof.c


def polar_sweep(rho, gamma, n_theta, L=40.0, h=0.1):
    """M(theta) over n_theta equispaced propagation angles."""
    thetas = 2 * np.pi * np.arange(n_theta) / n_theta
    jobs = [(t, rho, gamma, L, h) for t in thetas]
    workers = cfgmod.worker_count()
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_polar_point, jobs))
    else:
        out = [_polar_point(j) for j in jobs]
    M, disc, speeds = map(np.array, zip(*out))
    return thetas, M, disc, speeds


def cmd_melnikov_polar(c, man):
    thetas, M, disc, _ = polar_sweep(c["rho"], c["gamma"], c["thetas"], c["L"], c["h"])
    write_csv(c["out"], {"theta": thetas, "M": M})
    man.tolerances.update(max_discrepancy=float(disc.max()), min_M=float(M.min()))
    return [c["out"]]


def cmd_ess_spec(c, man):
    grid = np.linspace(-np.pi, np.pi, c["samples"])
    m, sides = essential_spectrum_margin(c["rho"], c["dir"], c["c"], grid, grid, return_sides=True)
    print(f"max Re = {m:.12g}  (minus side {sides['minus']:.12g}, plus side {sides['plus']:.12g})")
    man.tolerances.update(margin=m, **sides)
    return []


def cmd_simulate(c, man):
    prof = load_profile(c["profile"])
    pert = Perturbation(c["perturb"], c["amp"], c["support"], c["seed"], c["mode"])
    sim = SimulationConfig(c["n-half"], c["l-count"], c["dt"], c["T"], c["sample"], c["p"], pert,
                           t_relax=c["t-relax"])
    res = run_experiment(prof, sim)
    write_csv(c["out"], res.table)
    man.tolerances.update(v0_norm=res.v0_norm, max_constraint_defect=res.max_defect,
                          max_roundtrip=res.max_roundtrip, wave_speed=res.wave_speed,
                          family_consistency=res.consistency)
    return [c["out"]]


def cmd_decay_fit(c, man):
    table = read_csv(c["in"])
    if c["col"] not in table:
        raise ConfigurationError(f"column {c['col']!r} not in {c['in']} (have {', '.join(table)})")
    fit = fit_decay(table["t"], table[c["col"]], c["window"])
    print(f"{c['col']}: exponent {fit.exponent:.6f}  r^2 {fit.r_squared:.6f}  window {fit.window}")
    man.tolerances.update(exponent=fit.exponent, r_squared=fit.r_squared)
    if c["bound"] is not None:
        ok = fit.passes(c["bound"], c["tol"])
        print(f"check exponent >= {c['bound']} - {c['tol']}: {'PASS' if ok else 'FAIL'}")
        if not ok:
            raise CheckFailed("decay exponent below the theorem bound minus tolerance")
    return []


def c_of_rho(direction, gamma, rhos, L=40.0, h=0.1, c_tol=1e-3):
    """Speeds along a downward continuation; pinned points are reported as c = 0.

    Returns (rho, c, c_raw, pinned) arrays sorted by rho.
    """
    rhos = np.sort(np.asarray(rhos, float))[::-1]
    rows = []
    prev, stopped = None, False
    for rho in rhos:
        prof = None
        if not stopped:
            try:
                prof = solve_wave(rho, direction, gamma, L, h, prev)
            except NonConvergenceError:
                prof = None
        pinned = is_pinned(prof, c_tol)
        if pinned:
            stopped = True  # the branch does not come back below the threshold
            rows.append((rho, 0.0, prof.c if prof is not None else np.nan, 1.0))
        else:
            rows.append((rho, prof.c, prof.c, 0.0))
            prev = prof
    return np.array(rows[::-1]).T


def cmd_reproduce_figure(c, man):
    out = Path(c["out"])
    if c["figure"] == "c_of_rho":
        lo, hi, step = c["rho-grid"]
        rhos = np.round(np.arange(lo, hi + 0.5 * step, step), 12)
        rho, cs, raw, pinned = c_of_rho(c["dir"], c["gamma"], rhos, c["L"], c["h"])
        write_csv(out, {"rho": rho, "c": cs, "c_raw": raw, "pinned": pinned})
        man.tolerances.update(rho_pinned_max=float(rho[pinned > 0].max()) if pinned.any() else None)
        return [out]
    cols = {}
    for k, g in enumerate(c["gammas"]):
        thetas, M, disc, _ = polar_sweep(c["rho"], g, c["thetas"], c["L"], c["h"])
        cols["theta"] = thetas
        cols[f"M_gamma{k}"] = M
        man.tolerances[f"gamma{k}"] = g
        man.tolerances[f"max_discrepancy_gamma{k}"] = float(disc.max())
    write_csv(out, cols)
    return [out]


COMMANDS = {
    "wave": (cmd_wave, "solve for a travelling front profile"),
    "pin": (cmd_pin, "bracket the pinning threshold rho*"),
    "spectrum": (cmd_spectrum, "track the eigenvalue branch lambda_omega"),
    "melnikov": (cmd_melnikov, "Melnikov constant by integral and by finite differences"),
    "melnikov-polar": (cmd_melnikov_polar, "Melnikov constant against propagation angle"),
    "ess-spec": (cmd_ess_spec, "largest real part of the essential spectrum"),
    "simulate": (cmd_simulate, "perturbed-front simulation with interface extraction"),
    "decay-fit": (cmd_decay_fit, "power-law fit of a simulated norm series"),
    "reproduce-figure": (cmd_reproduce_figure, "plot data for the c(rho) and polar Melnikov figures"),
}


# ---------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="latticefronts", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        sp = sub.add_parser(name, help=text, description=text)
        sp.add_argument("--config", help="key = value file; flags override it")
        sp.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
        for key, spec in SCHEMAS[name].items():
            extra = f" [{spec.bounds}]" if spec.bounds else ""
            dflt = "required" if spec.required else f"default {cfgmod._fmt(spec.default)}"
            sp.add_argument(f"--{key}", dest=key, default=None, metavar=key.upper().replace("-", "_"),
                            help=f"{spec.help}{extra} ({dflt})")
    return ap


def resolve(args) -> dict:
    values = cfgmod.read_config(args.config) if args.config else {}
    for key in SCHEMAS[args.command]:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    return cfgmod.validate(args.command, values)


def _manifest_path(args, c) -> Path:
    if args.manifest:
        return Path(args.manifest)
    out = c.get("out") or None
    if out:
        return Path(f"{out}.manifest.json")
    return Path(f"{args.command}.manifest.json")


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        c = resolve(args)
    except (ConfigurationError, OSError) as exc:
        print(f"latticefronts {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    man = RunManifest(args.command, c)
    status = EXIT_OK
    outputs = []
    with Stopwatch() as sw:
        try:
            outputs = func(c, man)
        except ConfigurationError as exc:
            print(f"latticefronts {args.command}: configuration error: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
        except CheckFailed as exc:
            print(f"latticefronts {args.command}: check failed: {exc}", file=sys.stderr)
            status = EXIT_CHECK
        except ConsistencyError as exc:
            print(f"latticefronts {args.command}: consistency check failed: {exc}", file=sys.stderr)
            status = EXIT_CHECK
        except NUMERIC_ERRORS as exc:
            print(f"latticefronts {args.command}: numerical failure ({type(exc).__name__}): {exc}",
                  file=sys.stderr)
            status = EXIT_NUMERIC
        except (OSError, ValueError) as exc:
            print(f"latticefronts {args.command}: bad input: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
    man.wall_clock = sw.elapsed
    man.status = status
    for path in outputs:
        man.add_output(path)
    man.write(_manifest_path(args, c))
    return status


if __name__ == "__main__":
    sys.exit(main())
