import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latticefronts import cli
from latticefronts.config import (SCHEMAS, WORKERS_ENV, atomic_write, csv_text, format_config, read_config,
                                  read_csv, sha256, validate, worker_count)
from latticefronts.lattice import Direction
from latticefronts.wave import ConfigurationError

SAMPLES = {"dir": "2,1", "out": "x.csv", "profile": "p.txt", "in": "s.csv", "window": "1,2",
           "bound": "0.5", "perturb": "random_local", "figure": "melnikov_polar", "p": "2",
           "gammas": "1e-5,1e-4", "rho-grid": "0,0.9,0.05"}


def _sample(key, spec):
    if key in SAMPLES:
        return SAMPLES[key]
    if spec.default is None:
        return "1"
    return format_config({key: spec.default}).split(" = ", 1)[1].strip()


@pytest.mark.parametrize("command", sorted(SCHEMAS))
def test_every_flag_roundtrips_through_config_file(command, tmp_path):
    ap = cli.build_parser()
    helptext = ap._subparsers._group_actions[0].choices[command].format_help()
    raw = {k: _sample(k, s) for k, s in SCHEMAS[command].items()}
    flags = []
    for k, v in raw.items():
        assert f"--{k}" in helptext
        flags += [f"--{k}", v]
    from_flags = cli.resolve(ap.parse_args([command, *flags]))
    (tmp_path / "c.cfg").write_text(format_config(from_flags))
    from_file = cli.resolve(ap.parse_args([command, "--config", str(tmp_path / "c.cfg")]))
    assert from_file == from_flags


def test_flags_override_file(tmp_path):
    (tmp_path / "c.cfg").write_text("rho = 0.3  # comment\n\ndir = 1,1\nout = a.txt\n")
    ap = cli.build_parser()
    c = cli.resolve(ap.parse_args(["wave", "--config", str(tmp_path / "c.cfg"), "--rho", "0.5"]))
    assert c["rho"] == 0.5 and c["dir"] == Direction(1, 1) and c["gamma"] == 1e-6


@pytest.mark.parametrize("values", [{"rho": "1.0", "out": "a"}, {"gamma": "0", "out": "a"},
                                    {"h": "-0.1", "out": "a"}, {"dir": "2,4", "out": "a"},
                                    {"bogus": "1", "out": "a"}, {"rho": "nan", "out": "a"}, {}])
def test_schema_rejects(values):
    with pytest.raises(ConfigurationError):
        validate("wave", values)


def test_config_file_errors(tmp_path):
    (tmp_path / "a.cfg").write_text("rho = 0.1\nrho = 0.2\n")
    with pytest.raises(ConfigurationError):
        read_config(tmp_path / "a.cfg")
    (tmp_path / "b.cfg").write_text("just words\n")
    with pytest.raises(ConfigurationError):
        read_config(tmp_path / "b.cfg")


@settings(max_examples=30)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_csv_full_precision(xs):
    text = csv_text({"a": xs, "b": xs[::-1]})
    lines = text.splitlines()
    assert lines[0] == "a,b"
    back = [float(r.split(",")[0]) for r in lines[1:]]
    assert back == [float(x) for x in xs]


def test_atomic_write_leaves_no_temp(tmp_path):
    atomic_write(tmp_path / "sub" / "f.txt", "hello\n")
    assert (tmp_path / "sub" / "f.txt").read_text() == "hello\n"
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["f.txt"]


def test_worker_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert worker_count() == 3
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ConfigurationError):
        worker_count()


def test_exit_code_config(tmp_path, capsys):
    assert cli.main(["wave", "--rho", "1.5", "--out", str(tmp_path / "w.txt")]) == 2
    assert cli.main(["melnikov", "--profile", str(tmp_path / "missing.txt"),
                     "--manifest", str(tmp_path / "m.json")]) == 2


@pytest.fixture(scope="module")
def profile_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("prof")
    path = d / "p.txt"
    assert cli.main(["wave", "--rho", "0.9", "--dir", "1,0", "--gamma", "1e-5", "--out", str(path)]) == 0
    return path


def test_wave_manifest(profile_file):
    man = json.loads(open(f"{profile_file}.manifest.json").read())
    assert man["status"] == 0 and man["command"] == "wave"
    assert man["outputs"][str(profile_file)] == sha256(profile_file)
    assert man["config"]["dir"] == "1,0"
    assert man["tolerances"]["newton_residual"] < 1e-9


def test_spectrum_and_melnikov(profile_file, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert cli.main(["spectrum", "--profile", str(profile_file), "--samples", "9", "--out", str(out)]) == 0
    tab = read_csv(out)
    assert list(tab) == ["omega", "re_lambda", "im_lambda"]
    assert np.allclose(tab["re_lambda"], 2 * (np.cos(tab["omega"]) - 1), atol=1e-10)
    assert cli.main(["melnikov", "--profile", str(profile_file), "--manifest", str(tmp_path / "m.json")]) == 0
    text = capsys.readouterr().out
    assert "M_integral" in text and "M_fd" in text and "discrepancy" in text


def test_simulate_unperturbed_deterministic(profile_file, tmp_path):
    args = ["simulate", "--profile", str(profile_file), "--amp", "0", "--T", "5", "--n-half", "40",
            "--l-count", "16", "--t-relax", "20"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    tab = read_csv(a)
    assert list(tab) == ["t", "theta_l2", "theta_linf", "thetadiff_l2", "thetadiff_linf", "w_p2", "w_pinf"]
    for k in list(tab)[1:]:
        assert np.max(tab[k]) <= 1e-9
    # all-zero series cannot be fitted: numerical failure exit code
    assert cli.main(["decay-fit", "--in", str(a), "--col", "w_pinf", "--manifest", str(tmp_path / "m.json")]) == 3


def test_decay_fit_check_exit_codes(tmp_path, capsys):
    t = np.linspace(0, 100, 101)
    path = tmp_path / "s.csv"
    path.write_text(csv_text({"t": t, "w_pinf": (1 + t) ** -1.6}))
    m = str(tmp_path / "m.json")
    assert cli.main(["decay-fit", "--in", str(path), "--bound", "1.5", "--manifest", m]) == 0
    assert cli.main(["decay-fit", "--in", str(path), "--bound", "2.0", "--manifest", m]) == 4
    assert "FAIL" in capsys.readouterr().out
    assert cli.main(["decay-fit", "--in", str(path), "--col", "nope", "--manifest", m]) == 2


def test_pin_command(tmp_path, capsys):
    out = tmp_path / "branch.csv"
    assert cli.main(["pin", "--dir", "1,0", "--gamma", "1e-6", "--out", str(out)]) == 0
    man = json.loads(open(f"{out}.manifest.json").read())
    assert man["tolerances"]["width"] <= 1e-4
    assert "rho*" in capsys.readouterr().out


def test_melnikov_polar(tmp_path):
    out = tmp_path / "polar.csv"
    assert cli.main(["melnikov-polar", "--rho", "0.9", "--gamma", "1e-5", "--thetas", "64", "--out", str(out)]) == 0
    tab = read_csv(out)
    assert tab["theta"].size == 64 and np.all(tab["M"] > 0)
    # lattice symmetry: M(theta) = M(pi/2 - theta) = M(theta + pi/2)
    M = tab["M"]
    assert np.allclose(M, np.roll(M, 16), rtol=1e-6)
    assert np.allclose(M[:17], M[16::-1], rtol=1e-6)  # theta_k -> pi/2 - theta_k = theta_{16-k}
    assert M[0] == pytest.approx(2.0, abs=1e-4)


def test_figure_polar_gamma_robust(tmp_path):
    out = tmp_path / "fig.csv"
    assert cli.main(["reproduce-figure", "--figure", "melnikov_polar", "--thetas", "8", "--out", str(out)]) == 0
    tab = read_csv(out)
    assert np.allclose(tab["M_gamma0"], tab["M_gamma1"], rtol=0.05)


@pytest.mark.parametrize("d", ["1,0", "1,1"])
def test_figure_c_of_rho_shape(tmp_path, d):
    out = tmp_path / "cr.csv"
    assert cli.main(["reproduce-figure", "--figure", "c_of_rho", "--dir", d, "--out", str(out)]) == 0
    tab = read_csv(out)
    pinned = tab["pinned"] > 0
    assert pinned[0] and not pinned[-1]
    k = np.argmin(pinned)  # first travelling point
    assert np.all(pinned[:k]) and not np.any(pinned[k:])
    assert np.all(tab["c"][:k] == 0)
    assert np.all(np.diff(np.abs(tab["c"][k:])) > 0)
