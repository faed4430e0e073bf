import json

import numpy as np
import pytest

from bistable_phospho import calibration
from bistable_phospho.cli import main
from bistable_phospho.config import ConfigError, Entry, format_value, parse_text, parse_value, \
    read_file, resolve
from bistable_phospho.model import ModelParams


def run_cli(*argv):
    return main([str(a) for a in argv])


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    if len(lines) == 1:
        return header, np.empty((0, len(header)))
    return header, np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=object)


# --- parsing --------------------------------------------------------------

@pytest.mark.parametrize("text,value", [
    ("3", 3), ("2.5", 2.5), ("1e-3", 1e-3), ("true", True), ("off", False), ("none", None),
    ("a, b", ["a", "b"]), ("1, 2.5", [1, 2.5]), ("2.75,", [2.75]), ("'x y'", "x y"),
    ("reduced", "reduced"),
])
def test_parse_value(text, value):
    assert parse_value(text) == value


@pytest.mark.parametrize("v", [1.5, 3, True, None, [0.2, 8.0], [2.75], "auto"])
def test_format_parse_round_trip(v):
    assert parse_value(format_value(v)) == v


def test_sections_comments_and_default_section():
    s = parse_text("K_c = 3  # comment\n\n[run]\nbase_seed = 4\n[sr]\nsigmas = 0.01, 0.1\n")
    assert s["model"]["K_c"].value == 3
    assert s["run"]["base_seed"].lineno == 3 + 1
    assert s["sr"]["sigmas"].value == [0.01, 0.1]


@pytest.mark.parametrize("text,line", [
    ("[model]\nK_c\n", 2), ("[model\n", 1), ("a = 1\n\na = 2\n", 3), ("[x]\n = 3\n", 2),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(ConfigError, match=f"cfg:{line}:"):
        parse_text(text, "cfg")


def test_resolve_precedence_flags_over_file_over_defaults():
    file_sections = parse_text("[model]\nK_c = 3\ntau = 2\n[sr]\nT = 50\n", "f.conf")
    rc = resolve("sr", file_sections, {"model": {"K_c": 4.2}})
    assert rc.params.K_c == 4.2
    assert rc.params.tau == 2.0
    assert rc.options["T"] == 50.0
    assert rc.options["n_seeds"] == 10
    assert rc.params.k_vn == ModelParams().k_vn


@pytest.mark.parametrize("text,pattern", [
    ("[model]\nbogus = 1\n", "f.conf:2: unknown model parameter"),
    ("[sr]\nbogus = 1\n", "f.conf:2: unknown key 'bogus'"),
    ("[weird]\nx = 1\n", "f.conf:2: unknown section"),
    ("[model]\ntau = -1\n", "f.conf:2:"),
    ("[sr]\nn_seeds = many\n", "f.conf:2: .*integer"),
    ("[run]\njobs = -3\n", "jobs"),
])
def test_resolve_errors(text, pattern):
    with pytest.raises(ConfigError, match=pattern):
        resolve("sr", parse_text(text, "f.conf"))


def test_choice_validation():
    with pytest.raises(ConfigError, match="one of"):
        resolve("simulate", {"simulate": {"system": Entry("partial")}})


def test_other_command_sections_allowed():
    rc = resolve("simulate", parse_text("[sr]\nT = 5\n[simulate]\nt_end = 3\n"))
    assert rc.options["t_end"] == 3.0


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        read_file(tmp_path / "absent.conf")


# --- exit codes -----------------------------------------------------------

def test_exit_code_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.conf"
    cfg.write_text("[model]\nK_c = 1\nK_c = 2\n")
    assert run_cli("simulate", "-c", cfg, "-o", tmp_path / "o") == 2
    err = capsys.readouterr().err
    assert f"{cfg}:3:" in err and "duplicate" in err


def test_exit_code_bad_flag_value(tmp_path):
    assert run_cli("simulate", "-o", tmp_path, "--t-end", "soon") == 2
    assert run_cli("simulate", "-o", tmp_path, "-p", "K_c") == 2


def test_exit_code_computation_failure(tmp_path, capsys):
    assert run_cli("nullclines", "-o", tmp_path, "--total-min", 0) == 1
    assert "nullclines failed" in capsys.readouterr().err


# --- subcommands ----------------------------------------------------------

def test_simulate_reduced_and_meta_round_trip(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("simulate", "-o", a, "--t-end", 20, "--n-samples", 101) == 0
    header, rows = read_csv(a / "trajectory.csv")
    assert header == ["t", "c_no", "c_nop"] and len(rows) == 101
    meta = json.loads((a / "simulate.meta.json").read_text())
    assert meta["config"]["model"] == ModelParams().to_dict()
    assert meta["outputs"] == ["trajectory.csv"]
    assert run_cli("simulate", "-c", a / "simulate.meta.json", "-o", b) == 0
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()


def test_simulate_full_conserves_sum_and_volume_ratio(tmp_path):
    assert run_cli("simulate", "-o", tmp_path, "--system", "full", "--t-end", 100,
                   "-p", "K_c=1") == 0
    path = tmp_path / "trajectory.csv"
    header = path.read_text().splitlines()[0].split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    col = {n: data[:, i] for i, n in enumerate(header)}
    A = ModelParams().A_cyto
    assert np.max(np.abs(col["cyto_sum"] * A - 1.0)) <= 1e-6
    assert np.max(np.abs(col["Phi"] - col["V_n"] / col["V_cyto"]) / col["Phi"]) <= 1e-6


def test_simulate_stochastic_repeatable(tmp_path):
    args = ("simulate", "-p", "sigma=0.01", "-p", "tau=0.5", "--t-end", 5, "--seed", 9)
    assert run_cli(*args, "-o", tmp_path / "a") == 0
    assert run_cli(*args, "-o", tmp_path / "b") == 0
    assert (tmp_path / "a/trajectory.csv").read_bytes() == \
        (tmp_path / "b/trajectory.csv").read_bytes()
    assert run_cli("simulate", "-p", "sigma=0.01", "--system", "full", "-o", tmp_path) == 2


def test_nullclines_bistable_point(tmp_path):
    assert run_cli("nullclines", "-o", tmp_path, "-p", "K_c=14.2", "-p", "tau=5",
                   "-p", "k_nt=0.00397") == 0
    header, rows = read_csv(tmp_path / "equilibria.csv")
    assert header[:3] == ["c_no", "c_nop", "kind"]
    assert len(rows) == 3
    kinds = list(rows[:, 2])
    assert sum(k.startswith("stable") for k in kinds) == 2 and "saddle" in kinds
    for which in ("c_no", "c_nop"):
        h, r = read_csv(tmp_path / f"nullcline_{which}.csv")
        assert h == ["polyline", "total", "frac"] and len(r) > 0


def test_nullclines_empty_box_and_determinism(tmp_path):
    args = ("nullclines", "--total-min", 1e-3, "--total-max", 1e-2, "--n-total", 20)
    assert run_cli(*args, "-o", tmp_path / "a") == 0
    assert run_cli(*args, "-o", tmp_path / "b") == 0
    text = (tmp_path / "a/equilibria.csv").read_text()
    assert text.strip().count("\n") == 0 and text.startswith("c_no,c_nop")
    for name in ("equilibria.csv", "nullcline_c_no.csv", "nullcline_c_nop.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_diagram_eq1d_supercritical(tmp_path):
    assert run_cli("diagram", "-o", tmp_path, "-p", "tau=50") == 0
    data = json.loads((tmp_path / "diagram.json").read_text())
    hopfs = [e for b in data["equilibrium_branches"] for e in b["events"] if e["kind"] == "hopf"]
    assert len(hopfs) == 2
    assert all(e["criticality"] == "supercritical" for e in hopfs)
    assert (tmp_path / "diagram_eq0.csv").exists() and (tmp_path / "diagram_cycle0.csv").exists()


def test_diagram_hopf2d(tmp_path):
    assert run_cli("diagram", "--kind", "hopf2d", "-o", tmp_path) == 0
    meta = json.loads((tmp_path / "diagram.meta.json").read_text())
    data = json.loads((tmp_path / "hopf2d.json").read_text())
    assert data["status"] == "closed"
    assert len([e for e in data["events"] if e["kind"] == "bautin"]) == 2
    assert meta["summary"]
    assert (tmp_path / "hopf2d.csv").read_text().startswith("c_no,c_nop,tau,K_c,residual")


def test_diagram_cyclefold2d_reports_truncation(tmp_path):
    assert run_cli("diagram", "--kind", "cyclefold2d", "--fold-slice", 30,
                   "--cycle-seconds", 3, "-o", tmp_path) == 0
    summary = json.loads((tmp_path / "diagram.meta.json").read_text())["summary"]
    assert len(summary["fold_cycle"]) == 2
    assert len(summary["curves"]) == 4
    assert all(c["status"] in ("budget", "truncated", "boundary") for c in summary["curves"])


def test_diagram_bad_parameter_name(tmp_path):
    assert run_cli("diagram", "--free", "K_x", "-o", tmp_path) == 2


def test_regime_grid_single_cell_outside_bell(tmp_path):
    assert run_cli("regime-grid", "-o", tmp_path, "--p1-values", "80,80,1",
                   "--p2-values", "1,3,2", "--t-transient", 1500, "--t-observe", 600) == 0
    header, rows = read_csv(tmp_path / "regime_grid.csv")
    assert header == ["p1", "p2", "label"]
    assert list(rows[:, 2]) == ["unique-stable-eq"] * 2
    assert run_cli("regime-grid", "-o", tmp_path, "--p1-values", "1,2,0.5") == 2


def test_sr_single_sigma_and_jobs_independence(tmp_path):
    args = ("sr", "-p", "tau=0.5", "-p", "K_c=4.2", "--sigmas", "0.01,", "--T", 200,
            "--n-seeds", 2)
    assert run_cli(*args, "-o", tmp_path / "a") == 0
    assert run_cli(*args, "-o", tmp_path / "b", "-j", 2) == 0
    header, rows = read_csv(tmp_path / "a/sr.csv")
    assert header == ["sigma", "mean_amplitude", "stderr"] and len(rows) == 1
    for name in ("sr.csv", "sr_per_seed.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_periods(tmp_path):
    assert run_cli("periods", "-p", "tau=0.5", "--values", "2.9,3.0", "--n-traj", 2,
                   "--T", 600, "-o", tmp_path) == 0
    header, rows = read_csv(tmp_path / "periods.csv")
    assert header == ["param", "mean_period", "cv", "n_periods"] and len(rows) == 2
    assert run_cli("periods", "--thresholds", "high", "-o", tmp_path) == 2


def test_calibrate_writes_config(tmp_path, monkeypatch):
    monkeypatch.setattr(calibration, "candidates", lambda: iter([ModelParams()]))
    assert run_cli("calibrate", "-o", tmp_path) == 0
    sections = read_file(tmp_path / "calibrated.conf")
    values = {k: e.value for k, e in sections["model"].items()}
    assert ModelParams(**values) == ModelParams()
