import json

import numpy as np
import pytest

import todaflow.harness as harness
from todaflow.cli import main
from todaflow.errors import ParseError, StepFloor, ValidationError
from todaflow.harness import (
    CSV_VERSION,
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_OK,
    coefficient_function,
    config_from_dict,
    initial_function,
    load_config,
    parse_override,
    read_trajectory_csv,
    run,
)
from todaflow.torusfield import Grid, read_snapshot
from todaflow.suite import standard_suite

MINIMAL = {"dim": 1, "N": 128, "n": 1, "matrix": "identity", "h": ["const 1"], "u0": ["zero"]}
TODA = {
    "dim": 1, "N": 128, "n": 2, "matrix": "cartan",
    "h": ["1 + 0.5*cos(2 pi x)"], "u0": ["0.1*sin(2 pi x)"],
    "step": {"t_end": 20.0},
}
COLUMNS = ["t", "tau", "K", "dissipation", "grad_energy", "residual_L2", "residual_Linf",
           "entropy_gap"]


def write_cfg(tmp_path, raw, name="cfg"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(raw))
    return path


# -- loading -----------------------------------------------------------------------------

def test_minimal_config(tmp_path):
    cfg = load_config(write_cfg(tmp_path, MINIMAL))
    assert cfg.matrix.lam == 1.0
    assert cfg.matrix.beta == pytest.approx(0.9617338, abs=1e-7)
    assert cfg.problem.h_max == (1.0,)
    assert cfg.u0.mean_defect() == 0.0


def test_cartan_config():
    cfg = config_from_dict({**MINIMAL, "n": 2, "matrix": "cartan"})
    assert cfg.matrix.lam == pytest.approx(1 / 3, rel=1e-14)
    assert cfg.n == 2 and len(cfg.problem.h) == 2


def test_negative_coefficient_rejected():
    with pytest.raises(ValidationError, match="negativity on the grid") as info:
        config_from_dict({**MINIMAL, "h": ["1 + 1.5*cos(2 pi x)"]})
    assert info.value.field == "h[0]"


def test_inadmissible_matrix_rejected():
    with pytest.raises(ValidationError, match="admissibility") as info:
        config_from_dict({**MINIMAL, "n": 2, "matrix": [[8 * np.pi, 0], [0, 1]]})
    assert info.value.field == "matrix"


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "dim": 1,\n  "N": 64,\n  "n": 1\n  "matrix": "identity"\n}\n')
    with pytest.raises(ParseError, match="line 5"):
        load_config(path)


def test_missing_and_unknown_keys():
    with pytest.raises(ValidationError):
        config_from_dict({"dim": 1, "n": 1})
    with pytest.raises(ValidationError, match="unknown keys"):
        config_from_dict({**MINIMAL, "step": {"tau00": 1.0}})


def test_overrides(tmp_path):
    path = write_cfg(tmp_path, MINIMAL)
    cfg = load_config(path, ["step.t_end=3.5", "N=64", "matrix=\"cartan\"", "n=3"])
    assert cfg.step.t_end == 3.5 and cfg.N == 64 and cfg.n == 3
    assert parse_override("output=runs/x") == ("output", "runs/x")
    with pytest.raises(ParseError):
        parse_override("no-equals")


def test_expression_family():
    g = Grid(32)
    x = g.coords()[0]
    np.testing.assert_allclose(g.sample(coefficient_function("1 - 0.25*cos(2 pi 3 x)", 1)).values,
                               1 - 0.25 * np.cos(6 * np.pi * x))
    np.testing.assert_array_equal(g.sample(coefficient_function("const 2.5", 1)).values, 2.5)
    prod = coefficient_function({"product": ["const 2", "1 + 0.5*cos(2 pi x)"]}, 1)
    np.testing.assert_allclose(g.sample(prod).values, 2 + np.cos(2 * np.pi * x))
    bump = g.sample(coefficient_function({"gaussian": {"sigma": 0.1, "center": [0.0]}}, 1)).values
    assert bump[0] == 1.0 and bump[1] == pytest.approx(bump[-1], rel=1e-12)
    u = g.sample(initial_function("0.3*cos(2 pi x) - 0.1*sin(2 pi 2 x)", 1)).values
    np.testing.assert_allclose(u, 0.3 * np.cos(2 * np.pi * x) - 0.1 * np.sin(4 * np.pi * x))
    g2 = Grid(16, 2)
    X, Y = g2.coords()
    np.testing.assert_allclose(g2.sample(initial_function("0.2*sin(2 pi y)", 2)).values,
                               0.2 * np.sin(2 * np.pi * Y))
    modes = {"modes": [{"kind": "cos", "amplitude": 0.5, "k": [1, 1]}]}
    np.testing.assert_allclose(g2.sample(initial_function(modes, 2)).values,
                               0.5 * np.cos(2 * np.pi * (X + Y)))


@pytest.mark.parametrize("bad", ["0.1*tan(2 pi x)", "0.1*cos(2 pi x) 0.2*cos(2 pi x)",
                                 " + ".join(["0.1*cos(2 pi x)"] * 9)])
def test_initial_data_rejects_outside_family(bad):
    with pytest.raises(ValidationError):
        config_from_dict({**MINIMAL, "u0": [bad]})


# -- running ------------------------------------------------------------------------------

def test_trivial_run(tmp_path):
    code = run(config_from_dict(MINIMAL), tmp_path)
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["termination"] == "steady"
    assert report["steps"] == 1
    assert report["certification"]["pass"]


def test_toda_run_artifacts(tmp_path):
    code = run(config_from_dict(TODA, name="toda"), tmp_path)
    assert code == EXIT_OK
    report = json.loads((tmp_path / "report.json").read_text())
    for key in ("termination", "K0", "K_final", "entropy_drop", "min_step", "max_step",
                "rejections", "certification"):
        assert key in report
    assert report["termination"] == "steady"
    assert report["entropy_monotone"]
    assert report["certification"]["pass"]
    header = (tmp_path / "trajectory.csv").read_text().splitlines()[0]
    assert header.startswith(f"# {CSV_VERSION}: ")
    cols = header.split(": ", 1)[1].split(",")
    assert cols[: len(COLUMNS)] == COLUMNS
    assert cols[len(COLUMNS):len(COLUMNS) + 4] == ["sup_norm_1", "sup_norm_2", "mean_1", "mean_2"]
    series = read_trajectory_csv(tmp_path / "trajectory.csv")
    assert series["K"][0] == report["K0"] and series["K"][-1] == report["K_final"]
    final = read_snapshot(tmp_path / "final.bin")
    refined = read_snapshot(tmp_path / "refined.bin")
    assert len(final) == len(refined) == 2
    assert np.abs(final[0].values - refined[0].values).max() < 1e-6


def test_run_is_deterministic(tmp_path):
    raw = {**TODA, "u0": ["0.5*cos(2 pi x)", "0.3*sin(2 pi 2 x)"], "h": ["1 + 1.0*cos(2 pi x)"]}
    for sub in ("a", "b"):
        assert run(config_from_dict(raw), tmp_path / sub) == EXIT_OK
    for name in ("trajectory.csv", "final.bin", "refined.bin", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_run_failure_exit_code(tmp_path, monkeypatch):
    cfg = config_from_dict(TODA)

    def floor(u0, prob, ctl):
        raise StepFloor("step fell below tau_min", state=u0, tau=1e-11)

    monkeypatch.setattr(harness, "evolve", floor)
    assert run(cfg, tmp_path) == EXIT_FAILURE
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["termination"] == "failure" and report["error"] == "StepFloor"
    assert (tmp_path / "failure_state.bin").exists()


def test_max_steps_is_incomplete(tmp_path):
    cfg = config_from_dict({**TODA, "step": {"max_steps": 5}})
    assert run(cfg, tmp_path) == harness.EXIT_INCOMPLETE


def test_entropy_revalidation():
    assert harness.entropy_series_monotone(np.array([1.0, 0.5, 0.5 + 1e-9]), 1e-8)
    assert not harness.entropy_series_monotone(np.array([1.0, 0.5, 0.6]), 1e-8)


def test_suite_configs_all_load():
    suite = standard_suite()
    assert len(suite) == 33
    for name, raw in suite.items():
        cfg = config_from_dict(raw, name=name)
        assert cfg.u0.mean_defect() <= 1e-15


# -- command line ----------------------------------------------------------------------------

def test_cli_run_and_certify(tmp_path, capsys):
    path = write_cfg(tmp_path, TODA, "toda")
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out)]) == EXIT_OK
    assert main(["certify", str(out / "refined.bin"), str(path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["pass"] and report["resolutions"] == [128, 256]
    # the initial state is far from steady
    init = tmp_path / "init.bin"
    harness.write_snapshot(init, config_from_dict(TODA).u0.u)
    assert main(["certify", str(init), str(path)]) == harness.EXIT_INCOMPLETE


def test_cli_config_error(tmp_path, capsys):
    path = write_cfg(tmp_path, {**MINIMAL, "n": 2, "matrix": [[8 * np.pi, 0], [0, 1]]})
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out)]) == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["category"] == "ConfigError" and err["field"] == "matrix"
    assert json.loads((out / "report.json").read_text())["error"] == "ValidationError"


def test_cli_override(tmp_path):
    path = write_cfg(tmp_path, TODA)
    out = tmp_path / "out"
    assert main(["run", str(path), "--out", str(out), "--override", "step.max_steps=3"]) == 1


def test_cli_sweep(tmp_path, monkeypatch, capsys):
    cfgs = tmp_path / "cfgs"
    cfgs.mkdir()
    write_cfg(cfgs, MINIMAL, "a")
    write_cfg(cfgs, {**MINIMAL, "u0": ["0.2*cos(2 pi x)"]}, "b")
    write_cfg(cfgs, {**MINIMAL, "h": ["1 + 2*cos(2 pi x)"]}, "c")
    monkeypatch.setenv("TODAFLOW_WORKERS", "2")
    code = main(["sweep", str(cfgs / "*.json"), "--out", str(tmp_path / "runs")])
    assert code == EXIT_CONFIG
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[0] for line in lines] == ["0", "0", "3"]
    assert (tmp_path / "runs" / "b" / "trajectory.csv").exists()
    assert main(["sweep", str(tmp_path / "none*.json")]) == EXIT_CONFIG
