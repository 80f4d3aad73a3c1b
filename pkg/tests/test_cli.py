import json

import numpy as np
import pytest

from biharm4.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_OK, dumps, main
from biharm4.config import DEFAULT_TOLERANCES, RunConfig, load_config
from biharm4.errors import ConfigError


def _write(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def _run(tmp_path, command, data, *extra):
    cfg = _write(tmp_path, data)
    out = tmp_path / "out"
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    return code, out


def test_defaults_are_valid():
    cfg = RunConfig()
    assert cfg.tol("identity_ratio") == DEFAULT_TOLERANCES["identity_ratio"]
    assert sorted(cfg.to_dict()["tolerances"]) == sorted(DEFAULT_TOLERANCES)


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"grid_n": 7},
    {"grid_n": 4},
    {"grid_n": 8.0},
    {"dt": -1.0},
    {"t_end": float("nan")},
    {"energy": "mixed"},
    {"m": True},
    {"tolerances": {"made_up": 1.0}},
    {"tolerances": {"pair": 0.0}},
    {"target": {"kind": "klein"}},
    {"target": {"kind": "sphere", "m": 4}},
    {"target": {"kind": "torus", "radius": 1.0}},
    {"target": {"kind": "torus"}, "m": 4},
    {"pair_epsilon": 1e6},
    [1, 2],
])
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        RunConfig.from_mapping(data)


def test_seed_override(tmp_path):
    path = _write(tmp_path, {"seed": 3})
    assert load_config(path).seed == 3
    assert load_config(path, seed=11).seed == 11
    assert load_config(None, seed=5).seed == 5


def test_malformed_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["verify-identity", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["verify-identity", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    code, _ = _run(tmp_path, "verify-identity", {"grid_n": 8, "unknown": 0})
    assert code == EXIT_CONFIG
    assert main(["no-such-command"]) == EXIT_CONFIG


def test_intrinsic_flow_is_a_config_error(tmp_path):
    code, _ = _run(tmp_path, "flow-run", {"energy": "intrinsic"})
    assert code == EXIT_CONFIG


def test_dumps_uses_17_digits():
    text = dumps({"b": 0.1, "a": [1, 2.5, np.float64(1 / 3)], "c": float("inf"), "d": True})
    assert text.splitlines()[1] == '  "a": [1, 2.5, 0.33333333333333331],'
    data = json.loads(text)
    assert data == {"a": [1, 2.5, 1 / 3], "b": 0.1, "c": None, "d": True}
    assert '"b": 0.10000000000000001' in text


def test_verify_identity_passes(tmp_path, capsys):
    code, out = _run(tmp_path, "verify-identity", {"n_seeds": 1})
    assert code == EXIT_OK
    report = json.loads((out / "verify-identity.json").read_text())
    assert report["passed"] and report["seed"] == 42
    names = [c["name"] for c in report["checks"]]
    assert names == ["zero_fields", "seed_42_ratio", "seed_42_abs"]
    assert "PASS seed_42_ratio" in capsys.readouterr().out


def test_failing_check_gives_exit_1(tmp_path):
    code, out = _run(tmp_path, "verify-identity",
                     {"n_seeds": 1, "tolerances": {"identity_ratio": 1e-20}})
    assert code == EXIT_FAIL
    report = json.loads((out / "verify-identity.json").read_text())
    assert not report["passed"]


def test_verify_potentials_and_calibration(tmp_path):
    code, out = _run(tmp_path, "verify-potentials", {})
    assert code == EXIT_OK
    code, out = _run(tmp_path, "calibrate-signs", {})
    assert code == EXIT_OK
    report = json.loads((out / "calibrate-signs.json").read_text())
    sigmas = {c["name"]: c["sigma"] for c in report["checks"]}
    assert sigmas == {"sphere_extrinsic": -1, "sphere_intrinsic": -1, "general_extrinsic": 1}


def test_calibration_on_torus_target(tmp_path):
    code, out = _run(tmp_path, "calibrate-signs",
                     {"target": {"kind": "torus", "major": 1.0, "minor": 0.4}, "amplitude": 0.05})
    assert code == EXIT_OK


def test_gauge_build(tmp_path):
    code, out = _run(tmp_path, "gauge-build", {"pair_seeds": 2})
    assert code == EXIT_OK
    report = json.loads((out / "gauge-build.json").read_text())
    ratios = [c["ratio"] for c in report["checks"] if c["name"].startswith("scaling_")]
    assert len(ratios) == 2 and all(1.9 < r < 2.1 for r in ratios)
    history = report["records"]["uhlenbeck_history"]
    assert history == sorted(history, reverse=True)


def test_flow_run_is_deterministic(tmp_path):
    data = {"t_end": 0.01, "diag_every": 5}
    code, out = _run(tmp_path, "flow-run", data)
    assert code == EXIT_OK
    csv_a = (out / "flow-run.csv").read_bytes()
    json_a = (out / "flow-run.json").read_bytes()
    code, out = _run(tmp_path, "flow-run", data)
    assert (out / "flow-run.csv").read_bytes() == csv_a
    assert (out / "flow-run.json").read_bytes() == json_a
    lines = csv_a.decode().splitlines()
    assert lines[0] == "step,t,dt,energy_ext,energy_int,grad_norm,kappa,R_t,divJ_norm,rejected_steps"
    assert len(lines) == 4  # steps 0, 5, 10


def test_seed_flag_changes_output(tmp_path):
    data = {"t_end": 0.002, "diag_every": 1}
    _, out = _run(tmp_path, "flow-run", data)
    a = (out / "flow-run.csv").read_bytes()
    _, out = _run(tmp_path, "flow-run", data, "--seed", "7")
    assert (out / "flow-run.csv").read_bytes() != a
    assert json.loads((out / "flow-run.json").read_text())["seed"] == 7
