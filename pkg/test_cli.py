import csv
import json
from pathlib import Path

import numpy as np
import pytest

import measures_cli
from contact_measures.suites import new_suite
from report_generator import ConfigError

GOLDEN = Path(__file__).parent / "golden_sandwich_coverage.json"


def write_config(tmp_path, **overrides):
    config = {
        "scenario": {"name": "dissipative", "gamma": 1.0, "potential": "linear", "half_width": 20.0},
        "suites": ["sandwich"],
        "samples": 2,
        "seed": 42,
    }
    config.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_run_success(tmp_path, mocker, capsys):
    """All suites passing gives exit code 0 and a report file."""
    suite = new_suite("zeroset")
    for identity in suite.identities.values():
        identity.add(0.0)
    scenario = mocker.Mock(parameters={})
    scenario.name = "damped-linear"
    mocker.patch("measures_cli.run_suites", return_value=(scenario, [suite]))
    out = tmp_path / "out"
    code = measures_cli.main(["--out", str(out), "run", write_config(tmp_path)])
    assert code == measures_cli.EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["suites"][0]["name"] == "zeroset"
    assert "[PASS] zeroset" in capsys.readouterr().out


def test_run_identity_failure(tmp_path, mocker):
    suite = new_suite("sampler")
    suite.identities["sigma-expansion"].add(1.0)
    scenario = mocker.Mock(parameters={})
    scenario.name = "cotangent-sampler"
    mocker.patch("measures_cli.run_suites", return_value=(scenario, [suite]))
    code = measures_cli.main(["--out", str(tmp_path), "run", write_config(tmp_path)])
    assert code == measures_cli.EXIT_IDENTITY_FAILURE


def test_seed_flag_overrides_config(tmp_path, mocker):
    run_suites = mocker.patch("measures_cli.run_suites", side_effect=ConfigError("stop"))
    code = measures_cli.main(["--seed", "7", "--out", str(tmp_path), "run", write_config(tmp_path)])
    assert code == measures_cli.EXIT_CONFIG_ERROR
    assert run_suites.call_args[0][0]["seed"] == 7


@pytest.mark.parametrize("argv", [
    ["run", "{config}", "--out", "{out}", "--seed", "7"],
    ["--out", "{out}", "--seed", "7", "run", "{config}"],
])
def test_shared_flags_in_either_position(tmp_path, mocker, argv):
    run_suites = mocker.patch("measures_cli.run_suites", side_effect=ConfigError("stop"))
    out = tmp_path / "out"
    args = [item.format(config=write_config(tmp_path), out=out) for item in argv]
    parsed = measures_cli.build_parser().parse_args(args)
    assert parsed.out == str(out)
    assert parsed.seed == 7
    measures_cli.main(args)
    assert run_suites.call_args[0][0]["seed"] == 7


def test_trajectory_flags_after_subcommand(tmp_path):
    path = write_config(tmp_path)
    code = measures_cli.main(["trajectory", path, "--x0", "0", "0", "0", "0", "0", "--t", "0", "--out", str(tmp_path)])
    assert code == measures_cli.EXIT_OK
    assert (tmp_path / "trajectory.csv").exists()


@pytest.mark.parametrize("argv", [[], ["run"], ["run", "config.json", "--bogus"], ["plot", "config.json"],
                                  ["--seed", "many", "run", "config.json"]])
def test_bad_invocation_is_a_config_error(argv, caplog):
    """Usage errors exit 3, never 2, which is reserved for failed identities."""
    assert measures_cli.main(argv) == measures_cli.EXIT_CONFIG_ERROR
    assert "Configuration error" in caplog.text


def test_internal_error_propagates(tmp_path, mocker):
    """A KeyError from inside the suites is a bug, not a config error."""
    mocker.patch("measures_cli.run_suites", side_effect=KeyError("phi2"))
    with pytest.raises(KeyError):
        measures_cli.main(["--out", str(tmp_path), "run", write_config(tmp_path)])


def test_sampler_box_inside_the_tube_is_a_config_error(tmp_path):
    path = write_config(tmp_path, scenario={"sample_width": 0.05}, suites=["sampler"])
    assert measures_cli.main(["--out", str(tmp_path), "run", path]) == measures_cli.EXIT_CONFIG_ERROR


def test_invalid_integrator_is_a_config_error(tmp_path):
    path = write_config(tmp_path, integrator={"method": "euler"})
    assert measures_cli.main(["--out", str(tmp_path), "run", path]) == measures_cli.EXIT_CONFIG_ERROR


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CONTACT_MEASURES_OUT", str(tmp_path / "env"))
    args = measures_cli.build_parser().parse_args(["run", "config.json"])
    assert measures_cli.output_dir({"output": {"dir": "out"}}, args) == tmp_path / "env"


def test_zero_gamma_is_a_config_error(tmp_path, caplog):
    """A vanishing Reeb rate makes the scenario invalid."""
    path = write_config(tmp_path, scenario={"gamma": 0.0})
    assert measures_cli.main(["--out", str(tmp_path), "run", path]) == measures_cli.EXIT_CONFIG_ERROR
    assert "gamma" in caplog.text


def test_unknown_suite_is_a_config_error(tmp_path):
    path = write_config(tmp_path, suites=["plotting"])
    assert measures_cli.main(["--out", str(tmp_path), "run", path]) == measures_cli.EXIT_CONFIG_ERROR


def test_missing_config(tmp_path):
    code = measures_cli.main(["run", str(tmp_path / "absent.json")])
    assert code == measures_cli.EXIT_CONFIG_ERROR


def test_harmonic_obstruction_is_a_finding(tmp_path):
    """An equilibrium on the zero set is reported, and the run still exits 0."""
    path = write_config(tmp_path, scenario={"potential": "harmonic"}, suites=["measure"], samples=4)
    out = tmp_path / "out"
    assert measures_cli.main(["--out", str(out), "run", path]) == measures_cli.EXIT_OK
    suite = json.loads((out / "report.json").read_text(encoding="utf-8"))["suites"][0]
    assert any(finding["kind"] == "obstruction: equilibrium found" for finding in suite["findings"])
    skipped = {entry["ref"] for entry in suite["identities"] if entry["skipped"]}
    assert "measure-condition" in skipped


def test_all_suites_pass_on_linear_scenario(tmp_path):
    path = write_config(tmp_path, suites=["contact-identities", "zeroset", "measure", "sandwich", "sampler"],
                        samples=3)
    out = tmp_path / "out"
    assert measures_cli.main(["--out", str(out), "run", path]) == measures_cli.EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert [suite["name"] for suite in report["suites"]] == ["contact-identities", "zeroset", "measure", "sandwich",
                                                              "sampler"]
    assert report["pass"]


def test_golden_sandwich_run(tmp_path):
    """An escaping sample is reported as a domain failure and the run still passes."""
    golden = json.loads(GOLDEN.read_text(encoding="utf-8"))
    path = write_config(tmp_path,
                        scenario={"half_width": golden["half_width"]},
                        sandwich={"points": golden["points"]})
    out = tmp_path / "out"
    assert measures_cli.main(["--out", str(out), "run", path]) == measures_cli.EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    suite = report["suites"][0]
    assert [entry["ref"] for entry in suite["identities"]] == golden["suite_identities"]
    by_ref = {entry["ref"]: entry for entry in suite["identities"]}
    for check in golden["checks"]:
        assert by_ref[check]["coverage"] == golden["coverage"]
        assert by_ref[check]["samples"] == golden["samples"]
        assert by_ref[check]["pass"]
    assert any(finding["kind"] == "domain failure" for finding in suite["findings"])

    again = tmp_path / "again"
    assert measures_cli.main(["--out", str(again), "run", path]) == measures_cli.EXIT_OK
    assert (out / "report.json").read_bytes() == (again / "report.json").read_bytes()


def test_trajectory_dissipates_energy(tmp_path):
    """|p|^2/2 + V decreases along the damped orbit."""
    path = write_config(tmp_path)
    code = measures_cli.main(["--out", str(tmp_path), "trajectory", path,
                              "--x0", "0", "0", "0", "1", "-1", "--t", "5"])
    assert code == measures_cli.EXIT_OK
    rows = read_rows(tmp_path / "trajectory.csv")
    assert rows[0] == ["t", "x0", "x1", "x2", "x3", "x4", "status"]
    data = np.array([[float(v) for v in row[:6]] for row in rows[1:-1]])
    energy = 0.5 * (data[:, 4] ** 2 + data[:, 5] ** 2) + data[:, 2] + data[:, 3]
    assert np.all(np.diff(energy) <= 1e-9)
    assert rows[-2][-1] == "complete"
    assert rows[-1][0] == "conservation"
    assert float(rows[-1][1]) <= 1e-5


def test_trajectory_zero_time(tmp_path):
    path = write_config(tmp_path)
    measures_cli.main(["--out", str(tmp_path), "trajectory", path, "--x0", "0", "0", "0", "0", "0", "--t", "0"])
    rows = read_rows(tmp_path / "trajectory.csv")
    assert len(rows) == 3
    assert rows[1][-1] == "complete"


def test_trajectory_escape(tmp_path):
    """A fast orbit leaves the chart; the CSV is truncated and the exit code stays 0."""
    path = write_config(tmp_path)
    code = measures_cli.main(["--out", str(tmp_path), "trajectory", path,
                              "--x0", "0", "0", "0", "19", "0", "--t", "5"])
    assert code == measures_cli.EXIT_OK
    rows = read_rows(tmp_path / "trajectory.csv")
    assert rows[-2][-1] == "escaped"
    assert float(rows[-2][0]) < 5.0


def test_trajectory_needs_matching_dimension(tmp_path):
    path = write_config(tmp_path)
    code = measures_cli.main(["--out", str(tmp_path), "trajectory", path, "--x0", "0", "0", "--t", "1"])
    assert code == measures_cli.EXIT_CONFIG_ERROR
