import json
from types import SimpleNamespace

import numpy as np
import pytest

from contact_measures.scenarios import ScenarioError
from contact_measures.suites import (
    CHECKLISTS,
    SAMPLER_P_FLOOR,
    IdentityResult,
    SuiteResult,
    _sampler_points,
    new_suite,
    sampler_suite,
)
from report_generator import ConfigError, DEFAULT_CONFIG, build_report, load_config, merge_config, print_summary, write_report


@pytest.fixture
def scenario():
    return SimpleNamespace(name="damped-linear", parameters={"gamma": 1.0})


@pytest.fixture
def suite():
    result = new_suite("zeroset")
    for identity in result.identities.values():
        identity.add(0.0)
    result.finding("no obstruction found", "no obstruction found over 81 seeds (not a proof)")
    return result


def test_load_config_merges_defaults(tmp_path):
    """Missing keys come from the defaults, nested one level deep."""
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps({"scenario": {"gamma": 2.0}, "samples": 5}), encoding="utf-8")
    config = load_config(str(cfg_path))
    assert config["scenario"]["gamma"] == 2.0
    assert config["scenario"]["potential"] == "linear"
    assert config["samples"] == 5
    assert config["integrator"] == DEFAULT_CONFIG["integrator"]


def test_merge_does_not_touch_defaults():
    merge_config({"scenario": {"gamma": 3.0}})
    assert DEFAULT_CONFIG["scenario"]["gamma"] == 1.0


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.json"))


def test_load_config_invalid_json(tmp_path):
    cfg_path = tmp_path / "broken.json"
    cfg_path.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(cfg_path))


@pytest.mark.parametrize("content", [
    [1, 2], {"suites": []}, {"suites": ["plotting"]}, {"samples": 0}, {"samples": "many"},
    {"min_coverage": 1.5}, {"integrator": {"method": "euler"}}, {"integrator": {"step": -0.1}},
])
def test_load_config_rejects_bad_values(tmp_path, content):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps(content), encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config(str(cfg_path))


def test_repository_config_loads():
    config = load_config("config.json")
    assert config["suites"] == list(CHECKLISTS)
    assert config["sampler"]["metric_diagonal"] == [1.0, 2.0]


def test_identity_statistics():
    """Domain failures lower coverage but never fail an identity."""
    identity = IdentityResult("round_trip", "Phi(phi(y)) = y", 1e-7)
    identity.add(1e-9)
    identity.add(3e-9)
    identity.fail_domain()
    assert identity.max_residual == 3e-9
    assert identity.mean_residual == pytest.approx(2e-9)
    assert identity.coverage == pytest.approx(2.0 / 3.0)
    assert identity.passed
    identity.add(1e-6)
    assert not identity.passed


def test_skipped_identity_passes():
    identity = IdentityResult("measure-condition", "X(sigma) = n xi(H)", 1e-10, skipped=True)
    assert identity.passed
    assert identity.to_dict()["max_residual"] is None


def test_thresholds_are_configurable():
    suite = new_suite("sandwich", {"sandwich": {"round_trip": 1e-3}})
    assert suite.identities["round_trip"].threshold == 1e-3
    assert suite.identities["phi1_pullback"].threshold == 1e-5


def test_unknown_suite():
    with pytest.raises(KeyError):
        new_suite("plotting")


def test_build_report(scenario, suite):
    """Every checklist entry appears exactly once with its statistics."""
    report = build_report(scenario, {"seed": 42, "samples": 20}, [suite])
    assert report["scenario"] == "damped-linear"
    assert report["pass"]
    entries = report["suites"][0]["identities"]
    assert [entry["ref"] for entry in entries] == [key for key, _ in CHECKLISTS["zeroset"]]
    for entry in entries:
        assert set(entry) >= {"ref", "quote", "max_residual", "mean_residual", "threshold", "pass", "coverage"}


def test_failed_identity_fails_report(scenario):
    result = new_suite("sampler")
    result.identities["sigma-expansion"].add(0.5)
    report = build_report(scenario, {"seed": 1, "samples": 1}, [result])
    assert not report["pass"]
    assert not report["suites"][0]["pass"]


def test_print_summary_output(capsys, scenario, suite):
    report = build_report(scenario, {"seed": 42, "samples": 20}, [suite])
    print_summary(report)
    captured = capsys.readouterr()
    assert "Verification Report" in captured.out
    assert "[PASS] zeroset" in captured.out
    assert "surface-solve: ok" in captured.out
    assert "no obstruction found" in captured.out


def test_write_report_is_deterministic(tmp_path, scenario, suite):
    report = build_report(scenario, {"seed": 42, "samples": 20}, [suite])
    first = write_report(report, tmp_path / "a" / "report.json")
    second = write_report(report, tmp_path / "b" / "report.json")
    assert first.read_bytes() == second.read_bytes()
    assert json.loads(first.read_text(encoding="utf-8"))["seed"] == 42


def test_suite_result_round_trip_to_dict(suite):
    data = SuiteResult("zeroset", suite.identities, suite.findings).to_dict()
    assert data["name"] == "zeroset"
    assert data["findings"][0]["kind"] == "no obstruction found"


def test_identity_below_min_coverage_fails():
    """Small residuals do not rescue an identity that was mostly out of the domain."""
    identity = IdentityResult("round_trip", "Phi(phi(y)) = y", 1e-7, min_coverage=0.5)
    identity.add(1e-9)
    identity.fail_domain()
    assert identity.passed
    identity.fail_domain()
    assert identity.coverage == pytest.approx(1.0 / 3.0)
    assert not identity.passed


def test_identity_with_no_coverage_fails():
    identity = new_suite("measure", min_coverage=0.5).identities["measure-pushforward"]
    identity.fail_domain()
    identity.fail_domain()
    assert identity.max_residual is None
    assert not identity.passed


def test_sampler_suite_rejects_a_box_inside_the_tube():
    """Every point of a 0.05-wide box has |p| < 0.1, so no sample can be drawn."""
    with pytest.raises(ScenarioError):
        sampler_suite(None, {"scenario": {"sample_width": 0.05}, "samples": 1}, np.random.default_rng(0))


def test_sampler_points_clear_the_tube():
    points = _sampler_points(np.random.default_rng(3), 2, 10, 0.2)
    assert len(points) == 10
    assert all(np.linalg.norm(x[2:]) >= SAMPLER_P_FLOOR for x in points)
