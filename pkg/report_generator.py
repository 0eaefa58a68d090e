import json
import logging
import os
from copy import deepcopy
from pathlib import Path

from contact_measures.suites import SUITES, flow_options

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = {
    "scenario": {
        "name": "dissipative",
        "gamma": 1.0,
        "potential": "linear",
        "half_width": 20.0,
        "sample_width": 1.0,
        "dof": 2,
    },
    "suites": ["contact-identities", "zeroset", "measure", "sandwich", "sampler"],
    "samples": 20,
    "seed": 42,
    "search_grid": 3,
    "integrator": {
        "method": "rk45",
        "rtol": 1e-10,
        "atol": 1e-10,
        "step": 1e-2,
        "fd_step": 1e-5,
    },
    "thresholds": {},
    "min_coverage": 0.5,
    "sampler": {
        "dof": 2,
        "metric_diagonal": None,
        "epsilon": 1e-3,
    },
    "sandwich": {
        "points": None,
        "t_check": 1.0,
    },
    "output": {
        "dir": "out",
        "report": "report.json",
    },
}


class ConfigError(Exception):
    """Custom exception for unreadable or invalid run configurations."""
    pass


def merge_config(config, defaults=DEFAULT_CONFIG):
    """Fill missing keys from the defaults; nested dicts are merged one level deep."""
    merged = deepcopy(defaults)
    for key, value in config.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key].update(value)
        else:
            merged[key] = value
    return merged


def load_config(config_file="config.json"):
    """Load a run configuration and merge it over the default settings."""
    if not os.path.exists(config_file):
        logger.error(f"Config file {config_file} not found")
        raise ConfigError(f"config file {config_file} not found")
    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            config = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Invalid config {config_file}: {e}")
        raise ConfigError(f"invalid JSON in {config_file}: {e}") from e
    if not isinstance(config, dict):
        raise ConfigError(f"{config_file} must hold a JSON object")
    config = merge_config(config)
    if not isinstance(config["suites"], list) or not config["suites"]:
        raise ConfigError("'suites' must be a non-empty list")
    unknown = [name for name in config["suites"] if name not in SUITES]
    if unknown:
        raise ConfigError(f"unknown suites {unknown}; choose from {list(SUITES)}")
    try:
        samples = int(config["samples"])
        min_coverage = float(config["min_coverage"])
        flow_options(config)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid settings in {config_file}: {e}") from e
    if samples < 1:
        raise ConfigError("'samples' must be positive")
    if not 0.0 <= min_coverage <= 1.0:
        raise ConfigError("'min_coverage' must lie in [0, 1]")
    return config


def build_report(scenario, config, results):
    """Assemble the JSON-ready diagnostics document."""
    return {
        "scenario": scenario.name,
        "parameters": dict(scenario.parameters),
        "seed": int(config["seed"]),
        "samples": int(config["samples"]),
        "pass": all(result.passed for result in results),
        "suites": [result.to_dict() for result in results],
    }


def print_summary(report):
    """Print a concise summary report."""
    print("\n=== Verification Report ===")
    print(f"Scenario: {report['scenario']}")
    print(f"Seed: {report['seed']}")
    for suite in report["suites"]:
        print(f"[{'PASS' if suite['pass'] else 'FAIL'}] {suite['name']}")
        for identity in suite["identities"]:
            if identity["skipped"]:
                status = "skipped"
            else:
                status = "ok" if identity["pass"] else "FAILED"
            worst = identity["max_residual"]
            shown = "n/a" if worst is None else f"{worst:.3e}"
            print(f"  - {identity['ref']}: {status} (max {shown}, threshold {identity['threshold']:.1e}, "
                  f"coverage {identity['coverage']:.2f})")
        for finding in suite["findings"]:
            print(f"  * {finding['kind']}: {finding['message']}")
    print("===========================")


def write_report(report, path):
    """Write the report as JSON; identical reports produce identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(report, f, indent=2)
        f.write("\n")
    logger.info(f"Report written to {path}")
    return path
