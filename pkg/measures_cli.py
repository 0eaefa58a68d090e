import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
from dotenv import load_dotenv

from contact_measures.contact import hamiltonian_vector_field
from contact_measures.dynamics import FlowError, conservation_probe, integrate, write_trajectory_csv
from contact_measures.scenarios import ScenarioError
from contact_measures.suites import build_scenario, flow_options, run_suites
from report_generator import ConfigError, build_report, load_config, print_summary, write_report

logger = logging.getLogger("contact_measures.cli")

EXIT_OK = 0
EXIT_IDENTITY_FAILURE = 2
EXIT_CONFIG_ERROR = 3


def configure_logging():
    level = os.getenv("CONTACT_MEASURES_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s [%(levelname)s] %(message)s',
        handlers=[logging.StreamHandler()],
    )


def output_dir(config, args):
    """--out wins over CONTACT_MEASURES_OUT, which wins over the config."""
    if args.out:
        return Path(args.out)
    return Path(os.getenv("CONTACT_MEASURES_OUT") or config["output"]["dir"])


def prepare_config(args):
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    return config


def run(args):
    """Run the configured suites and write the JSON report."""
    config = prepare_config(args)
    scenario, results = run_suites(config)
    report = build_report(scenario, config, results)
    path = write_report(report, output_dir(config, args) / config["output"]["report"])
    print_summary(report)
    if not report["pass"]:
        failed = [s["name"] for s in report["suites"] if not s["pass"]]
        logger.error(f"Identity failures in suites {failed}; see {path}")
        return EXIT_IDENTITY_FAILURE
    logger.info(f"All suites passed; report at {path}")
    return EXIT_OK


def trajectory(args):
    """Integrate X_H from x0 and write the CSV with a conservation trailer."""
    config = prepare_config(args)
    scenario = build_scenario(config)
    system = scenario.system
    x0 = np.asarray(args.x0, dtype=float)
    if x0.shape != (system.dim,):
        raise ConfigError(f"--x0 needs {system.dim} coordinates for {scenario.name}, got {x0.size}")
    opts = flow_options(config).within(system.chart)
    outcome = integrate(hamiltonian_vector_field(system), x0, args.t, opts)
    trailer = ["conservation", "n/a", "n/a"]
    if outcome.complete:
        try:
            probe = conservation_probe(system, x0, args.t, opts)
            drift = "n/a" if probe.energy_drift is None else repr(probe.energy_drift)
            trailer = ["conservation", repr(probe.rate_residual), drift]
        except FlowError as e:
            logger.warning(f"Conservation probe stopped early: {e}")
    else:
        logger.warning(f"Trajectory ended early at t={outcome.reached_t:.6g} ({outcome.status.value})")
    out = output_dir(config, args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / args.csv
    write_trajectory_csv(outcome, path, trailer)
    print(f"Trajectory: {len(outcome.times)} rows, status {outcome.status.value}, written to {path}")
    return EXIT_OK


class CliParser(argparse.ArgumentParser):
    """Argument errors become ConfigError so they exit with the config-error code."""

    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def add_shared_options(parser, default=None):
    parser.add_argument("--out", default=default, help="output directory (overrides config and CONTACT_MEASURES_OUT)")
    parser.add_argument("--seed", type=int, default=default, help="random seed (overrides config)")


def build_parser():
    # sub-commands default to SUPPRESS so a flag given before the command survives
    common = CliParser(add_help=False)
    add_shared_options(common, argparse.SUPPRESS)
    parser = CliParser(description="Verify contact Hamiltonian identities and invariant measures.")
    add_shared_options(parser)
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", parents=[common], help="run the configured verification suites")
    run_parser.add_argument("config")
    run_parser.set_defaults(handler=run)

    traj_parser = commands.add_parser("trajectory", parents=[common], help="integrate one orbit of X_H to CSV")
    traj_parser.add_argument("config")
    traj_parser.add_argument("--x0", type=float, nargs="+", required=True)
    traj_parser.add_argument("--t", type=float, required=True)
    traj_parser.add_argument("--csv", default="trajectory.csv")
    traj_parser.set_defaults(handler=trajectory)
    return parser


def main(argv=None):
    load_dotenv()
    configure_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except (ConfigError, ScenarioError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
