#!/usr/bin/env python3
"""
FACT simulator
Federated multi-source domain adaptation on desk-scale synthetic or IDX digit domains.
"""
import argparse
import logging
import sys

from factsim import SWEEP_AXES, FactExperiment, render_results
from factsim.config_models import Variant
from factsim.utils import FactSimError

logger = logging.getLogger("factsim.cli")


def setup_logging(level=logging.INFO):
    """Set up logging configuration."""
    logging.basicConfig(
        level=level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Run FACT federated domain-adaptation experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    commands = parser.add_subparsers(dest="command", required=True)

    def experiment_args(sub):
        sub.add_argument("config", nargs="?", default="config.json",
                         help="Path to config file (default: config.json)")
        sub.add_argument("--seed", type=int, help="Run a single seed")
        sub.add_argument("--repeats", type=positive_int, help="Number of consecutive seeds to run")
        sub.add_argument("--variant", choices=[v.value for v in Variant], help="Override the configured variant")
        sub.add_argument("--out", help="Output directory (default: output_directory of the config)")
        sub.add_argument("--templates", help="Directory with custom SVG templates")

    run = commands.add_parser("run", help="Run the configured experiment for every seed")
    experiment_args(run)
    run.add_argument("--baseline", action="store_true", help="Also run the source-only control")

    sweep = commands.add_parser("sweep", help="Run one study sweep")
    experiment_args(sweep)
    sweep.add_argument("--axis", choices=sorted(SWEEP_AXES), help="Swept axis (default: sweep.axis of the config)")

    report = commands.add_parser("report", help="Re-render summary and plots from results.csv")
    report.add_argument("results", help="Path to a results.csv")
    report.add_argument("--out", required=True, help="Output directory")
    report.add_argument("--templates", help="Directory with custom SVG templates")
    return parser


def main(argv=None):
    """Main entry point for the application."""
    args = build_parser().parse_args(argv)

    setup_logging(level=logging.DEBUG if args.verbose else logging.INFO)

    try:
        if args.command == "report":
            paths = render_results(args.results, args.out, args.templates)
        else:
            experiment = FactExperiment(config_path=args.config, template_dir=args.templates)
            experiment.apply_overrides(seed=args.seed, repeats=args.repeats, variant=args.variant)
            if args.command == "run":
                paths = experiment.run(args.out, baseline=args.baseline)
            else:
                paths = experiment.sweep(args.axis, args.out)
    except (FactSimError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return 1

    print(f"Wrote {len(paths)} files")
    return 0


if __name__ == "__main__":
    sys.exit(main())
