"""Batch command line front end.

Runs one or more scenarios (shipped preset names or TOML files), writing
for each a CSV trajectory log, a JSON metric summary, and an SVG plot of
the segment space angles.  Exit code 0 means every run completed and
stayed stable, 2 means at least one run diverged (its partial logs are
still written), 1 means a configuration or IO error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .chain import ConfigurationError
from .config_io import ConfigIOError, load_scenario
from .output import emit_csv, emit_metrics, emit_plot
from .scenario import ScenarioValidationError, run_experiment

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_DIVERGED = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decsim",
        description="Multi-link balance simulator with modular "
        "disturbance-compensating posture control.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run scenarios and write artifacts")
    run.add_argument(
        "--scenario",
        action="append",
        required=True,
        metavar="PATH_OR_PRESET",
        help="scenario TOML file or preset name "
        "(quiet, fig3, fig4, pull, translation); repeatable",
    )
    run.add_argument("--out", default=".", metavar="DIR", help="output directory")
    run.add_argument(
        "--decimate",
        type=int,
        default=10,
        help="log every N-th tick in CSV/plots (first and last always kept)",
    )
    run.add_argument("--no-plot", action="store_true", help="skip SVG emission")
    run.add_argument("--jobs", type=int, default=1, help="parallel scenario runs")
    run.add_argument("--seed", type=int, default=None, help="noise seed override")
    return parser


def _run_one(spec: str, out_dir: str, decimate: int, plot: bool,
             seed: int | None) -> tuple[str, bool]:
    """Load, simulate, and emit one scenario.  Returns (name, diverged)."""
    config = load_scenario(spec, seed_override=seed)
    log, metrics = run_experiment(config)
    base = Path(out_dir) / config.name
    emit_csv(log, base.with_suffix(".csv"), decimate)
    emit_metrics(metrics, log, Path(f"{base}.metrics.json"))
    if plot and len(log.time):
        emit_plot(log, base.with_suffix(".svg"), decimate, title=config.name)
    return config.name, log.diverged


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = Path(args.out)
    if args.decimate < 1:
        print("error: --decimate must be >= 1", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    jobs = max(1, args.jobs)
    tasks = [
        (spec, str(out_dir), args.decimate, not args.no_plot, args.seed)
        for spec in args.scenario
    ]
    any_diverged = False
    try:
        if jobs == 1 or len(tasks) == 1:
            results = [_run_one(*t) for t in tasks]
        else:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_one, *zip(*tasks)))
    except (ConfigIOError, ScenarioValidationError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    for name, diverged in results:
        status = "DIVERGED" if diverged else "ok"
        print(f"{name}: {status}")
        any_diverged = any_diverged or diverged
    return EXIT_DIVERGED if any_diverged else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
