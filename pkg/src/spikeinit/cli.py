"""Command-line entry point.

    spikeinit --experiment collapse-sweep --out runs/collapse
    spikeinit --config runs/collapse/manifest.json --out runs/again

Exit status is 0 on success, 2 for configuration errors and 3 for numerical
failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, NumericalError, SpikeInitError
from .experiments import EXPERIMENTS, resolve, run_experiment

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OTHER = 0, 2, 3, 1


def build_parser():
    ap = argparse.ArgumentParser(prog="spikeinit", description=__doc__.splitlines()[0] if __doc__ else None)
    ap.add_argument("--experiment", choices=EXPERIMENTS, help="experiment to run")
    ap.add_argument("--config", help="JSON file with overrides, or a manifest from an earlier run")
    ap.add_argument("--seed", type=int, help="master seed")
    ap.add_argument("--repeats", type=int, help="independent repeats")
    ap.add_argument("--out", default=None, help="output directory (default runs/<experiment>)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    # a manifest wraps the resolved config
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    return dict(data)


def config_from_args(args):
    overrides = load_config(args.config) if args.config else {}
    experiment = overrides.pop("experiment", None)
    if args.experiment:
        if experiment and experiment != args.experiment:
            log = logging.getLogger(__name__)
            log.warning("--experiment %s overrides '%s' from the config file", args.experiment, experiment)
        experiment = args.experiment
    if experiment is None:
        raise ConfigError("no experiment given: pass --experiment or put 'experiment' in the config")
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.repeats is not None:
        overrides["repeats"] = args.repeats
    return resolve(experiment, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    exp = args.experiment or "?"
    try:
        cfg = config_from_args(args)
        exp = cfg["experiment"]
        out = args.out or f"runs/{exp}"
        rows = run_experiment(cfg, out)
    except ConfigError as exc:
        print(f"spikeinit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"spikeinit: numerical failure in {exp}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SpikeInitError as exc:
        print(f"spikeinit: {exp}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    print(f"{exp}: wrote {len(rows)} rows to {out}/results.csv")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
