#!/usr/bin/env python
"""
Command line interface for delaynet experiments
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from delaynet.errors import ConfigurationError, DataError, DelayNetError, NumericError, StateError
from delaynet.experiment_manager import ExperimentManager
from delaynet.models import RunConfig

_LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERIC = 2


def parse_args(argv: Optional[List[str]] = None):
    """Parse command line arguments"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", default=None, help="Path to a JSON config file")
    common.add_argument("--seed", "-s", type=int, default=None, help="Seed overriding every seed in the config")
    common.add_argument("--out", "-o", default=".", help="Output directory")
    common.add_argument("--debug", "-d", action="store_true", help="Enable debug logging")

    parser = argparse.ArgumentParser(description="Delay-filter system identification experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="Generate synthetic plant data")

    prepare = sub.add_parser("prepare", parents=[common], help="Build a sample cache from a series CSV")
    prepare.add_argument("--data", required=True, help="Directory with series.csv and manifest.json")

    train = sub.add_parser("train", parents=[common], help="Train a network on a sample cache")
    train.add_argument("--samples", required=True, help="Sample cache directory")

    evaluate = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", required=True, help="Directory with checkpoint.json")
    evaluate.add_argument("--samples", required=True, help="Sample cache directory")
    evaluate.add_argument("--data", default=None, help="Directory with ground_truth.json")

    ablate = sub.add_parser("ablate", parents=[common], help="Run the Identity ablation grid")
    ablate.add_argument("--samples", required=True, help="Sample cache directory")

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="Run the gradient check suite")
    gradcheck.add_argument("--points", type=int, default=20, help="Random points per check")

    sub.add_parser("recover-delay", parents=[common], help="Recover plant dead times with a Gauss bank")

    return parser.parse_args(argv)


def load_config(path: Optional[str], seed: Optional[int]) -> RunConfig:
    """Read and validate the config file, applying the seed override"""
    payload = {}
    if path:
        with open(path, "r") as f:
            payload = json.load(f)
    config = RunConfig.model_validate(payload)
    return config.with_seed(seed) if seed is not None else config


def run(args) -> int:
    manager = ExperimentManager(load_config(args.config, args.seed))
    if args.command == "simulate":
        summary = manager.simulate(args.out)
        _LOGGER.info(f"Simulated {summary['rows']} rows into {args.out}")
    elif args.command == "prepare":
        summary = manager.prepare(args.data, args.out)
        _LOGGER.info(f"Prepared {summary['train']} train and {summary['val']} val samples")
    elif args.command == "train":
        report = manager.train(args.samples, args.out)
        _LOGGER.info(f"Best val MAE {report.best_val_mae:.5f} at epoch {report.best_epoch}")
    elif args.command == "eval":
        manager.evaluate(args.checkpoint, args.samples, args.out, args.data)
    elif args.command == "ablate":
        report = manager.ablate(args.samples, args.out)
        for row in report.rows:
            _LOGGER.info(f"{row.label}: median best val MAE {row.box.median:.5f}")
        _LOGGER.info(f"Zero: {report.zero_mae:.5f}")
    elif args.command == "gradcheck":
        results = manager.gradcheck(args.out, points=args.points)
        failed = [r for r in results if not r.passed]
        for r in failed:
            _LOGGER.error(f"{r.name}: relative error {r.max_rel_error:.3e} >= {r.tolerance:.0e}")
        if failed:
            return EXIT_NUMERIC
        _LOGGER.info(f"All {len(results)} gradient checks passed")
    elif args.command == "recover-delay":
        manager.recover_delay(args.out)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main function

    Returns:
        int: 0 on success, 1 on configuration or data errors, 2 on numeric errors
    """
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    args = parse_args(argv)
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)

    try:
        os.makedirs(args.out, exist_ok=True)
        return run(args)
    except NumericError as e:
        _LOGGER.error(f"Numeric error: {e}")
        return EXIT_NUMERIC
    except (ConfigurationError, DataError, StateError, DelayNetError, ValidationError) as e:
        _LOGGER.error(f"{type(e).__name__}: {e}")
        return EXIT_INPUT
    except (FileNotFoundError, json.JSONDecodeError) as e:
        _LOGGER.error(f"Failed to read input: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
