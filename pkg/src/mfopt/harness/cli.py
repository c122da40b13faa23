"""Command line entry point: ``mfopt run --config <path> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..errors import BudgetError, ConfigError, MfoptError
from .config import POLICIES, STUDIES, load_config
from .io import write_outputs
from .runner import STUDY_RUNNERS, RoundError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_BUDGET = 0, 2, 3, 4

log = logging.getLogger("mfopt")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfopt", description="Multi-fidelity optimal solution updates.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a study from a YAML config")
    run.add_argument("--config", required=True, help="YAML file with RunConfig keys")
    run.add_argument("--seed", type=int, help="override the config seed")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--policy", choices=POLICIES)
    run.add_argument("--study", choices=STUDIES)
    run.add_argument("-v", "--verbose", action="store_true")
    return ap


def _exit_code(exc: BaseException) -> int:
    cause = exc.cause if isinstance(exc, RoundError) else exc
    if isinstance(cause, BudgetError):
        return EXIT_BUDGET
    if isinstance(cause, ConfigError):
        return EXIT_CONFIG
    return EXIT_SOLVER


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        overrides = {k: getattr(args, k) for k in ("seed", "out", "policy", "study")
                     if getattr(args, k) is not None}
        if overrides:
            cfg = cfg.replace(**overrides)
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        record = STUDY_RUNNERS[cfg.study](cfg)
    except (MfoptError, ArithmeticError, ValueError) as exc:
        code = _exit_code(exc)
        print(f"run failed: {exc}", file=sys.stderr)
        return code
    paths = write_outputs(record, cfg, cfg.out)
    for name, path in paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
