"""Command-line front-end: one subcommand per pipeline stage.

Exit codes: 0 success, 2 validation error (bad flags, configs or artifacts), 3 file-system error.
"""
import argparse
import logging
import os
import sys
from typing import Dict, List, Optional

from dotenv import dotenv_values
from pydantic import ValidationError

from app.config.settings import settings
from app.exceptions import InvalidParams, IoFailure, ValidationFailure
from app.models.run_model import RunConfig
from app.models.world_model import Category
from app.services import pipeline_service
from app.services.pipeline_service import BASELINE_KINDS, Workspace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def read_config_file(path: str) -> Dict[str, Dict[str, str]]:
    """Flat `stage.field = value` file into per-stage overrides"""
    if not os.path.exists(path):
        raise IoFailure(f"config file {path} not found")
    overrides: Dict[str, Dict[str, str]] = {}
    for key, value in dotenv_values(path).items():
        stage, sep, field = key.partition(".")
        if not sep or not field:
            raise InvalidParams(f"config key {key!r} must look like stage.field")
        if value is None:
            raise InvalidParams(f"config key {key!r} has no value")
        overrides.setdefault(stage.strip(), {})[field.strip()] = value.strip()
    return overrides


def run_config(args: argparse.Namespace) -> RunConfig:
    config_path = args.config or settings.config_file
    overrides = read_config_file(config_path) if config_path else {}
    run = RunConfig(seed=args.seed, work_dir=args.work_dir, jobs=args.jobs, overrides=overrides)
    pipeline_service.validate_overrides(run)
    return run


def _value_map(ws: Workspace, args: argparse.Namespace) -> None:
    from app.services.value_map_service import value_map
    from app.services.valuelearn_service import load_value_model
    from app.services.world_service import load_world

    world, _ = load_world(args.world or ws.require(os.path.join("worlds", "test_000.txt")))
    model, _, _ = load_value_model(args.model or ws.require("q.txt"))
    value_map(world, model, Category.parse(args.category), args.out or ws.path("value_map.pgm"), ws.config_hash)


COMMANDS = {
    "gen-worlds": lambda ws, args: pipeline_service.gen_worlds(ws),
    "collect-interaction": lambda ws, args: pipeline_service.collect_interaction(ws),
    "gen-videos": lambda ws, args: pipeline_service.gen_videos(ws),
    "train-inverse": lambda ws, args: pipeline_service.train_inverse(ws),
    "pseudo-label": lambda ws, args: pipeline_service.pseudo_label(ws),
    "label-rewards": lambda ws, args: pipeline_service.label_rewards(ws, args.mode),
    "train-q": lambda ws, args: pipeline_service.train_q(ws),
    "train-baseline": lambda ws, args: pipeline_service.train_baseline(ws, args.kind.replace("-", "_")),
    "calibrate-stop": lambda ws, args: pipeline_service.calibrate_stop(ws),
    "eval": lambda ws, args: pipeline_service.evaluate(ws),
    "ablate": lambda ws, args: pipeline_service.ablate(ws),
    "branching": lambda ws, args: pipeline_service.branching(ws),
    "value-map": _value_map,
    "pipeline": lambda ws, args: pipeline_service.run_pipeline(ws, args.skip),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=settings.seed, help="Run seed (default from VLV_SEED)")
    common.add_argument("--config", default=None, help="Flat `stage.field = value` override file")
    common.add_argument("--work-dir", default=settings.work_dir, help="Artifact directory")
    common.add_argument("--jobs", type=int, default=settings.jobs, help="Worker threads; results do not depend on it")

    parser = argparse.ArgumentParser(prog="vlv", description="Value learning from videos: pipeline stages")
    commands = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = commands.add_parser(name, parents=[common])
        if name == "label-rewards":
            sub.add_argument("--mode", choices=("percentile", "threshold"), default="percentile")
        elif name == "train-baseline":
            sub.add_argument("kind", choices=[*BASELINE_KINDS, "strong-vlv"])
        elif name == "value-map":
            sub.add_argument("--world", help="World file (default: first test world)")
            sub.add_argument("--model", help="Value model file (default: q.txt)")
            sub.add_argument("--category", default=Category.DINING_TABLE.slug, choices=[c.slug for c in Category])
            sub.add_argument("--out", help="Output PGM path")
        elif name == "pipeline":
            sub.add_argument("--skip", nargs="*", default=[], help="Stage names to skip")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=settings.log_level.upper(), format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        ws = Workspace(run_config(args))
        logger.info(f"{args.command}: seed {args.seed}, config {ws.config_hash}, work dir {ws.run.work_dir}")
        COMMANDS[args.command](ws, args)
    except (ValidationFailure, ValidationError) as e:
        logger.error(f"{args.command} failed validation: {str(e)}")
        return EXIT_VALIDATION
    except IoFailure as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
