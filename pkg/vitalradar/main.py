"""Command-line entry point: one subcommand per pipeline stage plus e2e."""

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from vitalradar.config import settings
from vitalradar.core.exceptions import (
    ArgumentException,
    ConfigurationException,
    FilterDesignException,
    FitException,
    MappingException,
    MetricException,
    NumericException,
    SceneException,
    StageException,
    TrainingException,
    VitalRadarException,
)
from vitalradar.core.log import configure_logging
from vitalradar.schemas.pipeline_schemas import PipelineConfig
from vitalradar.schemas.scene_schemas import Posture
from vitalradar.services.pipeline_service import STAGES, PipelineService

logger = logging.getLogger("vitalradar.main")

# Checked in order; subclasses before their bases
EXIT_CODES: tuple[tuple[type[VitalRadarException], int], ...] = (
    (ConfigurationException, 2),
    (SceneException, 3),
    (ArgumentException, 4),
    (FitException, 5),
    (FilterDesignException, 5),
    (MetricException, 5),
    (NumericException, 5),
    (MappingException, 5),
    (TrainingException, 6),
    (StageException, 7),
)
EXIT_UNEXPECTED = 1


def exit_code_for(exc: BaseException) -> int:
    for exc_type, code in EXIT_CODES:
        if isinstance(exc, exc_type):
            return code
    return EXIT_UNEXPECTED


def load_config(path: Path | None) -> PipelineConfig:
    """
    Read a JSON run configuration; no path means all defaults.

    Raises:
        ConfigurationException: If the file is unreadable or fails validation
    """
    if path is None:
        return PipelineConfig()
    try:
        return PipelineConfig.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
    except OSError as exc:
        raise ConfigurationException(f"cannot read config {path}: {exc}") from exc
    except (json.JSONDecodeError, ValidationError) as exc:
        raise ConfigurationException(f"invalid config {path}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, help=f"artifact directory (default {settings.OUTPUT_DIR})")
    common.add_argument("--seed", type=int, help="top-level seed for every stage")
    common.add_argument("--preset", choices=[p.value for p in Posture], help="scenario preset")
    common.add_argument("--frames", type=int, help="total number of frames to simulate")

    parser = argparse.ArgumentParser(
        prog="vital-radar",
        description="Simulated FMCW MIMO radar posture and vital-sign pipeline",
    )
    parser.add_argument("--version", action="version", version=settings.APP_VERSION)
    commands = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "synthesize the data cube and ground-truth keypoints",
        "pointcloud": "CFAR + Capon point clouds for every frame",
        "train": "train the keypoint network on the training frames",
        "estimate": "estimate keypoints and chest angles after the training frames",
        "compare": "RA vs RAE vital-sign extraction and summary report",
    }
    for stage in STAGES:
        commands.add_parser(stage, parents=[common], help=helps[stage])
    commands.add_parser("e2e", parents=[common], help="run every stage in order")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.effective_log_level)
    try:
        if args.frames is not None and args.frames < 1:
            raise ArgumentException(f"--frames must be >= 1, got {args.frames}")
        if args.seed is not None and args.seed < 0:
            raise ArgumentException(f"--seed must be >= 0, got {args.seed}")
        config = load_config(args.config).resolved(
            default_seed=settings.DEFAULT_SEED,
            seed=args.seed,
            preset=Posture(args.preset) if args.preset else None,
            frames=args.frames,
        )
        service = PipelineService(config, args.out or Path(settings.OUTPUT_DIR))
        if args.command == "e2e":
            service.run_all()
        else:
            service.run(args.command)
    except VitalRadarException as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code_for(exc)
    except ValidationError as exc:
        logger.error("Invalid configuration: %s", exc)
        return exit_code_for(ConfigurationException(str(exc)))
    except Exception:
        logger.exception("Unexpected failure")
        return EXIT_UNEXPECTED
    return 0


if __name__ == "__main__":
    sys.exit(main())
