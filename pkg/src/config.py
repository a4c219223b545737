"""
Configuration settings for fusebox: environment defaults and run-config files.
"""
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv
from pydantic import ValidationError

from .exceptions import ConfigError
from .models import FusionConfig, RunConfig, default_iou_thresholds

load_dotenv()


class Config:
    """Configuration manager for fusebox."""

    # Fusion settings
    DEFAULT_METRIC = "giou"
    DEFAULT_OVERLAP_THRESHOLD = 0.5
    DEFAULT_MIN_SCORE = 0.05
    DEFAULT_SELECTION = "max"
    DEFAULT_FILTER_PLACEMENT = "before_clustering"

    # Evaluation settings
    DEFAULT_IOU_THRESHOLDS = default_iou_thresholds()
    DEFAULT_RECALL_POINTS = 101
    DEFAULT_MAX_DETECTIONS = 100

    # Logging settings
    LOG_LEVEL = "off"
    LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    LOG_LEVELS = {"info": logging.INFO, "debug": logging.DEBUG}

    DEFAULT_WORKERS = 1

    @classmethod
    def get_logging_config(cls) -> Dict[str, Any]:
        """Get logging configuration. Unknown FUSEBOX_LOG values mean ``off``."""
        name = os.getenv("FUSEBOX_LOG", cls.LOG_LEVEL).strip().lower()
        if name not in cls.LOG_LEVELS:
            name = "off"
        return {
            "level": name,
            "format": cls.LOG_FORMAT,
        }

    @classmethod
    def setup_logging(cls) -> None:
        """Attach one stderr handler to the package logger at the configured level."""
        config = cls.get_logging_config()
        package_logger = logging.getLogger(__package__)
        for handler in list(package_logger.handlers):
            package_logger.removeHandler(handler)
        package_logger.propagate = False

        if config["level"] == "off":
            package_logger.addHandler(logging.NullHandler())
            package_logger.setLevel(logging.CRITICAL + 1)
            return
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(config["format"]))
        package_logger.addHandler(handler)
        package_logger.setLevel(cls.LOG_LEVELS[config["level"]])

    @classmethod
    def get_fusion_defaults(cls) -> FusionConfig:
        return FusionConfig(
            metric=cls.DEFAULT_METRIC,
            overlap_threshold=cls.DEFAULT_OVERLAP_THRESHOLD,
            min_score=cls.DEFAULT_MIN_SCORE,
            selection=cls.DEFAULT_SELECTION,
            filter_placement=cls.DEFAULT_FILTER_PLACEMENT,
        )

    @classmethod
    def get_worker_count(cls) -> int:
        """Threads used for per-group fusion (FUSEBOX_WORKERS, at least 1)."""
        raw = os.getenv("FUSEBOX_WORKERS", str(cls.DEFAULT_WORKERS))
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigError(f"FUSEBOX_WORKERS must be an integer, got '{raw}'")
        return max(workers, 1)

    @classmethod
    def load_run_config(cls, config_file: Union[str, Path]) -> RunConfig:
        """
        Load and validate a run-config JSON document.

        Relative paths inside it are resolved against the file's directory.

        Raises:
            OSError: the file cannot be read
            ConfigError: malformed JSON or an invalid configuration
        """
        path = Path(config_file)
        text = path.read_text(encoding="utf-8")
        try:
            document = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}")
        return cls.build_run_config(document, source=str(path)).resolve_paths(path.parent)

    @classmethod
    def build_run_config(cls, document: Any, source: str = "<config>") -> RunConfig:
        try:
            return RunConfig.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"{source}: {format_validation_error(e)}")

    @classmethod
    def apply_overrides(cls, run_config: RunConfig, **flags: Optional[Any]) -> RunConfig:
        """
        Override fusion fields from command-line flags.

        Accepted keys: ``metric``, ``overlap_threshold``, ``min_score``,
        ``selection``. ``None`` leaves the field unchanged.
        """
        updates = {key: value for key, value in flags.items() if value is not None}
        unknown = set(updates) - {"metric", "overlap_threshold", "min_score", "selection"}
        if unknown:
            raise ConfigError(f"unknown override(s): {sorted(unknown)}")
        if not updates:
            return run_config
        fields = run_config.fusion.model_dump()
        fields.update(updates)
        try:
            fusion = FusionConfig.model_validate(fields)
        except ValidationError as e:
            raise ConfigError(f"command-line flags: {format_validation_error(e)}")
        return run_config.model_copy(update={"fusion": fusion})


def format_validation_error(error: ValidationError) -> str:
    """One line per pydantic error: ``dotted.location: message``."""
    lines = []
    for item in error.errors():
        location = ".".join(str(part) for part in item.get("loc", ())) or "<root>"
        lines.append(f"{location}: {item.get('msg', '')}")
    return "; ".join(lines)


# Environment variable mappings
ENV_VARS = {
    "FUSEBOX_LOG": "Log verbosity on stderr (off/info/debug, default off)",
    "FUSEBOX_WORKERS": "Threads used for per-group fusion (default 1)",
}


def print_env_help():
    """Print help for environment variables."""
    print("Environment Variables for fusebox:")
    print("=" * 50)
    for var, description in ENV_VARS.items():
        print(f"{var}: {description}")
    print("\nExample usage:")
    print("export FUSEBOX_LOG=info")
    print("export FUSEBOX_WORKERS=4")
