"""Config-driven experiments with CSV/SVG outputs and run manifests."""
from .config import EXPERIMENTS, ConfigError, ExperimentConfig
from .experiments import CheckFailed, run
from .io import ResultTable, emit_csv, emit_svg, read_csv
from .manifest import RunManifest

__all__ = ["EXPERIMENTS", "ConfigError", "ExperimentConfig", "CheckFailed", "run", "ResultTable", "emit_csv",
           "emit_svg", "read_csv", "RunManifest"]
