"""Configuration, stage orchestration and the command-line interface."""

from .config import PipelineConfig, apply_overrides, load_config, validate_config, validate_document
from .stages import REPORT_FILES, STAGES, Workspace, run_pipeline, run_stage
