"""Experiment configuration, orchestration and run-directory output."""
from .config import ExperimentConfig, describe_presets, load_config, preset_config
from .experiments import (
    StageError,
    run_blob_verification,
    run_experiment,
    run_flow,
    run_transport_sweep,
)
from .output import RunManifest, decay_plot_svg, read_manifest_files, read_table
