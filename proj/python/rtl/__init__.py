"""Layer-transplant transfer experiments for Rainbow-style agents."""

from ._rtl import (
    CURVE_HEADER,
    PLOT_HEADER,
    SUMMARY_HEADER,
    ArchitectureMismatch,
    ConfigError,
    Error,
    FormatError,
    ShapeError,
    StateError,
    VersionError,
    architecture_hash,
    categorical_project,
    child_trial_id,
    env_names,
    load_checkpoint,
    parent_trial_id,
    plan_grid,
    report,
    run_child,
    run_grid,
    train_parent,
    transplant,
)

__all__ = [
    "CURVE_HEADER",
    "PLOT_HEADER",
    "SUMMARY_HEADER",
    "ArchitectureMismatch",
    "ConfigError",
    "Error",
    "FormatError",
    "ShapeError",
    "StateError",
    "VersionError",
    "architecture_hash",
    "categorical_project",
    "child_trial_id",
    "env_names",
    "load_checkpoint",
    "parent_trial_id",
    "plan_grid",
    "report",
    "run_child",
    "run_grid",
    "train_parent",
    "transplant",
]
