"""Closed-loop evaluation workbench for trajectory predictors."""

from ._core import (
    AgentState,
    Pose2D,
    ade,
    bicycle_step,
    fde,
    generate_scenario_json,
    linear_fit_stats,
    obb_intersect,
    pearson,
    pure_pursuit_steer,
    run_episode_summary,
    run_experiment_files,
    spearman,
    wrap_angle,
)

__all__ = [
    "AgentState",
    "Pose2D",
    "ade",
    "bicycle_step",
    "fde",
    "generate_scenario_json",
    "linear_fit_stats",
    "obb_intersect",
    "pearson",
    "pure_pursuit_steer",
    "run_episode_summary",
    "run_experiment_files",
    "spearman",
    "wrap_angle",
]
