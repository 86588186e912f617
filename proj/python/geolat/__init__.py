"""Joint appearance and geometry latent generation on synthetic desk scenes."""

import torch  # noqa: F401  loads the libtorch shared libraries the extension links against

from ._geolat import (
    ConfigMismatch,
    DegenerateConfiguration,
    Divergence,
    GenerationResult,
    InvalidInput,
    MissingPrerequisite,
    Pipeline,
    camera_vector_order,
    chamfer_metrics,
    cli,
    config_hash,
    evaluate_directory,
    evaluate_geometry,
    farthest_point_sample,
    load_config,
    load_scene,
    make_dataset,
    pose_auc,
    psnr,
    read_result,
    relative_pose_errors,
    sample_scene,
    umeyama_align,
)

__all__ = [
    "ConfigMismatch",
    "DegenerateConfiguration",
    "Divergence",
    "GenerationResult",
    "InvalidInput",
    "MissingPrerequisite",
    "Pipeline",
    "camera_vector_order",
    "chamfer_metrics",
    "cli",
    "config_hash",
    "evaluate_directory",
    "evaluate_geometry",
    "farthest_point_sample",
    "load_config",
    "load_scene",
    "make_dataset",
    "pose_auc",
    "psnr",
    "read_result",
    "relative_pose_errors",
    "sample_scene",
    "umeyama_align",
]
