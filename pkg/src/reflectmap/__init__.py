"""Ground-reflectivity mapping from multi-beam laser scanner data.

Builds calibrated reflectivity grid maps by fusing per-laser map
perspectives in the gradient domain: each (beam, incidence, range) class of
measurements becomes its own map, a sparse weight vector picks the
perspectives that agree, and the weighted gradient field is integrated back
into a map by a constrained Poisson reconstruction.  Localization against a
prior map, marking segmentation and a measurement simulator round out the
toolbox.
"""

from .fusion import (
    FusionConfig,
    WeightVector,
    clamp_step,
    denoise_gradient,
    fuse,
    fuse_uniform,
    perspective_gradients,
    select_weights,
    soft_threshold,
    stable_step_size,
)
from .gradients import GradientField, divergence, gradient, gradient_magnitude, laplacian
from .grid import CellMap, GridSpec, OccupancySet, project, sample
from .localize import Pose, RegistrationResult, SearchWindow, nmi, register
from .perspectives import (
    Measurement,
    MeasurementBatch,
    PerspectiveKey,
    PerspectiveSet,
    PerspectiveView,
    build_perspectives,
    naive_map,
    union_occupancy,
)
from .pipeline import PipelineConfig, StageFailure, run_pipeline
from .reconstruct import (
    BoundaryCondition,
    ReconstructionConfig,
    boundary_set,
    choose_reference,
    poisson_reconstruct,
    reference_boundary,
)
from .segment import (
    MarkMask,
    SegmentationReport,
    evaluate,
    extract_markings,
    f_score,
    otsu_threshold,
    psnr,
    rmse,
)
from .simulate import (
    GroundScene,
    LaserModel,
    ScanConfig,
    SceneRecipe,
    default_beams,
    kl_gaussian,
    make_scene,
    radial_variance,
    scan,
    straight_trajectory,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryCondition",
    "CellMap",
    "FusionConfig",
    "GradientField",
    "GridSpec",
    "GroundScene",
    "LaserModel",
    "MarkMask",
    "Measurement",
    "MeasurementBatch",
    "OccupancySet",
    "PerspectiveKey",
    "PerspectiveSet",
    "PerspectiveView",
    "PipelineConfig",
    "Pose",
    "ReconstructionConfig",
    "RegistrationResult",
    "ScanConfig",
    "SceneRecipe",
    "SearchWindow",
    "SegmentationReport",
    "StageFailure",
    "WeightVector",
    "boundary_set",
    "build_perspectives",
    "choose_reference",
    "clamp_step",
    "default_beams",
    "denoise_gradient",
    "divergence",
    "evaluate",
    "extract_markings",
    "f_score",
    "fuse",
    "fuse_uniform",
    "gradient",
    "gradient_magnitude",
    "kl_gaussian",
    "laplacian",
    "make_scene",
    "naive_map",
    "nmi",
    "otsu_threshold",
    "perspective_gradients",
    "poisson_reconstruct",
    "project",
    "psnr",
    "radial_variance",
    "reference_boundary",
    "register",
    "rmse",
    "run_pipeline",
    "sample",
    "scan",
    "select_weights",
    "soft_threshold",
    "stable_step_size",
    "straight_trajectory",
    "union_occupancy",
]
