"""Preprocessing pipeline turning two images' local features into ranked,
probability-annotated putative matches, plus a guided-RANSAC reference
estimator and a synthetic benchmark harness."""

from .estimator import (
    EstimationResult,
    Models,
    PairInputs,
    PipelineConfig,
    RansacConfig,
    guided_ransac,
    run_pipeline,
)
from .features import Feature, FeatureSet, PutativeMatch, load_features, save_features
from .geometry import (
    CameraModel,
    FundamentalMatrix,
    PointPair,
    eight_point,
    fundamental_from_cameras,
    sampson_distance,
    seven_point,
)

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "EstimationResult",
    "Feature",
    "FeatureSet",
    "FundamentalMatrix",
    "Models",
    "PairInputs",
    "PipelineConfig",
    "PointPair",
    "PutativeMatch",
    "RansacConfig",
    "eight_point",
    "fundamental_from_cameras",
    "guided_ransac",
    "load_features",
    "run_pipeline",
    "sampson_distance",
    "save_features",
    "seven_point",
    "__version__",
]
