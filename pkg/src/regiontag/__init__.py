"""Region-conditioned sound event tagging for a tetrahedral microphone array.

The package simulates free-field acoustic scenes, extracts spectral,
spatial and positional features, trains a compact convolutional tagger
conditioned on angular or distance queries, and evaluates it under
omnidirectional, fixed-region and location-aware harnesses.
"""

__version__ = "0.1.0"

from .augment import ACS_TRANSFORMS, AcsTransform, apply_acs_clip, expand_manifest
from .dsp import SpectroTensor, gcc_phat, ipd, lps, stft
from .evaluation import (
    HarnessResult,
    equal_error_rate,
    mean_average_precision,
    run_harness,
)
from .features import FeatureRecipe, FeatureStack, build_feature_stack
from .geometry import (
    ArrayGeometry,
    DirectionOfArrival,
    default_geometry,
    pair_delay,
    target_phase,
)
from .model import CompactCnn, init_model, load_model, predict, save_model
from .regionfeat import (
    AngleGrid,
    AngularRegion,
    DistanceQuery,
    directional_feature,
    fov_feature,
)
from .scenesim import (
    CLASS_NAMES,
    EventSpec,
    SceneSpec,
    generate_dataset,
    render_scene,
    sample_scene_spec,
)
from .training import TrainConfig, TrainResult, train

__all__ = [
    "ACS_TRANSFORMS",
    "AcsTransform",
    "AngleGrid",
    "AngularRegion",
    "ArrayGeometry",
    "CLASS_NAMES",
    "CompactCnn",
    "DirectionOfArrival",
    "DistanceQuery",
    "EventSpec",
    "FeatureRecipe",
    "FeatureStack",
    "HarnessResult",
    "SceneSpec",
    "SpectroTensor",
    "TrainConfig",
    "TrainResult",
    "apply_acs_clip",
    "build_feature_stack",
    "default_geometry",
    "directional_feature",
    "equal_error_rate",
    "expand_manifest",
    "fov_feature",
    "gcc_phat",
    "generate_dataset",
    "init_model",
    "ipd",
    "load_model",
    "lps",
    "mean_average_precision",
    "pair_delay",
    "predict",
    "render_scene",
    "run_harness",
    "sample_scene_spec",
    "save_model",
    "stft",
    "target_phase",
    "train",
]
