"""Active viewpoint selection for multi-view 3d pose estimation in a simulated camera dome."""

from .dome import AngleCanvas, CameraSpec, DomeRig, build_dome, nearest_camera
from .fusion import fuse, multi_target_error, reconstruction_error
from .identity import build_appearance_model, hungarian_assign, match_detections
from .policy import PolicyConfig, init_params, sample_action
from .rollout import Episode, RolloutConfig, run_active_sequence
from .scenesim import EstimatorConfig, Scene, SceneConfig, generate_scene, observe
from .trainer import TrainConfig, train

__all__ = [
    "AngleCanvas", "CameraSpec", "DomeRig", "build_dome", "nearest_camera",
    "fuse", "multi_target_error", "reconstruction_error",
    "build_appearance_model", "hungarian_assign", "match_detections",
    "PolicyConfig", "init_params", "sample_action",
    "Episode", "RolloutConfig", "run_active_sequence",
    "EstimatorConfig", "Scene", "SceneConfig", "generate_scene", "observe",
    "TrainConfig", "train",
]

__version__ = "0.1.0"
