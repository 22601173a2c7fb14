"""Toolkit for predicting, refining, and evaluating action progress in action tubes."""

from .features import FeatureMap, FeatureVector, PoolingConfig, blend_input, roi_pool, spp_pool
from .losses import LossValue, bo_loss, l2_loss
from .metrics import (
    BoxObservation,
    EvalReport,
    MatchParams,
    app,
    frame_ap,
    framewise_mse,
    partial_tube_mse,
    video_ap,
)
from .model import (
    ModelConfig,
    ModelParams,
    RecurrentState,
    backward_tube,
    baseline_constant,
    baseline_expected_length,
    baseline_random,
    dump_hidden_states,
    forward_step,
    forward_tube,
    zero_state,
)
from .refine import TrimParams, progress_derivative, trim_tube
from .synth import DetectorNoise, SynthConfig, generate
from .training import TrainConfig, augment_subsample, augment_subtube, train, xavier_init
from .tubes import (
    BoundingBox,
    ClassInfo,
    Dataset,
    ScoredBox,
    Tube,
    link_detections,
    progress_targets,
    spatial_iou,
    tube_iou,
)

__version__ = "0.1.0"
