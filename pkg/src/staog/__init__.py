"""Spatio-temporal and-or-graph action classifier.

Scores a video by composing part detectors (leaf nodes) under switch
variables (or nodes), per-anchor-frame aggregators (and nodes) and a
temporal root, with pairwise spatial/temporal context edges between active
parts.  Training is weakly supervised: latent part placements and
anchor-frame shifts are imputed by inference, the structure is reconfigured
by clustering, and parameters are refit with a structural SVM inside a
concave-convex outer loop.
"""

from .errors import (
    ArgumentError,
    FormatError,
    InferenceError,
    InvariantError,
    StaogError,
)
from .features import (
    Codebook,
    FeatureVideo,
    InterestPoint,
    Region3D,
    SynthSpec,
    bow_histogram,
    build_codebook,
    initial_anchors,
    read_codebook,
    read_features,
    read_synth_spec,
    synth_dataset,
    write_codebook,
    write_features,
)
from .inference import (
    FrameHypothesis,
    InferenceResult,
    detect_part,
    enumerate_frame_hypotheses,
    infer,
    infer_bruteforce,
)
from .learning import (
    ImputedSample,
    TrainConfig,
    energy,
    latent_impute,
    loss_augmented_infer,
    predict,
    predict_scores,
    reconfigure,
    solve_ssvm,
    train,
    train_multiclass,
)
from .model import (
    Assignment,
    StaogModel,
    StructureConfig,
    global_response,
    joint_feature,
    load_model,
    root_response,
    save_model,
)
from .numerics import ClusterResult, kmeans, qp_solve, spectral_cluster

__all__ = [
    "ArgumentError",
    "Assignment",
    "ClusterResult",
    "Codebook",
    "FeatureVideo",
    "FormatError",
    "FrameHypothesis",
    "ImputedSample",
    "InferenceError",
    "InferenceResult",
    "InterestPoint",
    "InvariantError",
    "Region3D",
    "StaogError",
    "StaogModel",
    "StructureConfig",
    "SynthSpec",
    "TrainConfig",
    "bow_histogram",
    "build_codebook",
    "detect_part",
    "energy",
    "enumerate_frame_hypotheses",
    "global_response",
    "infer",
    "infer_bruteforce",
    "initial_anchors",
    "joint_feature",
    "kmeans",
    "latent_impute",
    "load_model",
    "loss_augmented_infer",
    "predict",
    "predict_scores",
    "qp_solve",
    "read_codebook",
    "read_features",
    "read_synth_spec",
    "reconfigure",
    "root_response",
    "save_model",
    "solve_ssvm",
    "spectral_cluster",
    "synth_dataset",
    "train",
    "train_multiclass",
    "write_codebook",
    "write_features",
]

__version__ = "0.1.0"
