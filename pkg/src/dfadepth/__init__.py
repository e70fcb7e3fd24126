"""Deep-feature-annihilation attacks on a toy monocular depth estimator."""

from .data import SceneDataset, generate_scenes, load_dataset, save_dataset
from .dfa import DfaValue, dfa_gradient_check, dfa_loss
from .errors import (ArtifactFormatError, NumericError, ShapeError, TrainingFailure,
                     UnsupportedArchitectureError)
from .evaluation import (MetricReport, TransferMatrix, absrel, cross_data_eval, evaluate_attack,
                         evaluate_fgsm, patch_damage_split, rel_degradation, rmse, transfer_matrix)
from .model import (DepthEstimator, DepthModel, TrainConfig, build_model, forward, load_model,
                    predict_depth, save_model, train_toy_model)
from .patch import (AdversarialPatchAttack, PatchArtifact, Placement, load_patch, place_patch,
                    sample_placement, save_patch, train_patch)
from .perturbation import (AttackConfig, FGSMAttack, GlobalPerturbationAttack, PerturbationArtifact,
                           PerturbationGenerator, apply_perturbation, fgsm_attack, load_perturbation,
                           save_perturbation, train_perturbation)
from .types import DepthMap, TapSpec
from .viz import visualize_depth, visualize_depth_gap, visualize_features

__version__ = "0.1.0"

__all__ = [
    "AdversarialPatchAttack", "ArtifactFormatError", "AttackConfig", "DepthEstimator", "DepthMap",
    "DepthModel", "DfaValue", "FGSMAttack", "GlobalPerturbationAttack", "MetricReport",
    "NumericError", "PatchArtifact", "PerturbationArtifact", "PerturbationGenerator", "Placement",
    "SceneDataset", "ShapeError", "TapSpec", "TrainConfig", "TrainingFailure", "TransferMatrix",
    "UnsupportedArchitectureError", "absrel", "apply_perturbation", "build_model",
    "cross_data_eval", "dfa_gradient_check", "dfa_loss", "evaluate_attack", "evaluate_fgsm",
    "fgsm_attack", "forward", "generate_scenes", "load_dataset", "load_model", "load_patch",
    "load_perturbation", "patch_damage_split", "place_patch", "predict_depth", "rel_degradation",
    "rmse", "sample_placement", "save_dataset", "save_model", "save_patch", "save_perturbation",
    "train_patch", "train_perturbation", "train_toy_model", "transfer_matrix", "visualize_depth",
    "visualize_depth_gap", "visualize_features",
]
