"""From-scratch differentiable 3D convolutional network and training stack."""

from .checkpoint import load_model, save_model
from .layers import ShapeMismatch, inverse_frequency_weights, weighted_cross_entropy
from .network import NetworkSpec, StaleCache, backward, forward, init_params, loss_and_grads, shape_trace
from .optim import AdamState, adam_step
from .train import (
    CrossValidationResult,
    DegenerateLabels,
    EmptyFold,
    FoldEvaluation,
    LearningCurvePoint,
    SizeTooLarge,
    TaskDataset,
    TrainConfig,
    TrainedModel,
    evaluate_on_test,
    learning_curve,
    predict,
    run_cross_validation,
    train_fold,
)

__all__ = [
    "AdamState",
    "CrossValidationResult",
    "DegenerateLabels",
    "EmptyFold",
    "FoldEvaluation",
    "LearningCurvePoint",
    "NetworkSpec",
    "ShapeMismatch",
    "SizeTooLarge",
    "StaleCache",
    "TaskDataset",
    "TrainConfig",
    "TrainedModel",
    "adam_step",
    "backward",
    "evaluate_on_test",
    "forward",
    "init_params",
    "inverse_frequency_weights",
    "learning_curve",
    "load_model",
    "loss_and_grads",
    "predict",
    "run_cross_validation",
    "save_model",
    "shape_trace",
    "train_fold",
    "weighted_cross_entropy",
]
