"""Factorization machines and DeepFM for token-level knowledge tracing."""

__version__ = "0.1.0"

from .encoding import (
    CategorySchema,
    InstanceBatch,
    SparseInstance,
    Vocab,
    encode,
    encode_dataset,
    fit_vocab,
    normalize_continuous,
)
from .metrics import EvalReport, acc_f1, auc, evaluate, nll
from .model import DeepFM, DeepParams, FmParams, ModelConfig, backward, deep_forward, fm_forward, predict
from .slam import LabeledExercise, parse_dataset, split_by_fraction
from .training import AdamState, TrainConfig, TrainReport, adam_step, refit, train

__all__ = [
    "AdamState",
    "CategorySchema",
    "DeepFM",
    "DeepParams",
    "EvalReport",
    "FmParams",
    "InstanceBatch",
    "LabeledExercise",
    "ModelConfig",
    "SparseInstance",
    "TrainConfig",
    "TrainReport",
    "Vocab",
    "acc_f1",
    "adam_step",
    "auc",
    "backward",
    "deep_forward",
    "encode",
    "encode_dataset",
    "evaluate",
    "fit_vocab",
    "fm_forward",
    "nll",
    "normalize_continuous",
    "parse_dataset",
    "predict",
    "refit",
    "split_by_fraction",
    "train",
]
