"""Named model/protocol presets.

Each preset fixes a feature set, a :class:`ModelConfig` and a
:class:`TrainConfig`.  Training defaults (Adam, lr 1e-3, batches of 1024)
are shared by all of them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .model import ModelConfig
from .training import TrainConfig


@dataclass(frozen=True)
class Preset:
    feature_set: str
    model: ModelConfig
    train: TrainConfig


_DEEP = dict(deep_enabled=True, d=10, hidden_widths=(32, 32), final_activation="relu")

PRESETS = {
    # logistic regression over user + token: the Rasch model
    "irt": Preset("irt", ModelConfig(d=0), TrainConfig(epochs=500)),
    # logistic regression over all fundamental categories
    "lr": Preset("fundamental", ModelConfig(d=0), TrainConfig(epochs=500)),
    "vanilla-fm": Preset(
        "fundamental", ModelConfig(d=20, link="probit"), TrainConfig(epochs=500)
    ),
    "deepfm-es": Preset(
        "fundamental",
        ModelConfig(**_DEEP),
        TrainConfig(epochs=100, early_stopping=True, patience=5, es_metric="auc"),
    ),
    "deepfm-final": Preset("fundamental", ModelConfig(**_DEEP), TrainConfig(epochs=50)),
    "deepfm-star": Preset(
        "fundamental-plus",
        ModelConfig(**_DEEP),
        TrainConfig(epochs=100, early_stopping=True, patience=5, es_metric="auc"),
    ),
}
PRESETS["deepfm"] = PRESETS["deepfm-es"]


def get_preset(name: str) -> Preset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def with_overrides(preset: Preset, feature_set=None, model=None, train=None) -> Preset:
    return Preset(
        feature_set or preset.feature_set,
        replace(preset.model, **(model or {})),
        replace(preset.train, **(train or {})),
    )
