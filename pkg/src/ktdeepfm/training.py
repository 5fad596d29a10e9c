"""Minibatch Adam on the mean log loss, with optional early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .encoding import InstanceBatch
from .errors import (
    EmptyTrainingSet,
    NonFiniteGradient,
    NonFiniteLoss,
    ShapeMismatch,
    SingleClass,
    UnlabeledToken,
)
from .metrics import evaluate
from .model import DeepFM

log = logging.getLogger(__name__)

ES_METRICS = ("auc", "nll")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 1024
    epochs: int = 10
    early_stopping: bool = False
    patience: int = 5
    es_metric: str = "auc"
    shuffle_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    refit_on: str = "union"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.early_stopping and self.patience < 1:
            raise ValueError("patience must be >= 1 with early stopping")
        if self.es_metric not in ES_METRICS:
            raise ValueError(f"es_metric must be one of {ES_METRICS}")
        if self.refit_on not in ("union", "validation"):
            raise ValueError("refit_on must be 'union' or 'validation'")

    def to_dict(self):
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(state: AdamState, params: dict, grads: dict, config: TrainConfig):
    """One bias-corrected Adam update, in place.  Returns ``(state, params)``."""
    for name, p in params.items():
        if name not in grads or grads[name].shape != p.shape:
            got = grads[name].shape if name in grads else None
            raise ShapeMismatch(f"gradient for {name}: expected {p.shape}, got {got}")
    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.adam_epsilon)
    return state, params


@dataclass
class TrainReport:
    initial_loss: float | None = None
    train_loss: list[float] = field(default_factory=list)
    val_metrics: list[dict | None] = field(default_factory=list)
    updates: list[int] = field(default_factory=list)
    best_epoch: int | None = None
    stopping_reason: str = "not_started"

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self):
        return asdict(self)


def _val_metrics(model, val):
    if val is None or len(val) == 0 or not val.labelled:
        return None
    try:
        report = evaluate(model.predict_proba(val), val.labels)
    except SingleClass:
        return None
    return asdict(report)


def _progress_line(epoch, train_loss, metrics):
    parts = [f"epoch={epoch}", f"train_nll={train_loss!r}"]
    if metrics is not None:
        parts.append(f"val_auc={metrics['auc']!r}")
        parts.append(f"val_nll={metrics['nll']!r}")
    return " ".join(parts)


def _improved(metric, value, best):
    if best is None:
        return True
    return value > best if metric == "auc" else value < best


def train(
    model: DeepFM,
    data: InstanceBatch,
    val: InstanceBatch | None,
    config: TrainConfig,
    *,
    progress: Callable[[str], None] | None = None,
    on_best: Callable[[DeepFM, int], None] | None = None,
):
    """Fit ``model`` on ``data``; returns a trained copy and a :class:`TrainReport`.

    Rows are reshuffled every epoch with ``shuffle_seed + epoch``.  The last,
    possibly short, minibatch of an epoch is kept.  With early stopping the
    parameters of the best validation epoch are restored before returning.
    ``progress`` receives one ``key=value`` line per epoch.
    """
    if len(data) == 0:
        raise EmptyTrainingSet("no training instances")
    if not data.labelled:
        raise UnlabeledToken("training instances must all be labelled")
    report = TrainReport()
    model = model.copy()
    if config.epochs == 0:
        report.stopping_reason = "no_epochs"
        return model, report
    if config.early_stopping and (val is None or len(val) == 0):
        raise ValueError("early stopping needs a validation set")

    params = model.params()
    state = AdamState()
    dropout_rng = np.random.default_rng([config.shuffle_seed, 1]) if model.config.dropout else None
    n = len(data)
    report.initial_loss = model.loss(data)
    best_value, best_params, since_best = None, None, 0
    report.stopping_reason = "completed"

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(config.shuffle_seed + epoch).permutation(n)
        n_updates = 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            batch = data.take(order[start:start + config.batch_size])
            try:
                loss, grads = model.loss_and_grad(batch, rng=dropout_rng)
            except NonFiniteGradient as err:
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: {err}") from err
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch} batch {b}: loss is {loss}")
            adam_step(state, params, grads, config)
            n_updates += 1

        train_loss = model.loss(data)
        if not math.isfinite(train_loss):
            raise NonFiniteLoss(f"epoch {epoch}: training loss is {train_loss}")
        metrics = _val_metrics(model, val)
        report.train_loss.append(train_loss)
        report.val_metrics.append(metrics)
        report.updates.append(n_updates)
        line = _progress_line(epoch, train_loss, metrics)
        log.debug(line)
        if progress is not None:
            progress(line)

        if config.early_stopping:
            if metrics is None:
                raise SingleClass("validation metrics undefined; cannot early-stop")
            value = metrics[config.es_metric]
            if _improved(config.es_metric, value, best_value):
                best_value, since_best = value, 0
                best_params = {k: v.copy() for k, v in params.items()}
                report.best_epoch = epoch
                if on_best is not None:
                    on_best(model, epoch)
            else:
                since_best += 1
                if since_best >= config.patience:
                    report.stopping_reason = "early_stopping"
                    break

    if config.early_stopping:
        model.set_params(best_params)
    else:
        report.best_epoch = report.epochs_run
        if on_best is not None:
            on_best(model, report.best_epoch)
    return model, report


def refit(
    model: DeepFM,
    train_data: InstanceBatch,
    val_data: InstanceBatch,
    config: TrainConfig,
    epochs: int,
    *,
    progress=None,
):
    """Retrain from a fresh initialisation for ``epochs`` epochs, without early stopping.

    Trains on train+validation, or on validation alone when
    ``config.refit_on == "validation"``.
    """
    if config.refit_on == "union":
        data = InstanceBatch.concat([train_data, val_data])
    else:
        data = val_data
    fresh = DeepFM.create(model.config, model.N, model.n_categories)
    cfg = TrainConfig(**{**config.to_dict(), "epochs": epochs, "early_stopping": False})
    trained, _ = train(fresh, data, None, cfg, progress=progress)
    return trained
