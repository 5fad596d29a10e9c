"""Factorization machine plus feedforward network over shared embeddings.

The score of an instance is ``y_fm + y_dnn`` and its mistake probability is
``link(score)``.  ``y_fm`` is the usual second-order FM

    sum_k w_k x_k + sum_{k<l} x_k x_l <v_k, v_l>

and ``y_dnn`` is an MLP fed with the concatenation of the scaled
embeddings ``x_k v_k`` of the active entities, one slot per category.
Gradients are derived by hand.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .encoding import InstanceBatch, SparseInstance, stack
from .errors import DimensionMismatch, IndexOutOfRange, NonFiniteGradient

LINKS = ("sigmoid", "probit")
FINAL_ACTIVATIONS = ("relu", "linear")
PROB_EPS = 1e-12
_LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


# ---------------------------------------------------------------------------
# link functions


def link_prob(z, link="sigmoid"):
    z = np.asarray(z, dtype=np.float64)
    if link == "sigmoid":
        return special.expit(z)
    if link == "probit":
        # ndtr is 0.5 * erfc(-z / sqrt(2)), accurate in both tails
        return special.ndtr(z)
    raise ValueError(f"unknown link {link!r}")


def log_link(z, link="sigmoid"):
    """log psi(z), finite for all finite z."""
    z = np.asarray(z, dtype=np.float64)
    if link == "sigmoid":
        return -np.logaddexp(0.0, -z)
    if link == "probit":
        return special.log_ndtr(z)
    raise ValueError(f"unknown link {link!r}")


def _dlog_link(z, link):
    """d/dz log psi(z)."""
    if link == "sigmoid":
        return special.expit(-z)
    # phi(z) / Phi(z) computed in log space; stays finite far into the left tail
    return np.exp(-0.5 * z * z - _LOG_SQRT_2PI - special.log_ndtr(z))


def link_loss(z, y, link="sigmoid"):
    """Per-instance log loss of label ``y`` at score ``z``, using psi(-z) = 1 - psi(z)."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return -(y * log_link(z, link) + (1.0 - y) * log_link(-z, link))


def link_loss_grad(z, y, link="sigmoid"):
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if link not in LINKS:
        raise ValueError(f"unknown link {link!r}")
    # same as psi(z) - y for the sigmoid, without cancellation in the tails
    return -y * _dlog_link(z, link) + (1.0 - y) * _dlog_link(-z, link)


def relu(x):
    return np.maximum(x, 0.0)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ModelConfig:
    d: int = 10
    deep_enabled: bool = False
    hidden_widths: tuple[int, ...] = (32, 32)
    final_activation: str = "relu"
    link: str = "sigmoid"
    seed: int = 0
    global_bias: bool = False
    dropout: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(h) for h in self.hidden_widths))
        if self.d < 0:
            raise ValueError("embedding size must be >= 0")
        if self.deep_enabled and self.d < 1:
            raise ValueError("the deep component needs an embedding size >= 1")
        if self.link not in LINKS:
            raise ValueError(f"link must be one of {LINKS}")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ValueError(f"final_activation must be one of {FINAL_ACTIVATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if any(h < 1 for h in self.hidden_widths):
            raise ValueError("hidden widths must be positive")

    def to_dict(self):
        d = asdict(self)
        d["hidden_widths"] = list(self.hidden_widths)
        return d


@dataclass
class FmParams:
    w: np.ndarray
    V: np.ndarray
    w0: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.w.shape[0]

    @property
    def d(self) -> int:
        return self.V.shape[1]


@dataclass
class DeepParams:
    layers: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    @property
    def input_width(self) -> int:
        return self.layers[0][0].shape[1]

    def check(self):
        for (W, b), (W_next, _) in zip(self.layers, self.layers[1:]):
            if W_next.shape[1] != W.shape[0]:
                raise DimensionMismatch(
                    f"layer of width {W.shape[0]} feeds a layer expecting {W_next.shape[1]}"
                )
        for W, b in self.layers:
            if b.shape != (W.shape[0],):
                raise DimensionMismatch(f"bias shape {b.shape} for weight {W.shape}")
        if self.layers and self.layers[-1][0].shape[0] != 1:
            raise DimensionMismatch("the output layer must have width 1")


def init_params(config: ModelConfig, n_entities: int, n_categories: int, seed: int | None = None):
    """Fresh (FmParams, DeepParams or None).

    Biases start at zero, embeddings at N(0, 0.01^2), dense weights at
    N(0, 2 / fan_in).
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    w = np.zeros(n_entities)
    V = rng.normal(0.0, 0.01, size=(n_entities, config.d))
    w0 = np.zeros(1) if config.global_bias else None
    deep = None
    if config.deep_enabled:
        widths = [n_categories * config.d, *config.hidden_widths, 1]
        layers = []
        for fan_in, fan_out in zip(widths, widths[1:]):
            W = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_out, fan_in))
            layers.append((W, np.zeros(fan_out)))
        deep = DeepParams(layers)
    return FmParams(w, V, w0), deep


# ---------------------------------------------------------------------------
# forward / backward on batches


def _check_indices(idx, n):
    if idx.size and (idx.min() < 1 or idx.max() > n):
        raise IndexOutOfRange(f"entity indices must lie in 1..{n}, got {idx.min()}..{idx.max()}")


def fm_forward_batch(fm: FmParams, idx: np.ndarray, val: np.ndarray):
    """y_fm for each row plus the scaled embeddings ``E = x_k v_k`` (B, C, d)."""
    rows = idx - 1
    y = np.sum(fm.w[rows] * val, axis=1)
    if fm.w0 is not None:
        y = y + fm.w0[0]
    E = fm.V[rows] * val[:, :, None]
    if fm.d:
        s = E.sum(axis=1)
        y = y + 0.5 * np.sum(s * s - np.sum(E * E, axis=1), axis=1)
    return y, E


def deep_forward_batch(deep: DeepParams, a0: np.ndarray, final_activation="relu",
                       dropout=0.0, rng=None):
    """Run the MLP; returns (y_dnn of shape (B,), cache for the backward pass)."""
    if a0.shape[1] != deep.input_width:
        raise DimensionMismatch(f"input width {a0.shape[1]} != {deep.input_width}")
    cache = []
    a = a0
    last = len(deep.layers) - 1
    for i, (W, b) in enumerate(deep.layers):
        z = a @ W.T + b
        mask = None
        if i < last:
            out = relu(z)
            if dropout and rng is not None:
                mask = (rng.random(out.shape) >= dropout) / (1.0 - dropout)
                out = out * mask
        else:
            out = relu(z) if final_activation == "relu" else z
        cache.append((a, z, mask))
        a = out
    return a[:, 0], cache


def deep_backward_batch(deep: DeepParams, cache, dy: np.ndarray, final_activation="relu"):
    """Gradients of sum(dy * y_dnn): list of (dW, db) and d/d(input)."""
    grads = [None] * len(deep.layers)
    g = dy[:, None]
    last = len(deep.layers) - 1
    for i in range(last, -1, -1):
        W, _ = deep.layers[i]
        a_in, z, mask = cache[i]
        if i < last and mask is not None:
            g = g * mask
        if i < last or final_activation == "relu":
            g = g * (z > 0)
        grads[i] = (g.T @ a_in, g.sum(axis=0))
        g = g @ W
    return grads, g


class DeepFM:
    """Parameters plus configuration; ``n_categories`` fixes the deep input width."""

    def __init__(self, config: ModelConfig, fm: FmParams, deep: DeepParams | None,
                 n_categories: int):
        self.config = config
        self.fm = fm
        self.deep = deep
        self.n_categories = n_categories
        if config.deep_enabled:
            if deep is None:
                raise DimensionMismatch("deep component enabled but no layers given")
            deep.check()
            if deep.input_width != n_categories * fm.d:
                raise DimensionMismatch(
                    f"deep input width {deep.input_width} != C*d = {n_categories * fm.d}"
                )

    @classmethod
    def create(cls, config: ModelConfig, n_entities: int, n_categories: int,
               seed: int | None = None) -> "DeepFM":
        fm, deep = init_params(config, n_entities, n_categories, seed)
        return cls(config, fm, deep, n_categories)

    @property
    def N(self) -> int:
        return self.fm.N

    def params(self) -> dict[str, np.ndarray]:
        """Named parameter arrays; updating them in place updates the model."""
        p = {"w": self.fm.w, "V": self.fm.V}
        if self.fm.w0 is not None:
            p["w0"] = self.fm.w0
        if self.deep is not None:
            for i, (W, b) in enumerate(self.deep.layers):
                p[f"W{i}"] = W
                p[f"b{i}"] = b
        return p

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for name, arr in self.params().items():
            arr[...] = values[name]

    def copy(self) -> "DeepFM":
        fm = FmParams(
            self.fm.w.copy(), self.fm.V.copy(), None if self.fm.w0 is None else self.fm.w0.copy()
        )
        deep = None
        if self.deep is not None:
            deep = DeepParams([(W.copy(), b.copy()) for W, b in self.deep.layers])
        return DeepFM(self.config, fm, deep, self.n_categories)

    def _forward(self, batch: InstanceBatch, rng=None):
        idx, val = batch.idx, batch.val
        _check_indices(idx, self.N)
        if self.config.deep_enabled and idx.shape[1] > 1:
            # deep slots follow entity order, which fit_vocab lays out category
            # by category; already sorted rows are left untouched
            if np.any(idx[:, 1:] < idx[:, :-1]):
                order = np.argsort(idx, axis=1, kind="stable")
                idx = np.take_along_axis(idx, order, axis=1)
                val = np.take_along_axis(val, order, axis=1)
        y_fm, E = fm_forward_batch(self.fm, idx, val)
        z = y_fm
        cache = None
        if self.config.deep_enabled:
            if batch.n_categories != self.n_categories:
                raise DimensionMismatch(
                    f"instances have {batch.n_categories} categories, model expects "
                    f"{self.n_categories}"
                )
            y_dnn, cache = deep_forward_batch(
                self.deep,
                E.reshape(len(batch), -1),
                self.config.final_activation,
                self.config.dropout if rng is not None else 0.0,
                rng,
            )
            z = z + y_dnn
        return z, E, cache, idx, val

    def score(self, batch: InstanceBatch) -> np.ndarray:
        """y_fm + y_dnn for each row."""
        return self._forward(batch)[0]

    def predict_proba(self, batch: InstanceBatch) -> np.ndarray:
        p = link_prob(self.score(batch), self.config.link)
        return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)

    def loss(self, batch: InstanceBatch) -> float:
        """Mean log loss, evaluated in log space."""
        z = self.score(batch)
        return float(np.mean(link_loss(z, batch.labels, self.config.link)))

    def loss_and_grad(self, batch: InstanceBatch, rng=None):
        """Mean log loss over ``batch`` and its gradient for every parameter.

        ``rng`` switches on dropout (training mode) when the config asks for it.
        """
        n = len(batch)
        z, E, cache, idx, val = self._forward(batch, rng)
        y = batch.labels.astype(np.float64)
        link = self.config.link
        loss = float(np.mean(link_loss(z, y, link)))
        dz = link_loss_grad(z, y, link) / n

        rows = (idx - 1).ravel()
        N, d = self.fm.N, self.fm.d
        grads = {
            "w": np.bincount(rows, weights=(dz[:, None] * val).ravel(), minlength=N)
        }
        if self.fm.w0 is not None:
            grads["w0"] = np.array([dz.sum()])

        dE = np.zeros_like(E)
        if d:
            s = E.sum(axis=1)
            dE += dz[:, None, None] * (s[:, None, :] - E)
        if self.config.deep_enabled:
            layer_grads, da0 = deep_backward_batch(
                self.deep, cache, dz, self.config.final_activation
            )
            for i, (gW, gb) in enumerate(layer_grads):
                grads[f"W{i}"] = gW
                grads[f"b{i}"] = gb
            dE += da0.reshape(E.shape)
        dV = np.zeros((N, d))
        scaled = dE * val[:, :, None]
        for f in range(d):
            dV[:, f] = np.bincount(rows, weights=scaled[:, :, f].ravel(), minlength=N)
        grads["V"] = dV

        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradient(f"non-finite gradient for {name}")
        return loss, grads


# ---------------------------------------------------------------------------
# single-instance operations


def fm_forward(fm: FmParams, x: SparseInstance) -> float:
    """y_fm of one instance with any number of active entities."""
    if not x.active:
        return 0.0 if fm.w0 is None else float(fm.w0[0])
    idx = np.array([[e for e, _ in x.active]], dtype=np.int64)
    val = np.array([[v for _, v in x.active]], dtype=np.float64)
    _check_indices(idx, fm.N)
    return float(fm_forward_batch(fm, idx, val)[0][0])


def deep_forward(deep: DeepParams, embeddings: Sequence[np.ndarray], final_activation="relu"):
    """y_dnn for one instance from its C (already scaled) slot embeddings."""
    a0 = np.concatenate([np.asarray(e, dtype=np.float64).ravel() for e in embeddings])[None, :]
    deep.check()
    y, cache = deep_forward_batch(deep, a0, final_activation)
    return float(y[0]), [(a[0], z[0]) for a, z, _ in cache]


def predict(model: DeepFM, x: SparseInstance) -> float:
    return float(model.predict_proba(stack([x]))[0])


def backward(model: DeepFM, x: SparseInstance, label: int) -> dict[str, np.ndarray]:
    """Gradient of the log loss of one labelled instance."""
    batch = stack([SparseInstance(x.active, int(label), x.token_id)])
    return model.loss_and_grad(batch)[1]
