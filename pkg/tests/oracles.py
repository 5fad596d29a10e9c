"""Independent reference computations used by the test-suite.

Nothing here calls into the vectorised code paths it is meant to check.
"""

import math

import numpy as np

from ktdeepfm.encoding import InstanceBatch
from ktdeepfm.model import DeepFM, DeepParams, FmParams, ModelConfig


def naive_fm(w, V, active, w0=0.0):
    """Bias terms plus the O(k^2) double loop over active pairs."""
    total = w0
    for k, x in active:
        total += w[k - 1] * x
    for a in range(len(active)):
        for b in range(a + 1, len(active)):
            (k, xk), (l, xl) = active[a], active[b]
            total += xk * xl * float(sum(V[k - 1, f] * V[l - 1, f] for f in range(V.shape[1])))
    return total


def pairwise_auc(scores, labels):
    """Count positive/negative pairs directly, ties worth 1/2."""
    wins = ties = 0
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y != 1]
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1
            elif p == n:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def sigmoid(z):
    return 1.0 / (1.0 + math.exp(-z))


def random_batch(rng, cardinalities, n, continuous=()):
    """Instances with one entity per category; columns in ``continuous`` get real values."""
    offsets = np.cumsum((0,) + tuple(cardinalities[:-1]))
    idx = np.stack(
        [rng.integers(0, c, n) + off + 1 for c, off in zip(cardinalities, offsets)], axis=1
    ).astype(np.int64)
    val = np.ones(idx.shape)
    for col in continuous:
        val[:, col] = rng.normal(0.0, 1.5, n)
    labels = rng.integers(0, 2, n)
    return InstanceBatch(idx, val, labels, [f"t{i}" for i in range(n)])


def random_model(rng, cardinalities, d, hidden, link, final_activation, deep=True,
                 global_bias=False, scale=0.5):
    N = int(sum(cardinalities))
    C = len(cardinalities)
    config = ModelConfig(
        d=d, deep_enabled=deep, hidden_widths=tuple(hidden), link=link,
        final_activation=final_activation, global_bias=global_bias,
    )
    fm = FmParams(
        rng.normal(0.0, scale, N),
        rng.normal(0.0, scale, (N, d)),
        rng.normal(0.0, scale, 1) if global_bias else None,
    )
    layers = None
    if deep:
        widths = [C * d, *hidden, 1]
        layers = DeepParams(
            [
                (rng.normal(0.0, 1.0 / math.sqrt(a), (b, a)), rng.normal(0.0, 0.3, b))
                for a, b in zip(widths, widths[1:])
            ]
        )
        # keep the output unit alive for a relu head so the deep path is exercised
        W, b = layers.layers[-1]
        b += 0.5
    return DeepFM(config, fm, layers, C)


def finite_difference_grads(model, batch, step=1e-5):
    """Central differences of model.loss over every parameter coordinate."""
    grads = {}
    for name, arr in model.params().items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = model.loss(batch)
            flat[i] = orig - step
            down = model.loss(batch)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-12):
    """max |a - n| / max(|a|, |n|, floor) over all coordinates of all groups."""
    worst = 0.0
    for name in numeric:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(err.max()) if err.size else 0.0)
    return worst
