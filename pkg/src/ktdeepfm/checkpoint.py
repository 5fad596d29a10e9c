"""Checkpoint serialization.

A checkpoint is canonical JSON (sorted keys, floats written with ``repr``
so they round-trip bit for bit)::

    {
      "format": "ktdeepfm-checkpoint", "version": 1,
      "config": {...ModelConfig...},
      "feature_set": "irt", "n_categories": 2, "n_entities": N,
      "vocab_sha256": "<hex digest of the vocab text file>",
      "norm_stats": {"time": {...}, ...},
      "params": {"w": [...], "V": [[...], ...], "W0": [[...]], "b0": [...], ...}
    }

Parameter names follow :meth:`DeepFM.params`.  The vocabulary itself lives
next to the checkpoint in its own text file; only its digest is stored here.
"""

from __future__ import annotations

import json

import numpy as np

from .encoding import NormStats
from .errors import SchemaMismatch
from .model import DeepFM, DeepParams, FmParams, ModelConfig

FORMAT = "ktdeepfm-checkpoint"
VERSION = 1


def dumps(model: DeepFM, *, feature_set: str, vocab_sha256: str,
          norm_stats: dict[str, NormStats] | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "config": model.config.to_dict(),
        "feature_set": feature_set,
        "n_categories": model.n_categories,
        "n_entities": model.N,
        "vocab_sha256": vocab_sha256,
        "norm_stats": {k: v.to_dict() for k, v in (norm_stats or {}).items()},
        "params": {k: v.tolist() for k, v in model.params().items()},
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def loads(text: str):
    """Returns ``(model, info)``; ``info`` holds feature_set, vocab digest and stats."""
    doc = json.loads(text)
    if doc.get("format") != FORMAT:
        raise SchemaMismatch("not a ktdeepfm checkpoint")
    if doc.get("version") != VERSION:
        raise SchemaMismatch(f"unsupported checkpoint version {doc.get('version')}")
    cfg = dict(doc["config"])
    cfg["hidden_widths"] = tuple(cfg["hidden_widths"])
    config = ModelConfig(**cfg)
    p = doc["params"]
    N = doc["n_entities"]
    V = np.array(p["V"], dtype=np.float64).reshape(N, config.d)
    fm = FmParams(
        np.array(p["w"], dtype=np.float64),
        V,
        np.array(p["w0"], dtype=np.float64) if "w0" in p else None,
    )
    deep = None
    if config.deep_enabled:
        layers = []
        i = 0
        while f"W{i}" in p:
            layers.append(
                (np.array(p[f"W{i}"], dtype=np.float64), np.array(p[f"b{i}"], dtype=np.float64))
            )
            i += 1
        deep = DeepParams(layers)
    model = DeepFM(config, fm, deep, doc["n_categories"])
    info = {
        "feature_set": doc["feature_set"],
        "vocab_sha256": doc["vocab_sha256"],
        "norm_stats": {k: NormStats.from_dict(v) for k, v in doc["norm_stats"].items()},
    }
    return model, info
