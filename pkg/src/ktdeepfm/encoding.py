"""Categories, entities and sparse instances.

Every (category, discrete value) pair is an entity numbered 1..N.  Each
discrete category also owns a ``None`` entity that stands for a missing or
unseen value, and each continuous category owns exactly one entity whose
value is the measurement itself.  An encoded token activates exactly one
entity per category of its schema.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyDataset, SchemaMismatch, UnlabeledToken
from .slam import MORPH_FEATURES, LabeledExercise

DISCRETE = "discrete"
CONTINUOUS = "continuous"

FUNDAMENTAL = (
    "user",
    "token",
    "part_of_speech",
    "dependency_label",
    "exercise_index",
    "countries",
    "client",
    "session",
    "format",
)
NOISY = MORPH_FEATURES
CONTINUOUS_CATEGORIES = ("time", "days")

FEATURE_SETS = {
    "irt": ("user", "token"),
    "fundamental": FUNDAMENTAL,
    "fundamental-plus": FUNDAMENTAL + NOISY + CONTINUOUS_CATEGORIES,
}

VOCAB_HEADER = "# ktdeepfm vocab v1"


@dataclass(frozen=True)
class CategorySchema:
    feature_set: str
    categories: tuple[tuple[str, str], ...]

    def __post_init__(self):
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate category names in {names}")

    @classmethod
    def preset(cls, feature_set: str) -> "CategorySchema":
        try:
            names = FEATURE_SETS[feature_set]
        except KeyError:
            raise ValueError(
                f"unknown feature set {feature_set!r}; choose from {sorted(FEATURE_SETS)}"
            ) from None
        return cls(
            feature_set,
            tuple(
                (n, CONTINUOUS if n in CONTINUOUS_CATEGORIES else DISCRETE) for n in names
            ),
        )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.categories)

    @property
    def continuous(self) -> tuple[str, ...]:
        return tuple(name for name, kind in self.categories if kind == CONTINUOUS)

    def __len__(self):
        return len(self.categories)


def category_value(category, meta, token):
    """Raw value of one category for one token.

    Discrete values come back as strings (or None when missing); continuous
    ones as floats, NaN when missing.  Only the first country is used.
    """
    if category == "user":
        return meta.user
    if category == "token":
        return token.token
    if category == "part_of_speech":
        return token.part_of_speech
    if category == "dependency_label":
        return token.dependency_label
    if category == "exercise_index":
        return str(meta.exercise_index)
    if category == "countries":
        return meta.countries[0]
    if category in ("client", "session", "format"):
        return getattr(meta, category)
    if category in MORPH_FEATURES:
        return token.morph_features.get(category)
    if category == "time":
        return math.nan if meta.time is None else float(meta.time)
    if category == "days":
        return float(meta.days)
    raise ValueError(f"unknown category {category!r}")


class Vocab:
    """Frozen bijection between entities and the indices 1..N."""

    def __init__(self, schema: CategorySchema, entities: Sequence[tuple[str, str | None]]):
        self.schema = schema
        self.entities = list(entities)
        self.entity_index = {e: i for i, e in enumerate(self.entities, start=1)}
        if len(self.entity_index) != len(self.entities):
            raise ValueError("duplicate entities")
        self._category = np.array(
            [schema.names.index(cat) for cat, _ in self.entities], dtype=np.int64
        )
        self._none = {}
        for name, _ in schema.categories:
            if (name, None) not in self.entity_index:
                raise ValueError(f"category {name!r} has no None/reserved entity")
            self._none[name] = self.entity_index[name, None]

    @property
    def N(self) -> int:
        return len(self.entities)

    def __len__(self):
        return self.N

    def __eq__(self, other):
        return (
            isinstance(other, Vocab)
            and self.schema == other.schema
            and self.entities == other.entities
        )

    def none_entity(self, category: str) -> int:
        """The None entity of a discrete category, or the reserved slot of a continuous one."""
        return self._none[category]

    def lookup(self, category: str, value) -> int:
        return self.entity_index.get((category, value), self._none[category])

    def category_of(self, entity: int) -> str:
        return self.entities[entity - 1][0]

    def category_positions(self, entities) -> np.ndarray:
        """Schema position of each entity in an array of 1-based indices."""
        return self._category[np.asarray(entities) - 1]

    def to_text(self) -> str:
        """Tab-separated ``category kind value index`` lines under a version header."""
        lines = [VOCAB_HEADER, f"# feature_set\t{self.schema.feature_set}"]
        kinds = dict(self.schema.categories)
        for i, (cat, value) in enumerate(self.entities, start=1):
            if kinds[cat] == CONTINUOUS:
                tag = "continuous"
            elif value is None:
                tag = "none"
            else:
                tag = "value"
            lines.append(f"{cat}\t{tag}\t{'' if value is None else value}\t{i}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocab":
        lines = text.splitlines()
        if not lines or lines[0] != VOCAB_HEADER:
            raise SchemaMismatch(f"not a v1 vocab file (header {lines[:1]!r})")
        key, _, feature_set = lines[1][2:].partition("\t")
        if key != "feature_set":
            raise SchemaMismatch("vocab file lacks a feature_set line")
        schema = CategorySchema.preset(feature_set)
        entities = []
        for lineno, line in enumerate(lines[2:], start=3):
            cat, tag, value, index = line.split("\t")
            if int(index) != len(entities) + 1:
                raise SchemaMismatch(f"vocab line {lineno}: index {index} out of sequence")
            entities.append((cat, value if tag == "value" else None))
        vocab = cls(schema, entities)
        if set(c for c, _ in entities) != set(schema.names):
            raise SchemaMismatch("vocab categories do not match its feature set")
        return vocab

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def fit_vocab(data: Iterable[LabeledExercise], schema: CategorySchema) -> Vocab:
    """Index every entity seen in ``data``.

    Indices follow schema category order, then first occurrence within a
    category; each discrete category ends with its None entity.
    """
    data = list(data)
    if not data:
        raise EmptyDataset("cannot fit a vocabulary on no exercises", module="encoder")
    seen = {name: {} for name in schema.names}
    for ex in data:
        for tok in ex.tokens:
            for name, kind in schema.categories:
                if kind == DISCRETE:
                    value = category_value(name, ex.meta, tok)
                    if value is not None:
                        seen[name].setdefault(value, None)
    entities = []
    for name, kind in schema.categories:
        entities.extend((name, v) for v in seen[name])
        entities.append((name, None))
    return Vocab(schema, entities)


@dataclass(frozen=True)
class SparseInstance:
    """One token: ``active`` holds (entity, value) pairs in schema order."""

    active: tuple[tuple[int, float], ...]
    label: int | None
    token_id: str = ""


@dataclass
class InstanceBatch:
    """Column-stacked instances: column c holds the entity of category c.

    ``idx`` stores 1-based entity numbers.  Unlabelled rows carry label -1.
    """

    idx: np.ndarray
    val: np.ndarray
    labels: np.ndarray
    token_ids: list[str] = field(default_factory=list)

    def __len__(self):
        return self.idx.shape[0]

    @property
    def n_categories(self) -> int:
        return self.idx.shape[1]

    @property
    def labelled(self) -> bool:
        return bool(np.all(self.labels >= 0))

    def take(self, rows) -> "InstanceBatch":
        rows = np.asarray(rows)
        return InstanceBatch(
            self.idx[rows],
            self.val[rows],
            self.labels[rows],
            [self.token_ids[i] for i in rows] if self.token_ids else [],
        )

    def instances(self) -> list[SparseInstance]:
        ids = self.token_ids or [""] * len(self)
        return [
            SparseInstance(
                tuple((int(e), float(v)) for e, v in zip(self.idx[i], self.val[i])),
                None if self.labels[i] < 0 else int(self.labels[i]),
                ids[i],
            )
            for i in range(len(self))
        ]

    @classmethod
    def concat(cls, batches: Sequence["InstanceBatch"]) -> "InstanceBatch":
        return cls(
            np.concatenate([b.idx for b in batches]),
            np.concatenate([b.val for b in batches]),
            np.concatenate([b.labels for b in batches]),
            [t for b in batches for t in b.token_ids],
        )


def stack(instances: Sequence[SparseInstance], n_categories: int | None = None) -> InstanceBatch:
    if not instances:
        c = n_categories or 0
        return InstanceBatch(
            np.zeros((0, c), dtype=np.int64),
            np.zeros((0, c)),
            np.zeros(0, dtype=np.int64),
            [],
        )
    return InstanceBatch(
        np.array([[e for e, _ in x.active] for x in instances], dtype=np.int64),
        np.array([[v for _, v in x.active] for x in instances], dtype=np.float64),
        np.array([-1 if x.label is None else x.label for x in instances], dtype=np.int64),
        [x.token_id for x in instances],
    )


def _check_schema(vocab, schema):
    if vocab.schema != schema:
        raise SchemaMismatch(
            f"vocab was fitted for {vocab.schema.feature_set!r}, "
            f"encoding requested {schema.feature_set!r}"
        )


def _encode_rows(exercise, vocab, schema, strict):
    rows = []
    for tok in exercise.tokens:
        if strict and tok.label is None:
            raise UnlabeledToken(f"token {tok.token_id!r} has no label")
        active = []
        for name, kind in schema.categories:
            value = category_value(name, exercise.meta, tok)
            if kind == CONTINUOUS:
                active.append((vocab.none_entity(name), value))
            else:
                active.append((vocab.lookup(name, value), 1.0))
        rows.append((tuple(active), tok.label, tok.token_id))
    return rows


def encode(
    exercise: LabeledExercise,
    vocab: Vocab,
    schema: CategorySchema,
    *,
    strict: bool = False,
) -> list[SparseInstance]:
    """One instance per token.

    Continuous categories carry the raw measurement (NaN when missing) until
    :func:`normalize_continuous` imputes and rescales them.
    """
    _check_schema(vocab, schema)
    return [SparseInstance(*row) for row in _encode_rows(exercise, vocab, schema, strict)]


def encode_dataset(
    data: Iterable[LabeledExercise],
    vocab: Vocab,
    schema: CategorySchema,
    *,
    strict: bool = False,
) -> InstanceBatch:
    _check_schema(vocab, schema)
    idx, val, labels, ids = [], [], [], []
    for ex in data:
        for active, label, token_id in _encode_rows(ex, vocab, schema, strict):
            idx.append([e for e, _ in active])
            val.append([v for _, v in active])
            labels.append(-1 if label is None else label)
            ids.append(token_id)
    c = len(schema)
    return InstanceBatch(
        np.array(idx, dtype=np.int64).reshape(-1, c),
        np.array(val, dtype=np.float64).reshape(-1, c),
        np.array(labels, dtype=np.int64),
        ids,
    )


# ---------------------------------------------------------------------------
# continuous features

NORMALIZATION_POLICIES = ("none", "standardize", "log1p_standardize")
DEFAULT_POLICY = {"time": "log1p_standardize", "days": "standardize"}


@dataclass(frozen=True)
class NormStats:
    """Fitted scaling for one continuous category.

    ``impute`` is the raw training mean used for missing values; ``mean`` and
    ``std`` describe the transformed (e.g. log1p) training values.
    """

    policy: str
    impute: float
    mean: float
    std: float
    degenerate: bool = False

    def apply(self, raw: np.ndarray) -> np.ndarray:
        x = np.where(np.isnan(raw), self.impute, raw)
        if self.policy == "none":
            return x
        if self.policy == "log1p_standardize":
            x = np.log1p(x)
        x = x - self.mean
        if not self.degenerate:
            x = x / self.std
        return x

    def to_dict(self) -> dict:
        return dict(
            policy=self.policy,
            impute=self.impute,
            mean=self.mean,
            std=self.std,
            degenerate=self.degenerate,
        )

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormStats":
        return cls(
            d["policy"], float(d["impute"]), float(d["mean"]), float(d["std"]), bool(d["degenerate"])
        )


def _resolve_policy(policy, names):
    if isinstance(policy, str):
        policy = {n: policy for n in names}
    out = {}
    for n in names:
        p = policy.get(n, "standardize")
        if p not in NORMALIZATION_POLICIES:
            raise ValueError(f"unknown normalization policy {p!r}")
        out[n] = p
    return out


def fit_norm_stats(raw: np.ndarray, policy: str) -> NormStats:
    observed = raw[~np.isnan(raw)]
    impute = float(observed.mean()) if observed.size else 0.0
    if policy == "none":
        return NormStats(policy, impute, 0.0, 1.0)
    x = np.log1p(observed) if policy == "log1p_standardize" else observed
    if x.size == 0:
        return NormStats(policy, impute, 0.0, 1.0, degenerate=True)
    mean = float(x.mean())
    std = float(x.std())
    if std == 0.0:
        return NormStats(policy, impute, mean, 1.0, degenerate=True)
    return NormStats(policy, impute, mean, std)


def normalize_continuous(instances, vocab: Vocab, policy=DEFAULT_POLICY, stats=None):
    """Impute and rescale the continuous columns.

    Returns ``(instances, stats)`` where ``stats`` maps category name to
    :class:`NormStats`.  Pass the training stats back in to transform
    validation or test data with the same parameters.  Accepts either an
    :class:`InstanceBatch` or a list of :class:`SparseInstance`, and returns
    the same kind.
    """
    as_list = not isinstance(instances, InstanceBatch)
    batch = stack(instances, len(vocab.schema)) if as_list else instances
    names = vocab.schema.continuous
    if stats is None:
        policies = _resolve_policy(policy, names)
    val = batch.val.copy()
    new_stats = {}
    for name in names:
        col = vocab.schema.names.index(name)
        if len(batch):
            reserved = vocab.none_entity(name)
            if np.any(batch.idx[:, col] != reserved):
                raise SchemaMismatch(f"column {col} does not hold the {name!r} entity")
        if stats is None:
            st = fit_norm_stats(batch.val[:, col], policies[name])
        else:
            st = stats[name]
        new_stats[name] = st
        val[:, col] = st.apply(batch.val[:, col])
    out = InstanceBatch(batch.idx, val, batch.labels, batch.token_ids)
    return (out.instances() if as_list else out), new_stats
