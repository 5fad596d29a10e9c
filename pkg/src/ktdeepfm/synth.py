"""Synthetic data with known parameters.

:func:`gen_rasch` draws user abilities and item difficulties, samples
answers from ``P(correct) = sigmoid(theta - difficulty)`` and writes them in
SLAM text form, one single-token exercise per answer, so the parser and
encoder run on it like on real logs.  The item plays the role of the token.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import special

from .encoding import InstanceBatch, Vocab
from .errors import DegenerateVariance
from .model import FmParams, fm_forward_batch, link_prob
from .slam import LabeledExercise, parse_dataset


def _names(prefix, n):
    width = max(4, len(str(max(n - 1, 0))))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


@dataclass
class RaschWorld:
    theta: np.ndarray
    diff: np.ndarray
    seed: int = 0

    @property
    def user_names(self) -> list[str]:
        return _names("u", len(self.theta))

    @property
    def item_names(self) -> list[str]:
        return _names("i", len(self.diff))

    def correct_prob(self, users, items) -> np.ndarray:
        return special.expit(self.theta[users] - self.diff[items])

    def mistake_prob(self, users, items) -> np.ndarray:
        return special.expit(self.diff[items] - self.theta[users])

    def truth_text(self) -> str:
        """Sidecar listing every true parameter, tab separated."""
        lines = [f"user\t{n}\t{t!r}" for n, t in zip(self.user_names, self.theta.tolist())]
        lines += [f"item\t{n}\t{d!r}" for n, d in zip(self.item_names, self.diff.tolist())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_truth_text(cls, text: str, seed: int = 0) -> "RaschWorld":
        theta, diff = [], []
        for line in text.splitlines():
            if not line.strip():
                continue
            kind, _, value = line.split("\t")
            (theta if kind == "user" else diff).append(float(value))
        return cls(np.array(theta), np.array(diff), seed)


@dataclass
class RaschData:
    world: RaschWorld
    text: str

    def exercises(self) -> list[LabeledExercise]:
        return parse_dataset(io.StringIO(self.text))


def gen_rasch(users: int, items: int, per_user: int, seed: int, *,
              world: RaschWorld | None = None) -> RaschData:
    """Sample a Rasch population and its answers.

    Each user answers ``per_user`` distinct items chosen at random.  Labels
    follow the SLAM convention: 1 means the answer was a mistake.  Passing
    ``world`` fixes theta and the difficulties instead of drawing them.
    """
    rng = np.random.default_rng(seed)
    if world is None:
        theta = rng.normal(0.0, 1.0, users)
        diff = rng.normal(0.0, 1.0, items)
        world = RaschWorld(theta, diff, seed)
    users, items = len(world.theta), len(world.diff)
    if per_user > items:
        raise ValueError(f"per_user={per_user} exceeds the {items} items")
    user_names, item_names = world.user_names, world.item_names

    out = []
    for u in range(users):
        chosen = rng.choice(items, size=per_user, replace=False)
        mistakes = rng.random(per_user) < world.mistake_prob(u, chosen)
        times = rng.integers(1, 60, size=per_user)
        for k, (j, wrong, t) in enumerate(zip(chosen, mistakes, times)):
            out.append(
                f"# user:{user_names[u]} countries:ZZ days:{k * 0.25!r} client:web "
                f"session:lesson format:reverse_translate time:{t}\n"
                f"{user_names[u]}x{k:04d}00  {item_names[j]}  NOUN  _  ROOT  0  {int(wrong)}\n"
                "\n"
            )
    return RaschData(world, "".join(out))


def _pearson(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) < 2 or np.std(a) == 0 or np.std(b) == 0:
        raise DegenerateVariance("correlation undefined for constant or too short vectors")
    return float(np.corrcoef(a, b)[0, 1])


def recovery_score(world: RaschWorld, fm: FmParams, vocab: Vocab) -> tuple[float, float]:
    """Correlations between true and learned abilities and easiness.

    The model predicts mistakes, so a user's learned ability is minus their
    bias and an item's learned easiness is minus its bias; both are compared
    with theta and -difficulty.  Entities the vocabulary never saw are
    skipped.  Pearson correlation ignores the common shift left free by the
    model.
    """
    def collect(category, names, truth):
        t, est = [], []
        for name, value in zip(names, truth):
            key = (category, name)
            if key in vocab.entity_index:
                t.append(value)
                est.append(-fm.w[vocab.entity_index[key] - 1])
        return t, est

    ability = _pearson(*collect("user", world.user_names, world.theta))
    easiness = _pearson(*collect("token", world.item_names, -world.diff))
    return ability, easiness


def true_mistake_prob(world: RaschWorld, exercises) -> np.ndarray:
    """Ground-truth mistake probability for each token, in file order."""
    u_index = {n: i for i, n in enumerate(world.user_names)}
    i_index = {n: i for i, n in enumerate(world.item_names)}
    users, items = [], []
    for ex in exercises:
        for tok in ex.tokens:
            users.append(u_index[ex.meta.user])
            items.append(i_index[tok.token])
    return world.mistake_prob(np.array(users, dtype=np.int64), np.array(items, dtype=np.int64))


@dataclass
class FmWorld:
    """A ground-truth FM over ``len(cardinalities)`` one-hot categories."""

    params: FmParams
    cardinalities: tuple[int, ...]
    link: str = "sigmoid"

    @classmethod
    def random(cls, cardinalities, d, seed, scale=1.0, link="sigmoid") -> "FmWorld":
        rng = np.random.default_rng(seed)
        n = int(sum(cardinalities))
        fm = FmParams(rng.normal(0.0, scale, n), rng.normal(0.0, scale / np.sqrt(max(d, 1)), (n, d)))
        return cls(fm, tuple(cardinalities), link)

    def sample(self, n: int, seed: int) -> InstanceBatch:
        rng = np.random.default_rng(seed)
        offsets = np.cumsum((0,) + self.cardinalities[:-1])
        idx = np.stack(
            [rng.integers(0, c, n) + off + 1 for c, off in zip(self.cardinalities, offsets)],
            axis=1,
        ).astype(np.int64)
        val = np.ones(idx.shape)
        y_fm, _ = fm_forward_batch(self.params, idx, val)
        labels = (rng.random(n) < link_prob(y_fm, self.link)).astype(np.int64)
        return InstanceBatch(idx, val, labels, [f"s{i}" for i in range(n)])
