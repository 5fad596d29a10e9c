"""Reader and writer for SLAM-style interaction logs.

An exercise is a metadata line followed by one token line per word and a
blank line::

    # user:XEinXf5+ countries:CO days:1.793 client:web session:lesson format:reverse_translate time:13
    8rgJEAPw1001  Is  AUX  Mood=Ind|Number=Sing  ROOT  0  1

Token columns are ``token_id token part_of_speech morph_features
dependency_label dependency_head [label]``.  Label 1 marks a token the
student got wrong.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, TextIO

import numpy as np

from .errors import DuplicateKey, EmptyDataset, MalformedLine, MissingLabel

MORPH_FEATURES = (
    "Definite",
    "Gender",
    "Number",
    "fPOS",
    "Person",
    "PronType",
    "Mood",
    "Tense",
    "VerbForm",
)

REQUIRED_META = ("user", "countries", "days", "client", "session", "format")
_KNOWN_META = REQUIRED_META + ("time",)


@dataclass(frozen=True)
class ExerciseMeta:
    user: str
    countries: tuple[str, ...]
    days: float
    client: str
    session: str
    format: str
    time: float | None = None
    exercise_index: int = 0
    prompt: str | None = None
    extra: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class TokenRecord:
    token_id: str
    token: str
    part_of_speech: str
    morph_features: dict[str, str]
    dependency_label: str
    dependency_head: int
    label: int | None = None
    # morphology keys outside MORPH_FEATURES; kept for lossless dumps, never encoded
    extra_morph: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class LabeledExercise:
    meta: ExerciseMeta
    tokens: tuple[TokenRecord, ...]

    def __len__(self):
        return len(self.tokens)


def _parse_float(text, lineno, line, key):
    try:
        value = float(text)
    except ValueError:
        raise MalformedLine(lineno, line, f"{key} is not a number") from None
    if not math.isfinite(value):
        raise MalformedLine(lineno, line, f"{key} is not finite")
    return value


def _parse_meta(body, lineno, line):
    pairs = {}
    for part in body.split():
        key, sep, value = part.partition(":")
        if not sep or not key:
            raise MalformedLine(lineno, line, f"expected key:value, got {part!r}")
        if key in pairs:
            raise DuplicateKey(f"line {lineno}: key {key!r} repeated")
        pairs[key] = value
    missing = [k for k in REQUIRED_META if k not in pairs]
    if missing:
        raise MalformedLine(lineno, line, f"missing keys {missing}")

    countries = tuple(c for c in pairs["countries"].split("|") if c)
    if not countries:
        raise MalformedLine(lineno, line, "empty countries")
    days = _parse_float(pairs["days"], lineno, line, "days")
    if days < 0:
        raise MalformedLine(lineno, line, "negative days")

    # the public release writes time:null for unknown durations and has a
    # handful of negative ones; both are treated as missing
    time = None
    raw_time = pairs.get("time")
    if raw_time is not None and raw_time.lower() not in ("null", "none", ""):
        time = _parse_float(raw_time, lineno, line, "time")
        if time < 0:
            time = None

    return dict(
        user=pairs["user"],
        countries=countries,
        days=days,
        client=pairs["client"],
        session=pairs["session"],
        format=pairs["format"],
        time=time,
        extra={k: v for k, v in pairs.items() if k not in _KNOWN_META},
    )


def _parse_morph(column, lineno, line):
    known, extra = {}, {}
    if column == "_":
        return known, extra
    for item in column.split("|"):
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise MalformedLine(lineno, line, f"bad morphology item {item!r}")
        (known if key in MORPH_FEATURES else extra)[key] = value
    return known, extra


def _parse_token(cols, lineno, line, lowercase):
    if len(cols) not in (6, 7):
        raise MalformedLine(lineno, line, f"expected 6 or 7 columns, got {len(cols)}")
    token_id, token, pos, morph, dep_label, head = cols[:6]
    try:
        head = int(head)
    except ValueError:
        raise MalformedLine(lineno, line, "dependency_head is not an integer") from None
    label = None
    if len(cols) == 7:
        if cols[6] not in ("0", "1"):
            raise MalformedLine(lineno, line, "label must be 0 or 1")
        label = int(cols[6])
    known, extra = _parse_morph(morph, lineno, line)
    return TokenRecord(
        token_id=token_id,
        token=token.lower() if lowercase else token,
        part_of_speech=pos,
        morph_features=known,
        dependency_label=dep_label,
        dependency_head=head,
        label=label,
        extra_morph=extra,
    )


def parse_dataset(
    lines: Iterable[str],
    labels: Mapping[str, int] | None = None,
    *,
    strict_labels: bool = False,
    lowercase: bool = True,
) -> list[LabeledExercise]:
    """Parse a SLAM-format stream into exercises, in file order.

    When ``labels`` is given, token labels are looked up by token id and take
    precedence over an inline seventh column.  ``exercise_index`` counts each
    user's exercises from 0 in file order.
    """
    exercises = []
    per_user = defaultdict(int)
    meta = None
    meta_lineno = 0
    tokens = []
    prompt = None

    def close():
        nonlocal meta, tokens
        if meta is None:
            return
        if not tokens:
            raise MalformedLine(meta_lineno, "", "exercise has no token lines")
        index = per_user[meta["user"]]
        per_user[meta["user"]] += 1
        exercises.append(
            LabeledExercise(ExerciseMeta(exercise_index=index, **meta), tuple(tokens))
        )
        meta, tokens = None, []

    lineno = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        stripped = line.strip()
        if not stripped:
            if prompt is not None and meta is None:
                raise MalformedLine(lineno, line, "prompt line without exercise")
            close()
            continue
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if body.startswith("prompt:"):
                close()
                if prompt is not None:
                    raise DuplicateKey(f"line {lineno}: key 'prompt' repeated")
                prompt = body[len("prompt:"):]
                continue
            close()
            meta = _parse_meta(body, lineno, line)
            meta["prompt"] = prompt
            prompt = None
            meta_lineno = lineno
            continue
        if meta is None:
            raise MalformedLine(lineno, line, "token line outside an exercise")
        record = _parse_token(stripped.split(), lineno, line, lowercase)
        if labels is not None and record.token_id in labels:
            record = _with_label(record, labels[record.token_id], lineno, line)
        if strict_labels and record.label is None:
            raise MissingLabel(f"line {lineno}: no label for token {record.token_id!r}")
        tokens.append(record)
    if prompt is not None and meta is None:
        raise MalformedLine(lineno, "", "prompt line without exercise")
    close()
    return exercises


def _with_label(record, value, lineno, line):
    if value not in (0, 1):
        raise MalformedLine(lineno, line, f"label {value!r} for {record.token_id} is not 0/1")
    return TokenRecord(
        token_id=record.token_id,
        token=record.token,
        part_of_speech=record.part_of_speech,
        morph_features=record.morph_features,
        dependency_label=record.dependency_label,
        dependency_head=record.dependency_head,
        label=int(value),
        extra_morph=record.extra_morph,
    )


def read_labels(lines: Iterable[str]) -> dict[str, int]:
    """Read a key file of ``token_id label`` lines."""
    labels = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        cols = line.split()
        if len(cols) != 2 or cols[1] not in ("0", "1"):
            raise MalformedLine(lineno, line, "expected 'token_id label'")
        if cols[0] in labels:
            raise DuplicateKey(f"line {lineno}: token {cols[0]!r} labelled twice")
        labels[cols[0]] = int(cols[1])
    return labels


def load_dataset(path, labels_path=None, **kwargs) -> list[LabeledExercise]:
    labels = None
    if labels_path is not None:
        with open(labels_path, encoding="utf-8") as f:
            labels = read_labels(f)
    with open(path, encoding="utf-8") as f:
        return parse_dataset(f, labels, **kwargs)


def _num(x):
    text = repr(float(x))
    return text[:-2] if text.endswith(".0") else text


def format_exercise(ex: LabeledExercise) -> str:
    m = ex.meta
    out = []
    if m.prompt is not None:
        out.append(f"# prompt:{m.prompt}")
    fields = [
        f"user:{m.user}",
        f"countries:{'|'.join(m.countries)}",
        f"days:{_num(m.days)}",
        f"client:{m.client}",
        f"session:{m.session}",
        f"format:{m.format}",
    ]
    if m.time is not None:
        fields.append(f"time:{_num(m.time)}")
    fields.extend(f"{k}:{v}" for k, v in m.extra.items())
    out.append("# " + " ".join(fields))
    for t in ex.tokens:
        morph = {**t.morph_features, **t.extra_morph}
        morph_col = "|".join(f"{k}={morph[k]}" for k in sorted(morph)) or "_"
        cols = [
            t.token_id,
            t.token,
            t.part_of_speech,
            morph_col,
            t.dependency_label,
            str(t.dependency_head),
        ]
        if t.label is not None:
            cols.append(str(t.label))
        out.append("  ".join(cols))
    return "\n".join(out) + "\n"


def dump_dataset(exercises: Iterable[LabeledExercise], out: TextIO) -> None:
    """Write exercises back in canonical textual form."""
    for ex in exercises:
        out.write(format_exercise(ex))
        out.write("\n")


def split_by_fraction(data, fraction, seed):
    """Split exercises into (train, validation) at exercise granularity.

    The training side receives ``round(fraction * len(data))`` exercises,
    using Python's ``round`` (ties to even, so 50.5 -> 50).  Both sides keep
    the original file order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    data = list(data)
    if not data:
        raise EmptyDataset("cannot split an empty dataset")
    n_train = round(fraction * len(data))
    order = np.random.default_rng(seed).permutation(len(data))
    chosen = np.zeros(len(data), dtype=bool)
    chosen[order[:n_train]] = True
    train = [ex for ex, c in zip(data, chosen) if c]
    val = [ex for ex, c in zip(data, chosen) if not c]
    return train, val
