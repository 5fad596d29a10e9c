"""Command line front end: ``synth``, ``train``, ``evaluate``, ``predict``, ``dump``.

Settings are layered: preset, then an optional ``key = value`` config
file, then command line flags.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .encoding import CategorySchema, Vocab, encode_dataset, fit_vocab, normalize_continuous
from .errors import KtError, SchemaMismatch
from .metrics import evaluate as evaluate_scores
from .model import DeepFM
from .presets import PRESETS, get_preset, with_overrides
from .slam import dump_dataset, load_dataset
from .synth import gen_rasch
from .training import refit, train

log = logging.getLogger("ktdeepfm")

CHECKPOINT = "checkpoint.json"
VOCAB = "vocab.tsv"

# config-file / flag key -> (section, field, parser)
_OVERRIDES = {
    "epochs": ("train", "epochs", int),
    "lr": ("train", "learning_rate", float),
    "batch": ("train", "batch_size", int),
    "patience": ("train", "patience", int),
    "es_metric": ("train", "es_metric", str),
    "refit_on": ("train", "refit_on", str),
    "early_stopping": ("train", "early_stopping", lambda s: _parse_bool(s)),
    "embedding_dim": ("model", "d", int),
    "link": ("model", "link", str),
    "final_activation": ("model", "final_activation", lambda s: _parse_activation(s)),
    "hidden": ("model", "hidden_widths", lambda s: _parse_widths(s)),
    "dropout": ("model", "dropout", float),
    "global_bias": ("model", "global_bias", lambda s: _parse_bool(s)),
    "deep": ("model", "deep_enabled", lambda s: _parse_bool(s)),
}


class UsageError(Exception):
    pass


def _parse_bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {s!r}")


def _parse_activation(s):
    v = str(s).strip().lower()
    if v == "relu":
        return "relu"
    if v == "linear":
        return "linear"
    raise UsageError(f"final activation must be relu or linear, got {s!r}")


def _parse_widths(s):
    if isinstance(s, (list, tuple)):
        return tuple(int(x) for x in s)
    s = str(s).strip()
    return tuple(int(x) for x in s.split(",") if x.strip()) if s else ()


def read_config_file(path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_record(path):
    if path is None:
        return None
    return {"name": os.path.basename(path), "sha256": sha256_file(path)}


def _write(path: Path, text: str):
    path.write_text(text, encoding="utf-8")


def resolve(args):
    """Preset + config file + flags -> (preset name, Preset, seed)."""
    settings = {}
    if args.config:
        settings.update(read_config_file(args.config))
    for key in list(_OVERRIDES) + ["schema", "model", "seed"]:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    name = settings.pop("model", None) or "irt"
    preset = get_preset(name)
    model_over, train_over = {}, {}
    for key, value in settings.items():
        if key in ("schema", "seed"):
            continue
        if key not in _OVERRIDES:
            raise UsageError(f"unknown setting {key!r}")
        section, field, parse = _OVERRIDES[key]
        try:
            parsed = parse(value)
        except ValueError as err:
            raise UsageError(f"bad value for {key}: {err}") from None
        (model_over if section == "model" else train_over)[field] = parsed
    seed = int(settings.get("seed", 0))
    model_over["seed"] = seed
    train_over["shuffle_seed"] = seed
    try:
        resolved = with_overrides(preset, settings.get("schema"), model_over, train_over)
    except ValueError as err:
        raise UsageError(str(err)) from None
    return name, resolved, seed


@contextlib.contextmanager
def _determinism(enabled):
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def _encode(exercises, vocab, stats, strict):
    batch = encode_dataset(exercises, vocab, vocab.schema, strict=strict)
    batch, stats = normalize_continuous(batch, vocab, stats=stats)
    return batch, stats


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = gen_rasch(args.users, args.items, args.per_user, args.seed)
    dev = gen_rasch(0, 0, args.dev_per_user, args.seed + 1, world=data.world)
    _write(out / "train.slam", data.text)
    _write(out / "dev.slam", dev.text)
    _write(out / "truth.tsv", data.world.truth_text())
    print(f"wrote {out / 'train.slam'} {out / 'dev.slam'} {out / 'truth.tsv'}")
    return 0


def cmd_train(args):
    name, preset, seed = resolve(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    schema = CategorySchema.preset(preset.feature_set)
    lowercase = not args.keep_case

    train_ex = load_dataset(args.train, args.train_labels, lowercase=lowercase)
    dev_ex = load_dataset(args.dev, args.dev_labels, lowercase=lowercase) if args.dev else None
    vocab = fit_vocab(train_ex, schema)
    train_batch, stats = _encode(train_ex, vocab, None, strict=True)
    dev_batch = _encode(dev_ex, vocab, stats, strict=True)[0] if dev_ex else None

    model = DeepFM.create(preset.model, vocab.N, len(schema))
    vocab_text = vocab.to_text()
    vocab_sha = vocab.digest()
    _write(out / VOCAB, vocab_text)

    def save(m, epoch=None):
        _write(
            out / CHECKPOINT,
            checkpoint.dumps(m, feature_set=schema.feature_set, vocab_sha256=vocab_sha,
                             norm_stats=stats),
        )

    log_lines = [f"preset={name}", f"feature_set={schema.feature_set}"]
    log_lines += [f"model.{k}={v!r}" for k, v in preset.model.to_dict().items()]
    log_lines += [f"train.{k}={v!r}" for k, v in preset.train.to_dict().items()]
    log_lines += [f"n_entities={vocab.N}", f"n_train={len(train_batch)}",
                  f"n_dev={0 if dev_batch is None else len(dev_batch)}"]
    for line in log_lines:
        log.info(line)

    def progress(line):
        log_lines.append(line)
        log.info(line)

    trained, report = train(model, train_batch, dev_batch, preset.train,
                            progress=progress, on_best=save)
    save(trained)
    if args.refit and dev_batch is not None and report.best_epoch:
        progress(f"refit_on={preset.train.refit_on} epochs={report.best_epoch}")
        trained = refit(trained, train_batch, dev_batch, preset.train, report.best_epoch,
                        progress=progress)
        save(trained)

    _write(out / "train.log", "\n".join(log_lines) + "\n")
    _write(out / "report.json", json.dumps(report.to_dict(), sort_keys=True, indent=1) + "\n")
    manifest = {
        "command": "train",
        "version": __version__,
        "preset": name,
        "feature_set": schema.feature_set,
        "model_config": preset.model.to_dict(),
        "train_config": preset.train.to_dict(),
        "seed": seed,
        "deterministic": bool(args.deterministic),
        "refit": bool(args.refit),
        "lowercase": lowercase,
        "inputs": {
            "train": _input_record(args.train),
            "train_labels": _input_record(args.train_labels),
            "dev": _input_record(args.dev),
            "dev_labels": _input_record(args.dev_labels),
        },
        "outputs": {
            VOCAB: vocab_sha,
            CHECKPOINT: sha256_file(out / CHECKPOINT),
        },
    }
    _write(out / "manifest.json", json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    print(f"trained {name}: {report.epochs_run} epochs, best epoch {report.best_epoch}, "
          f"stopped: {report.stopping_reason}")
    return 0


def load_model(model_dir, vocab_path=None):
    model_dir = Path(model_dir)
    model, info = checkpoint.loads((model_dir / CHECKPOINT).read_text(encoding="utf-8"))
    vocab_text = Path(vocab_path or model_dir / VOCAB).read_text(encoding="utf-8")
    vocab = Vocab.from_text(vocab_text)
    if vocab.digest() != info["vocab_sha256"]:
        raise SchemaMismatch(
            f"vocab digest {vocab.digest()[:12]} does not match the checkpoint's "
            f"{info['vocab_sha256'][:12]}"
        )
    if vocab.schema.feature_set != info["feature_set"] or vocab.N != model.N:
        raise SchemaMismatch("vocab and checkpoint disagree on the feature set")
    return model, vocab, info


def cmd_evaluate(args):
    model, vocab, info = load_model(args.model_dir, args.vocab)
    data = load_dataset(args.data, args.labels, lowercase=not args.keep_case)
    batch, _ = _encode(data, vocab, info["norm_stats"], strict=True)
    report = evaluate_scores(model.predict_proba(batch), batch.labels, args.threshold)
    line = report.line()
    print(line)
    print(report.table(args.name))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "metrics.txt", line + "\n")
    return 0


def cmd_predict(args):
    model, vocab, info = load_model(args.model_dir, args.vocab)
    data = load_dataset(args.data, lowercase=not args.keep_case)
    batch, _ = _encode(data, vocab, info["norm_stats"], strict=False)
    probs = model.predict_proba(batch) if len(batch) else np.zeros(0)
    lines = "".join(f"{t} {p!r}\n" for t, p in zip(batch.token_ids, probs.tolist()))
    if args.out:
        _write(Path(args.out), lines)
    else:
        sys.stdout.write(lines)
    return 0


def cmd_dump(args):
    data = load_dataset(args.data, args.labels, lowercase=not args.keep_case)
    dump_dataset(data, sys.stdout)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="ktdeepfm", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic Rasch dataset")
    s.add_argument("--users", type=int, default=200)
    s.add_argument("--items", type=int, default=100)
    s.add_argument("--per-user", type=int, default=50)
    s.add_argument("--dev-per-user", type=int, default=20)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a model")
    t.add_argument("--train", required=True)
    t.add_argument("--train-labels")
    t.add_argument("--dev")
    t.add_argument("--dev-labels")
    t.add_argument("--schema", choices=["irt", "fundamental", "fundamental-plus"])
    t.add_argument("--model", choices=sorted(PRESETS))
    t.add_argument("--config", help="key = value settings file")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    t.add_argument("--link", choices=["sigmoid", "probit"])
    t.add_argument("--final-activation", dest="final_activation", choices=["relu", "linear"])
    t.add_argument("--hidden", help="comma separated hidden widths")
    t.add_argument("--dropout", type=float)
    t.add_argument("--global-bias", dest="global_bias", action="store_const", const=True)
    t.add_argument("--early-stopping", dest="early_stopping", choices=["on", "off"])
    t.add_argument("--patience", type=int)
    t.add_argument("--es-metric", dest="es_metric", choices=["auc", "nll"])
    t.add_argument("--refit", action="store_true", help="retrain on train+dev for the best epoch count")
    t.add_argument("--refit-on", dest="refit_on", choices=["union", "validation"])
    t.add_argument("--seed", type=int)
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--keep-case", action="store_true", help="do not lowercase tokens")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    for cmd, func, helptext in (
        ("evaluate", cmd_evaluate, "score labelled data"),
        ("predict", cmd_predict, "write token_id probability lines"),
    ):
        e = sub.add_parser(cmd, help=helptext)
        e.add_argument("--model-dir", required=True)
        e.add_argument("--data", "--dev", dest="data", required=True)
        e.add_argument("--vocab", help="vocab file (default: MODEL_DIR/vocab.tsv)")
        e.add_argument("--keep-case", action="store_true")
        e.add_argument("--deterministic", action="store_true")
        e.add_argument("--out")
        e.set_defaults(func=func)
        if cmd == "evaluate":
            e.add_argument("--labels")
            e.add_argument("--threshold", type=float, default=0.5)
            e.add_argument("--name", default="model")

    d = sub.add_parser("dump", help="re-emit a dataset in canonical form")
    d.add_argument("--data", required=True)
    d.add_argument("--labels")
    d.add_argument("--keep-case", action="store_true")
    d.set_defaults(func=cmd_dump)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports bad flags with status 2
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        with _determinism(getattr(args, "deterministic", False)):
            return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except KtError as err:
        print(f"error [{err.module}] {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        sys.stderr.close()
        return 0
    except OSError as err:
        print(f"error [cli] {type(err).__name__}: {err}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
