import math

import numpy as np
import pytest

from ktdeepfm.encoding import InstanceBatch
from ktdeepfm.errors import EmptyTrainingSet, NonFiniteLoss, ShapeMismatch, UnlabeledToken
from ktdeepfm.metrics import auc, evaluate
from ktdeepfm.model import DeepFM, ModelConfig
from ktdeepfm.training import AdamState, TrainConfig, adam_step, refit, train


def lr_model(n_entities, n_categories=2, **kw):
    return DeepFM.create(ModelConfig(d=0, **kw), n_entities, n_categories)


def deep_model(vocab, seed=0):
    cfg = ModelConfig(d=4, deep_enabled=True, hidden_widths=(8,), seed=seed)
    return DeepFM.create(cfg, vocab.N, len(vocab.schema))


def separable(n=200):
    """Entity 1 always a mistake, entity 2 never; entity 3 is a shared constant slot."""
    first = np.where(np.arange(n) % 2 == 0, 1, 2)
    idx = np.stack([first, np.full(n, 3)], axis=1).astype(np.int64)
    labels = (first == 1).astype(np.int64)
    return InstanceBatch(idx, np.ones(idx.shape), labels, [f"t{i}" for i in range(n)])


# -- adam ---------------------------------------------------------------------


def test_adam_zero_gradient_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    state, _ = adam_step(AdamState(), p, {"w": np.zeros(2)}, TrainConfig())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    np.testing.assert_array_equal(state.m["w"], 0.0)
    assert state.t == 1


def test_adam_first_step_size():
    p = {"w": np.array([0.0, 0.0])}
    adam_step(AdamState(), p, {"w": np.array([0.3, -7.0])}, TrainConfig())
    # bias correction makes the first step lr * g / (|g| + eps)
    np.testing.assert_allclose(p["w"], [-1e-3, 1e-3], rtol=1e-7)


def test_adam_constant_gradient_step_is_learning_rate():
    cfg = TrainConfig(learning_rate=0.01)
    p = {"w": np.zeros(1)}
    state = AdamState()
    prev = 0.0
    for t in range(1, 2001):
        adam_step(state, p, {"w": np.array([0.25])}, cfg)
        if t in (1, 10, 2000):
            assert prev - p["w"][0] == pytest.approx(0.01, rel=1e-6)
        prev = p["w"][0]


def test_adam_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"w": np.zeros(3)}, {"w": np.zeros(2)}, TrainConfig())
    with pytest.raises(ShapeMismatch):
        adam_step(AdamState(), {"w": np.zeros(3)}, {}, TrainConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(es_metric="f1")
    with pytest.raises(ValueError):
        TrainConfig(refit_on="all")


# -- training loop -----------------------------------------------------------


def test_separable_two_entities():
    data = separable()
    model, report = train(lr_model(3), data, None, TrainConfig(epochs=50))
    losses = [report.initial_loss] + report.train_loss
    assert all(b < a for a, b in zip(losses[:6], losses[1:6]))
    assert evaluate(model.predict_proba(data), data.labels).acc == 1.0
    assert report.stopping_reason == "completed"
    assert report.best_epoch == 50


def test_first_epoch_lowers_loss(small_rasch):
    _, vocab, tr, _ = small_rasch
    _, report = train(deep_model(vocab), tr, None, TrainConfig(epochs=1, batch_size=64))
    assert report.train_loss[0] < report.initial_loss


def test_zero_epochs_returns_init(small_rasch):
    _, vocab, tr, _ = small_rasch
    model = deep_model(vocab)
    out, report = train(model, tr, None, TrainConfig(epochs=0))
    assert report.stopping_reason == "no_epochs"
    assert report.epochs_run == 0
    for name, arr in model.params().items():
        np.testing.assert_array_equal(out.params()[name], arr)


def test_train_does_not_mutate_input(small_rasch):
    _, vocab, tr, _ = small_rasch
    model = deep_model(vocab)
    before = {k: v.copy() for k, v in model.params().items()}
    train(model, tr, None, TrainConfig(epochs=2, batch_size=64))
    for name, arr in model.params().items():
        np.testing.assert_array_equal(arr, before[name])


def test_deterministic(small_rasch):
    _, vocab, tr, dv = small_rasch
    cfg = TrainConfig(epochs=3, batch_size=50)
    a, ra = train(deep_model(vocab), tr, dv, cfg)
    b, rb = train(deep_model(vocab), tr, dv, cfg)
    assert ra.train_loss == rb.train_loss
    for name in a.params():
        np.testing.assert_array_equal(a.params()[name], b.params()[name])
    c, _ = train(deep_model(vocab), tr, dv, TrainConfig(epochs=3, batch_size=50, shuffle_seed=9))
    assert not np.array_equal(a.params()["V"], c.params()["V"])


@pytest.mark.parametrize("n,bs", [(300, 64), (300, 300), (300, 1000), (7, 2)])
def test_updates_per_epoch(n, bs):
    data = separable(n)
    _, report = train(lr_model(3), data, None, TrainConfig(epochs=2, batch_size=bs))
    assert report.updates == [math.ceil(n / bs)] * 2


def test_ragged_batch_mean_over_true_size():
    # three rows with batch size 2: the second update sees a single row
    data = separable(3)
    cfg = TrainConfig(epochs=1, batch_size=2, learning_rate=0.1)
    model = lr_model(3)
    trained, _ = train(model, data, None, cfg)

    order = np.random.default_rng(1).permutation(3)
    w = np.zeros(3)
    m = np.zeros(3)
    v = np.zeros(3)
    for t, rows in enumerate([order[:2], order[2:]], start=1):
        g = np.zeros(3)
        for r in rows:
            p = 1.0 / (1.0 + math.exp(-sum(w[k - 1] for k in data.idx[r])))
            for k in data.idx[r]:
                g[k - 1] += (p - data.labels[r]) / len(rows)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        w -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(trained.fm.w, w, rtol=1e-12, atol=1e-15)


def test_progress_lines(small_rasch):
    _, vocab, tr, dv = small_rasch
    lines = []
    train(deep_model(vocab), tr, dv, TrainConfig(epochs=2, batch_size=64), progress=lines.append)
    assert len(lines) == 2
    assert lines[0].startswith("epoch=1 train_nll=")
    keys = [kv.split("=")[0] for kv in lines[1].split()]
    assert keys == ["epoch", "train_nll", "val_auc", "val_nll"]


def test_early_stopping_restores_best(small_rasch):
    _, vocab, tr, dv = small_rasch
    cfg = TrainConfig(epochs=60, batch_size=32, learning_rate=0.05, early_stopping=True, patience=3)
    best_calls = []
    model, report = train(deep_model(vocab), tr, dv, cfg, on_best=lambda m, e: best_calls.append(e))
    aucs = [m["auc"] for m in report.val_metrics]
    assert report.stopping_reason == "early_stopping"
    assert report.epochs_run == report.best_epoch + cfg.patience
    assert report.best_epoch == int(np.argmax(aucs)) + 1
    assert best_calls[-1] == report.best_epoch
    # the returned parameters are the best epoch's, not the last
    assert auc(model.predict_proba(dv), dv.labels) == max(aucs)


def test_early_stopping_on_nll(small_rasch):
    _, vocab, tr, dv = small_rasch
    cfg = TrainConfig(epochs=60, batch_size=32, learning_rate=0.05, early_stopping=True,
                      patience=3, es_metric="nll")
    model, report = train(deep_model(vocab), tr, dv, cfg)
    nlls = [m["nll"] for m in report.val_metrics]
    assert evaluate(model.predict_proba(dv), dv.labels).nll == min(nlls)


def test_early_stopping_needs_validation(small_rasch):
    _, vocab, tr, _ = small_rasch
    with pytest.raises(ValueError):
        train(deep_model(vocab), tr, None, TrainConfig(epochs=2, early_stopping=True))


def test_empty_training_set():
    empty = InstanceBatch(np.zeros((0, 2), np.int64), np.zeros((0, 2)), np.zeros(0, np.int64), [])
    with pytest.raises(EmptyTrainingSet):
        train(lr_model(3), empty, None, TrainConfig(epochs=1))


def test_unlabelled_training_set():
    data = separable(4)
    data = InstanceBatch(data.idx, data.val, np.array([1, 0, -1, 0]), data.token_ids)
    with pytest.raises(UnlabeledToken):
        train(lr_model(3), data, None, TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss():
    model = lr_model(3)
    model.fm.w[0] = np.nan
    with pytest.raises(NonFiniteLoss):
        train(model, separable(10), None, TrainConfig(epochs=1))


# -- refit -------------------------------------------------------------------


def test_refit_is_fresh_training_on_union(small_rasch):
    _, vocab, tr, dv = small_rasch
    cfg = TrainConfig(epochs=20, batch_size=64, early_stopping=True, patience=2)
    fitted, _ = train(deep_model(vocab), tr, dv, cfg)
    again = refit(fitted, tr, dv, cfg, epochs=1)
    ref, _ = train(deep_model(vocab), InstanceBatch.concat([tr, dv]), None,
                   TrainConfig(epochs=1, batch_size=64))
    for name in ref.params():
        np.testing.assert_array_equal(again.params()[name], ref.params()[name])
    only_train, _ = train(deep_model(vocab), tr, None, TrainConfig(epochs=1, batch_size=64))
    assert not np.array_equal(again.params()["w"], only_train.params()["w"])


def test_refit_deterministic_and_validation_only(small_rasch):
    _, vocab, tr, dv = small_rasch
    cfg = TrainConfig(batch_size=64)
    a = refit(deep_model(vocab), tr, dv, cfg, epochs=2)
    b = refit(deep_model(vocab), tr, dv, cfg, epochs=2)
    np.testing.assert_array_equal(a.params()["V"], b.params()["V"])
    c = refit(deep_model(vocab), tr, dv, TrainConfig(batch_size=64, refit_on="validation"), epochs=2)
    ref, _ = train(deep_model(vocab), dv, None, TrainConfig(epochs=2, batch_size=64))
    np.testing.assert_array_equal(c.params()["V"], ref.params()["V"])
