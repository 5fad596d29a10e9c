from pathlib import Path

import pytest

from ktdeepfm.slam import load_dataset

DATA = Path(__file__).parent / "data"


@pytest.fixture
def sample_path():
    return DATA / "sample.slam"


@pytest.fixture
def sample(sample_path):
    return load_dataset(sample_path)


def encode_split(train_ex, dev_ex, feature_set="irt"):
    from ktdeepfm.encoding import CategorySchema, encode_dataset, fit_vocab, normalize_continuous

    schema = CategorySchema.preset(feature_set)
    vocab = fit_vocab(train_ex, schema)
    tr, stats = normalize_continuous(encode_dataset(train_ex, vocab, schema), vocab)
    dv, _ = normalize_continuous(encode_dataset(dev_ex, vocab, schema), vocab, stats=stats)
    return vocab, tr, dv


@pytest.fixture(scope="session")
def small_rasch():
    """30 users x 20 items, 10 answers each, plus 5 fresh answers per user for validation."""
    from ktdeepfm.synth import gen_rasch

    data = gen_rasch(30, 20, 10, seed=3)
    dev = gen_rasch(0, 0, 5, seed=4, world=data.world)
    vocab, tr, dv = encode_split(data.exercises(), dev.exercises())
    return data.world, vocab, tr, dv


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
