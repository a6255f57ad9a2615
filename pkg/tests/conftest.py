"""Shared fixtures: synthetic corpora and one pre-trained small model.

Corpus generation and training runs dominate suite runtime, so everything
reused across modules is session-scoped.
"""

import pytest

from awdlm.config import make_config
from awdlm.synthetic import burst_text, markov_text, write_splits
from awdlm.training import params_from_weights, train


@pytest.fixture(scope="session")
def memorize_dir(tmp_path_factory):
    # 200-token corpus with train == valid == test: the memorization target
    d = tmp_path_factory.mktemp("memorize")
    text = markov_text(200, vocab_size=30, seed=11)
    for name in ("train.txt", "valid.txt", "test.txt"):
        (d / name).write_text(text)
    return str(d)


@pytest.fixture(scope="session")
def markov_dir(tmp_path_factory):
    """Medium corpus with held-out splits, for trainer behavior tests."""
    d = tmp_path_factory.mktemp("markov")
    write_splits(str(d), markov_text(9000, vocab_size=120, seed=3))
    return str(d)


@pytest.fixture(scope="session")
def burst_dir(tmp_path_factory):
    # repetition-heavy: topic words recur within short spans, the access
    # pattern the cache is built to exploit
    d = tmp_path_factory.mktemp("burst")
    write_splits(str(d), burst_text(12000, seed=7))
    return str(d)


@pytest.fixture(scope="session")
def burst_run(burst_dir):
    """Short training run on the repetition-heavy corpus.

    Returns the TrainResult; cache tests pull averaged weights and the
    vocabulary out of it.
    """
    cfg = make_config(profile="tiny", overrides=dict(data_dir=burst_dir, epochs=12, seed=2))
    return train(cfg)


@pytest.fixture(scope="session")
def burst_model(burst_run):
    return params_from_weights(burst_run.final_weights)
