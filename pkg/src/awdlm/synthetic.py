"""Synthetic word-level corpora for desk-scale experiments.

Two generators: a first-order Markov chain with concentrated transitions
(learnable structure, so training curves actually move) and a bursty variant
where rare topic words repeat inside short spans (the regime where cache
decoding pays off). Output is plain text, one sentence per line, lowercase
word tokens with a sprinkle of literal <unk> tokens to match the usual
preprocessed-corpus format.
"""
from __future__ import annotations

import numpy as np

from .rng import Rng


def _word_list(n: int, prefix: str) -> list[str]:
    width = max(2, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def markov_text(n_tokens: int, vocab_size: int = 200, seed: int = 0,
                branching: int = 3, line_len: int = 18, unk_rate: float = 0.02) -> str:
    """First-order Markov text: each word has `branching` likely successors
    with geometrically decaying probabilities."""
    if n_tokens < 1 or vocab_size < branching + 1:
        raise ValueError(f"bad corpus request: n_tokens={n_tokens} vocab={vocab_size}")
    rng = Rng(seed)
    words = _word_list(vocab_size, "w")
    successors = np.empty((vocab_size, branching), dtype=np.int64)
    for w in range(vocab_size):
        successors[w] = rng.integers(0, vocab_size, branching)
    probs = np.array([0.5 ** (i + 1) for i in range(branching)])
    probs[-1] += 1.0 - probs.sum()   # make it a distribution

    tokens: list[str] = []
    current = int(rng.integers(0, vocab_size))
    for _ in range(n_tokens):
        if float(rng.random()) < unk_rate:
            tokens.append("<unk>")
        else:
            tokens.append(words[current])
        choice = int(np.searchsorted(np.cumsum(probs), float(rng.random()), side="right"))
        choice = min(choice, branching - 1)
        current = int(successors[current, choice])
    return _to_lines(tokens, line_len)


def burst_text(n_tokens: int, common_vocab: int = 80, topic_vocab: int = 240,
               seed: int = 0, span: int = 40, repeats: int = 8, line_len: int = 18) -> str:
    """Bursty text: every `span` tokens a topic word is drawn from a large
    rare vocabulary and repeated `repeats` times inside the span, mixed into
    common filler words. Topic words are nearly unpredictable from the model
    side but trivially predictable from a recent-history cache."""
    if n_tokens < span:
        raise ValueError(f"need at least one span of {span} tokens, got {n_tokens}")
    rng = Rng(seed)
    common = _word_list(common_vocab, "c")
    topics = _word_list(topic_vocab, "t")
    tokens: list[str] = []
    while len(tokens) < n_tokens:
        topic = topics[int(rng.integers(0, topic_vocab))]
        positions = set(int(p) for p in rng.integers(0, span, repeats))
        for i in range(span):
            if i in positions:
                tokens.append(topic)
            else:
                tokens.append(common[int(rng.integers(0, common_vocab))])
    return _to_lines(tokens[:n_tokens], line_len)


def _to_lines(tokens: list[str], line_len: int) -> str:
    lines = []
    for i in range(0, len(tokens), line_len):
        lines.append(" ".join(tokens[i:i + line_len]))
    return "\n".join(lines) + "\n"


def write_splits(out_dir: str, text: str, valid_frac: float = 0.1,
                 test_frac: float = 0.1) -> list[str]:
    """Split generated text by lines into train/valid/test files.

    Returns the three file paths in train, valid, test order.
    """
    import os
    lines = text.strip("\n").split("\n")
    n = len(lines)
    n_valid = max(1, int(n * valid_frac))
    n_test = max(1, int(n * test_frac))
    n_train = n - n_valid - n_test
    if n_train < 1:
        raise ValueError(f"not enough lines ({n}) to split")
    os.makedirs(out_dir, exist_ok=True)
    parts = {
        "train.txt": lines[:n_train],
        "valid.txt": lines[n_train:n_train + n_valid],
        "test.txt": lines[n_train + n_valid:],
    }
    paths = []
    for name, part in parts.items():
        path = os.path.join(out_dir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(part) + "\n")
        paths.append(path)
    return paths
