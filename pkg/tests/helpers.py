"""Shared builders for the test suite.

Everything here is deterministic: fixed seeds, fixed word lists, and
models whose probability tables are constructed rather than trained.
"""

from __future__ import annotations

import numpy as np

from lmbias.corpus import EOS_ID, Vocabulary, build_vocab, encode
from lmbias.embeddings import EmbeddingMatrix
from lmbias.lm import LanguageModel, LmConfig, init_model


def make_vocab(n_words: int, prefix: str = "w") -> Vocabulary:
    """Vocabulary of n_words regular words plus the two specials."""
    words = [f"{prefix}{i:03d}" for i in range(n_words)]
    return build_vocab([words])


def uniform_model(vocab_size: int = 42, hidden: int = 8,
                  emb_dim: int = 8) -> LanguageModel:
    """LSTM whose output layer is zeroed: every distribution is uniform."""
    vocab = make_vocab(vocab_size - 2)
    assert len(vocab) == vocab_size
    cfg = LmConfig(layers=1, hidden=hidden, emb_dim=emb_dim, dropout=0.0,
                   seq_len=5, batch=1, epochs=1, seed=1)
    model = init_model(cfg, vocab)
    model.params["out_W"] = np.zeros_like(model.params["out_W"])
    model.params["out_b"] = np.zeros_like(model.params["out_b"])
    return model


def bigram_machine(tokens: list[str]):
    """LSTM rigged to emit the exact empirical bigram distribution.

    With W_h = 0 and saturated input/forget/output gates, the hidden
    state after reading token j is tanh(1) times the j-th unit vector,
    so an output row of ln p(k|j) / tanh(1) makes the softmax reproduce
    the bigram table.  Returns (model, target ids, count-model PP).
    """
    vocab = build_vocab([tokens])
    y = np.array(encode(tokens, vocab), dtype=np.int64)
    x = np.concatenate(([EOS_ID], y[:-1]))
    V = len(vocab)
    counts = np.zeros((V, V))
    for a, b in zip(x, y):
        counts[a, b] += 1

    cfg = LmConfig(layers=1, hidden=V, emb_dim=V, dropout=0.0, seq_len=3,
                   batch=1, epochs=1, seed=1)
    model = init_model(cfg, vocab)
    H = V
    W_x = np.zeros((V, 4 * H))
    W_x[:, 2 * H:3 * H] = 50.0 * np.eye(V)
    bias = np.concatenate([np.full(H, 50.0), np.full(H, -50.0),
                           np.zeros(H), np.full(H, 50.0)])
    out_W = np.zeros((H, V))
    row_tot = counts.sum(axis=1)
    for j in range(V):
        if row_tot[j] == 0:
            continue
        p = counts[j] / row_tot[j]
        # -750 stands in for ln 0: exp(-750) underflows to exactly 0.
        logp = np.where(p > 0, np.log(np.maximum(p, 1e-320)), -750.0)
        out_W[j] = logp / np.tanh(1.0)
    model.params["emb"] = np.eye(V)
    model.params["W_x0"] = W_x
    model.params["W_h0"] = np.zeros((H, 4 * H))
    model.params["b0"] = bias
    model.params["out_W"] = out_W
    model.params["out_b"] = np.zeros(V)

    nll = 0.0
    for a, b in zip(x, y):
        nll -= np.log(counts[a, b] / row_tot[a])
    oracle_pp = float(np.exp(nll / len(y)))
    return model, y, oracle_pp


def random_normalized_embedding(n_words: int, dim: int,
                                seed: int = 0) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    vectors = rng.standard_normal((n_words, dim))
    vectors /= np.linalg.norm(vectors, axis=1)[:, None]
    words = [f"w{i:03d}" for i in range(n_words)]
    return EmbeddingMatrix(words=words, vectors=vectors, normalized=True)


TWO_GROUP_A = ("red", "blue", "green", "gold")
TWO_GROUP_B = ("cat", "dog", "bird", "fish")


def two_group_sentences(repeats: int = 120) -> list[list[str]]:
    """Group members appear in identical contexts, group contexts differ."""
    sents = []
    for _ in range(repeats):
        for w in TWO_GROUP_A:
            sents.append(["shiny", "very", w, "paint", "dries"])
        for w in TWO_GROUP_B:
            sents.append(["hungry", "little", w, "runs", "fast"])
    return sents
