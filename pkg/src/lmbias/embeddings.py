"""CBOW word-embedding training, similarity queries, and text-format I/O.

The trainer is a plain-numpy CBOW with negative sampling: the averaged
context vector predicts the center word against noise words drawn from
a count^0.75 distribution.  Single-threaded training is bit-reproducible
for a fixed seed; an optional lock-free multi-worker mode trades that
determinism for speed.

All vectors are float64.  The text interchange format is:
first line ``<rows> <dim>``, then one ``<word> <v1> ... <vdim>`` line
per row.  Values are written with shortest round-trip precision, so a
save/load cycle is bit-exact.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_expit

from .corpus import EOS_ID, UNK_ID, Vocabulary
from .errors import ConfigurationError, DivergenceError, InsufficientDataError, ParseError

logger = logging.getLogger(__name__)

NOISE_POWER = 0.75


@dataclass
class EmbeddingMatrix:
    """Per-word real vectors of fixed dimension.

    Rows are addressed by word through ``word_to_row``; when the matrix
    was produced by :func:`train_cbow`, row index equals vocabulary id
    and ``vocab`` is set.
    """

    words: list[str]
    vectors: np.ndarray
    normalized: bool = False
    vocab: Vocabulary | None = None
    word_to_row: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise ValueError(
                f"vectors shape {self.vectors.shape} does not match "
                f"{len(self.words)} words")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("embedding matrix contains non-finite entries")
        self.word_to_row = {w: i for i, w in enumerate(self.words)}

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_row

    def row(self, word: str) -> np.ndarray:
        try:
            return self.vectors[self.word_to_row[word]]
        except KeyError:
            raise KeyError(f"unknown word {word!r}") from None


@dataclass
class CbowConfig:
    """CBOW hyperparameters.

    The learning rate decays linearly from ``learning_rate`` to
    ``lr_floor`` over the full training pass.
    """

    dim: int = 100
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    lr_floor: float = 1e-4
    min_count: int = 1
    seed: int = 1
    subsample_threshold: float = 1e-4

    def validate(self) -> None:
        for name in ("dim", "window", "epochs", "min_count"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.negatives < 0:
            raise ConfigurationError("negatives must be non-negative")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0 <= self.lr_floor < self.learning_rate:
            raise ConfigurationError("lr_floor must satisfy 0 <= floor < learning_rate")
        if self.subsample_threshold < 0:
            raise ConfigurationError("subsample_threshold must be non-negative")


@dataclass
class CbowTrainLog:
    """Per-epoch mean loss (negative-sampling objective, per center word)."""

    epoch_losses: list[float] = field(default_factory=list)
    epoch_centers: list[int] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "epoch_centers": self.epoch_centers,
            "epoch_seconds": self.epoch_seconds,
        }


def negative_sampling_distribution(vocab: Vocabulary) -> np.ndarray:
    """Noise distribution over vocabulary ids: count^0.75, specials zeroed."""
    counts = np.array([vocab.counts.get(w, 0) for w in vocab.id_to_word],
                      dtype=np.float64)
    weights = counts ** NOISE_POWER
    weights[UNK_ID] = 0.0
    weights[EOS_ID] = 0.0
    total = weights.sum()
    if total <= 0:
        raise InsufficientDataError("no non-special words with positive count")
    return weights / total


def _keep_probabilities(vocab: Vocabulary, threshold: float) -> np.ndarray:
    """Per-id probability of keeping an occurrence under subsampling."""
    counts = np.array([vocab.counts.get(w, 0) for w in vocab.id_to_word],
                      dtype=np.float64)
    total = counts.sum()
    keep = np.ones(len(counts))
    if threshold <= 0 or total <= 0:
        return keep
    freq = counts / total
    pos = freq > 0
    ratio = threshold / freq[pos]
    keep[pos] = np.minimum(1.0, np.sqrt(1.0 / ratio) * ratio + ratio)
    return keep


def _sample_negatives(rng: np.random.Generator, cum: np.ndarray,
                      centers: np.ndarray, k: int) -> np.ndarray:
    """Draw k noise ids per center, redrawing collisions with the center."""
    n = len(centers)
    negs = np.searchsorted(cum, rng.random((n, k)))
    bad_rows, bad_cols = np.nonzero(negs == centers[:, None])
    for r, c in zip(bad_rows, bad_cols):
        draw = negs[r, c]
        while draw == centers[r]:
            draw = int(np.searchsorted(cum, rng.random()))
        negs[r, c] = draw
    return negs


def _train_span(syn0: np.ndarray, syn1: np.ndarray, stream: np.ndarray,
                windows: np.ndarray, negs: np.ndarray, alphas: np.ndarray,
                labels: np.ndarray) -> tuple[float, int]:
    """Run CBOW updates over one stream span; returns (loss sum, centers)."""
    loss_sum = 0.0
    centers_done = 0
    n = len(stream)
    for pos in range(n):
        w = windows[pos]
        lo = 0 if pos < w else pos - w
        ctx = np.concatenate((stream[lo:pos], stream[pos + 1:pos + 1 + w]))
        if ctx.size == 0:
            continue
        center = stream[pos]
        l1 = syn0[ctx].mean(axis=0)
        idx = np.concatenate(([center], negs[pos]))
        l2 = syn1[idx]
        scores = l2 @ l1
        loss_sum -= float(log_expit(scores[0]) + log_expit(-scores[1:]).sum())
        g = (labels - expit(scores)) * alphas[pos]
        # add.at handles repeated context words / repeated negatives.
        np.add.at(syn1, idx, g[:, None] * l1[None, :])
        np.add.at(syn0, ctx, g @ l2)
        centers_done += 1
    return loss_sum, centers_done


def train_cbow_logged(ids, vocab: Vocabulary, cfg: CbowConfig,
                      workers: int = 1) -> tuple[EmbeddingMatrix, CbowTrainLog]:
    """Train CBOW embeddings and return (matrix, per-epoch log).

    ``workers`` > 1 enables the lock-free multi-threaded mode, which is
    not deterministic; the default single worker is bit-reproducible for
    a fixed seed.
    """
    cfg.validate()
    ids = np.asarray(list(ids), dtype=np.int64)
    if ids.size == 0:
        raise InsufficientDataError("empty id stream")
    if np.any(ids < 0) or np.any(ids >= len(vocab)):
        raise ValueError("id stream contains ids outside the vocabulary")
    if ids.size < cfg.window + 1:
        raise InsufficientDataError(
            f"corpus has {ids.size} tokens, need at least window+1 = {cfg.window + 1}")

    noise = negative_sampling_distribution(vocab)
    if np.count_nonzero(noise) < 2:
        raise InsufficientDataError("negative sampling needs >= 2 candidate words")
    cum = np.cumsum(noise)
    cum[-1] = 1.0
    keep_prob = _keep_probabilities(vocab, cfg.subsample_threshold)

    rng = np.random.default_rng(cfg.seed)
    syn0 = (rng.random((len(vocab), cfg.dim)) - 0.5) / cfg.dim
    syn1 = np.zeros((len(vocab), cfg.dim))
    labels = np.zeros(cfg.negatives + 1)
    labels[0] = 1.0

    n_raw = ids.size
    total_positions = cfg.epochs * n_raw
    log = CbowTrainLog()
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cfg.subsample_threshold > 0:
            kept = rng.random(n_raw) < keep_prob[ids]
            stream = ids[kept]
            raw_idx = np.nonzero(kept)[0]
        else:
            stream = ids
            raw_idx = np.arange(n_raw)
        n = len(stream)
        loss_sum, centers = 0.0, 0
        if n >= 2:
            progress = (epoch * n_raw + raw_idx) / total_positions
            alphas = cfg.learning_rate + (cfg.lr_floor - cfg.learning_rate) * progress
            windows = rng.integers(1, cfg.window + 1, size=n)
            negs = _sample_negatives(rng, cum, stream, cfg.negatives)
            if workers <= 1:
                loss_sum, centers = _train_span(syn0, syn1, stream, windows,
                                                negs, alphas, labels)
            else:
                bounds = np.linspace(0, n, workers + 1, dtype=int)
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    futs = [pool.submit(_train_span, syn0, syn1,
                                        stream[a:b], windows[a:b], negs[a:b],
                                        alphas[a:b], labels)
                            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
                    for fut in futs:
                        ls, ct = fut.result()
                        loss_sum += ls
                        centers += ct
        mean_loss = loss_sum / centers if centers else 0.0
        if not (np.isfinite(mean_loss) and np.all(np.isfinite(syn0))
                and np.all(np.isfinite(syn1))):
            raise DivergenceError(
                f"non-finite loss or weights, learning_rate={cfg.learning_rate}",
                epoch=epoch)
        log.epoch_losses.append(mean_loss)
        log.epoch_centers.append(centers)
        log.epoch_seconds.append(time.perf_counter() - t0)
        logger.info("cbow epoch %d: loss %.4f over %d centers",
                    epoch, mean_loss, centers)

    emb = EmbeddingMatrix(words=list(vocab.id_to_word), vectors=syn0,
                          normalized=False, vocab=vocab)
    return emb, log


def train_cbow(ids, vocab: Vocabulary, cfg: CbowConfig,
               workers: int = 1) -> EmbeddingMatrix:
    """Train CBOW embeddings; see :func:`train_cbow_logged`."""
    emb, _ = train_cbow_logged(ids, vocab, cfg, workers=workers)
    return emb


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two non-zero vectors, clipped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def nearest_neighbors(emb: EmbeddingMatrix, word: str,
                      k: int) -> list[tuple[str, float]]:
    """The k most cosine-similar words to ``word``, excluding it.

    Ties break by ascending row id; zero rows never rank.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    if word not in emb.word_to_row:
        raise KeyError(f"unknown word {word!r}")
    if k == 0:
        return []
    q = emb.row(word)
    qn = np.linalg.norm(q)
    if qn == 0.0:
        raise ValueError(f"query word {word!r} has a zero vector")
    norms = np.linalg.norm(emb.vectors, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = emb.vectors @ q / (norms * qn)
    sims = np.clip(np.where(norms == 0.0, -np.inf, sims), -1.0, 1.0)
    sims[emb.word_to_row[word]] = -np.inf
    order = sorted(range(len(sims)), key=lambda i: (-sims[i], i))
    top = [i for i in order if np.isfinite(sims[i])][:k]
    return [(emb.words[i], float(sims[i])) for i in top]


def save_text(emb: EmbeddingMatrix, path: str | Path) -> None:
    """Write the text interchange format (bit-exact float round trip)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(emb.words)} {emb.dim}\n")
        for word, vec in zip(emb.words, emb.vectors):
            f.write(word)
            for x in vec:
                f.write(" " + repr(float(x)))
            f.write("\n")


def load_text(path: str | Path) -> EmbeddingMatrix:
    """Read the text interchange format; raises ParseError with line numbers."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline()
        if not header.strip():
            raise ParseError("missing header line '<rows> <dim>'", line=1)
        parts = header.split()
        if len(parts) != 2:
            raise ParseError(f"malformed header {header.strip()!r}", line=1)
        try:
            rows, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"non-integer header field in {header.strip()!r}", line=1)
        if rows < 0 or dim < 1:
            raise ParseError(f"invalid header values {rows} {dim}", line=1)
        words: list[str] = []
        vectors = np.empty((rows, dim), dtype=np.float64)
        lineno = 1
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise ParseError(
                    f"expected {dim} values for word {fields[0]!r}, got {len(fields) - 1}",
                    line=lineno)
            if len(words) >= rows:
                raise ParseError(f"more rows than header declared ({rows})", line=lineno)
            try:
                vectors[len(words)] = [float(x) for x in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric field: {exc}", line=lineno)
            words.append(fields[0])
        if len(words) != rows:
            raise ParseError(f"header declared {rows} rows, file has {len(words)}",
                             line=lineno)
    norms = np.linalg.norm(vectors, axis=1) if rows else np.empty(0)
    normalized = bool(rows and np.all(np.abs(norms - 1.0) <= 1e-9))
    return EmbeddingMatrix(words=words, vectors=vectors, normalized=normalized)


def normalize_rows(emb: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit Euclidean norm."""
    norms = np.linalg.norm(emb.vectors, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"cannot normalize zero vector for word {emb.words[zero[0]]!r}")
    return EmbeddingMatrix(words=list(emb.words),
                           vectors=emb.vectors / norms[:, None],
                           normalized=True, vocab=emb.vocab)
