"""LSTM language model with hand-rolled truncated BPTT, in float64 numpy.

Architecture: embedding lookup (learned, or frozen pre-trained rows),
``layers`` stacked LSTM layers, untied linear projection to vocabulary
logits.  Gate layout along the 4H axis is [input, forget, cell, output].

Training is plain SGD on mean-token cross-entropy with global
gradient-norm clipping; the learning rate halves whenever an epoch
fails to improve on the previous one.  Inverted dropout is applied to
embedding outputs and between LSTM layers, only during training.

Perplexity convention: a stream or sentence is scored left to right
with ``<eos>`` as the start context, i.e. inputs are the targets shifted
right by one with ``<eos>`` prepended.  Sentences additionally score a
terminal ``<eos>``, so a k-token sentence contributes k+1 scored tokens.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, log_softmax

from ._util import sha256_text
from .corpus import EOS_ID, Vocabulary
from .embeddings import EmbeddingMatrix
from .errors import (ConfigurationError, DivergenceError, InsufficientDataError,
                     ParseError, VocabularyMismatchError)

EMBEDDING_MODES = ("learned", "frozen")

# Learning-rate multiplier applied when an epoch fails to improve.
LR_BACKOFF = 0.5


@dataclass
class LmConfig:
    layers: int = 2
    hidden: int = 200
    emb_dim: int = 100
    dropout: float = 0.2
    seq_len: int = 35
    batch: int = 20
    learning_rate: float = 20.0
    grad_clip: float = 0.25
    epochs: int = 5
    seed: int = 1
    embedding_mode: str = "learned"
    finetune_pretrained: bool = False

    def validate(self) -> None:
        for name in ("layers", "hidden", "emb_dim", "seq_len", "batch", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError("dropout must lie in [0, 1)")
        if self.learning_rate <= 0 or self.grad_clip <= 0:
            raise ConfigurationError("learning_rate and grad_clip must be positive")
        if self.embedding_mode not in EMBEDDING_MODES:
            raise ConfigurationError(
                f"embedding_mode must be one of {EMBEDDING_MODES}")


@dataclass
class TrainStats:
    """Per-epoch training record; losses are mean token NLL (natural log)."""

    epoch_losses: list[float] = field(default_factory=list)
    epoch_perplexities: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    final_valid_perplexity: float | None = None

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "epoch_perplexities": self.epoch_perplexities,
            "epoch_seconds": self.epoch_seconds,
            "learning_rates": self.learning_rates,
            "final_valid_perplexity": self.final_valid_perplexity,
        }


@dataclass
class LanguageModel:
    config: LmConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]

    def trainable_keys(self) -> list[str]:
        keys = sorted(self.params)
        if self.config.embedding_mode == "frozen" and not self.config.finetune_pretrained:
            keys.remove("emb")
        return keys

    @property
    def embedding(self) -> np.ndarray:
        return self.params["emb"]


def _param_shapes(cfg: LmConfig, vocab_size: int) -> dict[str, tuple]:
    shapes = {"emb": (vocab_size, cfg.emb_dim)}
    for layer in range(cfg.layers):
        in_dim = cfg.emb_dim if layer == 0 else cfg.hidden
        shapes[f"W_x{layer}"] = (in_dim, 4 * cfg.hidden)
        shapes[f"W_h{layer}"] = (cfg.hidden, 4 * cfg.hidden)
        shapes[f"b{layer}"] = (4 * cfg.hidden,)
    shapes["out_W"] = (cfg.hidden, vocab_size)
    shapes["out_b"] = (vocab_size,)
    return shapes


def init_model(cfg: LmConfig, vocab: Vocabulary,
               pretrained: EmbeddingMatrix | None = None) -> LanguageModel:
    """Build a model with seeded uniform initialization.

    LSTM and output weights draw from U[-1/sqrt(hidden), 1/sqrt(hidden)];
    learned embeddings from U[-0.1, 0.1]; output bias is zero.  The
    non-embedding draws happen first, so models that differ only in
    embedding source share identical LSTM/output initialization for the
    same seed.
    """
    cfg.validate()
    if (pretrained is not None) != (cfg.embedding_mode == "frozen"):
        raise ConfigurationError(
            "pretrained matrix must be supplied exactly when embedding_mode "
            "is 'frozen'")
    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / np.sqrt(cfg.hidden)
    vocab_size = len(vocab)
    params: dict[str, np.ndarray] = {}
    for layer in range(cfg.layers):
        in_dim = cfg.emb_dim if layer == 0 else cfg.hidden
        params[f"W_x{layer}"] = rng.uniform(-bound, bound, (in_dim, 4 * cfg.hidden))
        params[f"W_h{layer}"] = rng.uniform(-bound, bound, (cfg.hidden, 4 * cfg.hidden))
        params[f"b{layer}"] = rng.uniform(-bound, bound, 4 * cfg.hidden)
    params["out_W"] = rng.uniform(-bound, bound, (cfg.hidden, vocab_size))
    params["out_b"] = np.zeros(vocab_size)

    if pretrained is None:
        params["emb"] = rng.uniform(-0.1, 0.1, (vocab_size, cfg.emb_dim))
    else:
        if pretrained.dim != cfg.emb_dim:
            raise ConfigurationError(
                f"pretrained dimension {pretrained.dim} != emb_dim {cfg.emb_dim}")
        rows = np.empty((vocab_size, cfg.emb_dim))
        for idx, word in enumerate(vocab.id_to_word):
            if word not in pretrained:
                raise ConfigurationError(
                    f"vocabulary word {word!r} missing from pretrained matrix")
            rows[idx] = pretrained.row(word)
        params["emb"] = rows
    return LanguageModel(config=cfg, vocab=vocab, params=params)


def zero_state(cfg: LmConfig, batch: int) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(np.zeros((batch, cfg.hidden)), np.zeros((batch, cfg.hidden)))
            for _ in range(cfg.layers)]


def _draw_masks(rng: np.random.Generator, cfg: LmConfig,
                batch: int, width: int) -> dict:
    """Inverted-dropout masks: embedding output plus each between-layer hop."""
    keep = 1.0 - cfg.dropout
    masks = {"emb": (rng.random((batch, width, cfg.emb_dim)) < keep) / keep}
    for layer in range(cfg.layers - 1):
        masks[layer] = (rng.random((batch, width, cfg.hidden)) < keep) / keep
    return masks


def _run_forward(params: dict, cfg: LmConfig, X: np.ndarray, state,
                 masks: dict | None = None, need_cache: bool = False):
    """Batched forward over X (batch, width); returns logits, state, cache."""
    B, T = X.shape
    H = cfg.hidden
    x_seq = params["emb"][X]
    if masks is not None:
        x_seq = x_seq * masks["emb"]
    h = [s[0] for s in state]
    c = [s[1] for s in state]
    top = np.empty((B, T, H))
    steps = [] if need_cache else None
    for t in range(T):
        x = x_seq[:, t]
        layer_cache = [] if need_cache else None
        for layer in range(cfg.layers):
            z = (x @ params[f"W_x{layer}"] + h[layer] @ params[f"W_h{layer}"]
                 + params[f"b{layer}"])
            i = expit(z[:, :H])
            f = expit(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = expit(z[:, 3 * H:])
            c_new = f * c[layer] + i * g
            tc = np.tanh(c_new)
            if need_cache:
                layer_cache.append((x, h[layer], c[layer], i, f, g, o, tc))
            c[layer] = c_new
            h[layer] = o * tc
            x = h[layer]
            if masks is not None and layer in masks:
                x = x * masks[layer][:, t]
        top[:, t] = x
        if need_cache:
            steps.append(layer_cache)
    logits = top @ params["out_W"] + params["out_b"]
    new_state = [(h[layer], c[layer]) for layer in range(cfg.layers)]
    cache = {"steps": steps, "top": top, "X": X, "masks": masks}
    return logits, new_state, cache


def _loss_and_dlogits(logits: np.ndarray, Y: np.ndarray):
    """Mean token NLL and its gradient w.r.t. logits."""
    B, T, _ = logits.shape
    lsm = log_softmax(logits, axis=-1)
    rows = np.arange(B)[:, None]
    cols = np.arange(T)[None, :]
    n = B * T
    loss = -lsm[rows, cols, Y].sum() / n
    dlogits = np.exp(lsm)
    dlogits[rows, cols, Y] -= 1.0
    return loss, dlogits / n


def _backward(params: dict, cfg: LmConfig, cache: dict,
              dlogits: np.ndarray) -> dict[str, np.ndarray]:
    """BPTT through the cached window; returns gradients for all params."""
    steps, top, X, masks = cache["steps"], cache["top"], cache["X"], cache["masks"]
    B, T, V = dlogits.shape
    H = cfg.hidden
    L = cfg.layers
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["out_W"] += top.reshape(B * T, H).T @ dlogits.reshape(B * T, V)
    grads["out_b"] += dlogits.sum(axis=(0, 1))
    dtop = dlogits @ params["out_W"].T
    dh_carry = [np.zeros((B, H)) for _ in range(L)]
    dc_carry = [np.zeros((B, H)) for _ in range(L)]
    d_emb_out = np.empty((B, T, cfg.emb_dim))
    for t in reversed(range(T)):
        dx_below = None
        for layer in reversed(range(L)):
            x_in, h_prev, c_prev, i, f, g, o, tc = steps[t][layer]
            dh = dh_carry[layer]
            if layer == L - 1:
                dh = dh + dtop[:, t]
            else:
                d_above = dx_below
                if masks is not None and layer in masks:
                    d_above = d_above * masks[layer][:, t]
                dh = dh + d_above
            do = dh * tc
            dc = dc_carry[layer] + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc_carry[layer] = dc * f
            dz = np.concatenate((di * i * (1.0 - i),
                                 df * f * (1.0 - f),
                                 dg * (1.0 - g * g),
                                 do * o * (1.0 - o)), axis=1)
            grads[f"W_x{layer}"] += x_in.T @ dz
            grads[f"W_h{layer}"] += h_prev.T @ dz
            grads[f"b{layer}"] += dz.sum(axis=0)
            dh_carry[layer] = dz @ params[f"W_h{layer}"].T
            dx_below = dz @ params[f"W_x{layer}"].T
        d_emb_out[:, t] = dx_below
    if masks is not None:
        d_emb_out = d_emb_out * masks["emb"]
    np.add.at(grads["emb"], X.reshape(-1), d_emb_out.reshape(B * T, cfg.emb_dim))
    return grads


def _validate_ids(ids, vocab_size: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError("id stream must be one-dimensional")
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise ValueError("id stream contains ids outside the vocabulary")
    return ids


def forward(model: LanguageModel, ids, state=None):
    """Evaluation-mode forward pass over an id sequence.

    Returns (per-position probability rows, final state); no dropout.
    """
    ids = _validate_ids(ids, len(model.vocab))
    if ids.size == 0:
        raise InsufficientDataError("empty id sequence")
    if state is None:
        state = zero_state(model.config, 1)
    logits, state, _ = _run_forward(model.params, model.config,
                                    ids[None, :], state)
    probs = np.exp(log_softmax(logits[0], axis=-1))
    return probs, state


def train(model: LanguageModel, ids, cfg: LmConfig | None = None,
          valid_ids=None) -> TrainStats:
    """SGD with truncated BPTT over seq_len windows.

    State resets to zeros at every window: evaluation scores sentences
    from a fresh state, so training sees the same regime.  Deterministic
    for a fixed seed.
    """
    cfg = model.config if cfg is None else cfg
    ids = _validate_ids(ids, len(model.vocab))
    if ids.size < cfg.seq_len + 1:
        raise InsufficientDataError(
            f"stream of {ids.size} tokens is shorter than seq_len+1 "
            f"= {cfg.seq_len + 1}")
    B = cfg.batch
    M = ids.size // B
    if M < 1:
        raise InsufficientDataError(
            f"stream of {ids.size} tokens cannot fill batch size {B}")
    x_full = np.concatenate(([EOS_ID], ids[:-1]))
    X = x_full[:B * M].reshape(B, M)
    Y = ids[:B * M].reshape(B, M)

    rng = np.random.default_rng(cfg.seed + 1)
    lr = cfg.learning_rate
    keys = model.trainable_keys()
    stats = TrainStats()
    prev_loss = np.inf
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total_nll = 0.0
        total_tokens = 0
        for start in range(0, M, cfg.seq_len):
            state = zero_state(cfg, B)
            xb = X[:, start:start + cfg.seq_len]
            yb = Y[:, start:start + cfg.seq_len]
            width = xb.shape[1]
            masks = _draw_masks(rng, cfg, B, width) if cfg.dropout > 0 else None
            logits, state, cache = _run_forward(model.params, cfg, xb, state,
                                                masks, need_cache=True)
            loss, dlogits = _loss_and_dlogits(logits, yb)
            if not np.isfinite(loss):
                raise DivergenceError("training loss is not finite",
                                      epoch=epoch, step=step)
            grads = _backward(model.params, cfg, cache, dlogits)
            gnorm = np.sqrt(sum(float((grads[k] ** 2).sum()) for k in keys))
            if not np.isfinite(gnorm):
                raise DivergenceError("gradient norm is not finite",
                                      epoch=epoch, step=step)
            if gnorm > cfg.grad_clip:
                scale = cfg.grad_clip / gnorm
                for k in keys:
                    grads[k] *= scale
            for k in keys:
                model.params[k] -= lr * grads[k]
            total_nll += loss * (B * width)
            total_tokens += B * width
            step += 1
        if any(not np.all(np.isfinite(v)) for v in model.params.values()):
            raise DivergenceError("parameters are not finite", epoch=epoch,
                                  step=step)
        epoch_loss = total_nll / total_tokens
        stats.epoch_losses.append(float(epoch_loss))
        stats.epoch_perplexities.append(float(np.exp(epoch_loss)))
        stats.epoch_seconds.append(time.perf_counter() - t0)
        stats.learning_rates.append(lr)
        if epoch_loss >= prev_loss:
            lr *= LR_BACKOFF
        prev_loss = epoch_loss
    if valid_ids is not None:
        stats.final_valid_perplexity = perplexity_corpus(model, valid_ids)
    return stats


def grad_check(model: LanguageModel, ids, step: float = 1e-5) -> float:
    """Max relative error of analytic gradients vs central differences.

    Dropout is disabled; intended for tiny models only (cost is one
    forward pass per parameter element and direction).
    """
    ids = _validate_ids(ids, len(model.vocab))
    if ids.size < 2:
        raise InsufficientDataError("need at least 2 tokens for a gradient check")
    cfg = model.config
    X = np.concatenate(([EOS_ID], ids[:-1]))[None, :]
    Y = ids[None, :]

    def eval_loss() -> float:
        logits, _, _ = _run_forward(model.params, cfg, X, zero_state(cfg, 1))
        loss, _ = _loss_and_dlogits(logits, Y)
        return float(loss)

    logits, _, cache = _run_forward(model.params, cfg, X, zero_state(cfg, 1),
                                    need_cache=True)
    _, dlogits = _loss_and_dlogits(logits, Y)
    analytic = _backward(model.params, cfg, cache, dlogits)

    worst = 0.0
    for key in sorted(model.params):
        tensor = model.params[key]
        flat = tensor.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = eval_loss()
            flat[j] = orig - step
            down = eval_loss()
            flat[j] = orig
            numeric = (up - down) / (2.0 * step)
            ga = analytic[key].reshape(-1)[j]
            err = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst


def _stream_nll(model: LanguageModel, x: np.ndarray, y: np.ndarray) -> float:
    """Total NLL of y given shifted inputs x, threading state in chunks."""
    cfg = model.config
    state = zero_state(cfg, 1)
    total = 0.0
    for start in range(0, len(y), cfg.seq_len):
        xb = x[None, start:start + cfg.seq_len]
        yb = y[start:start + cfg.seq_len]
        logits, state, _ = _run_forward(model.params, cfg, xb, state)
        lsm = log_softmax(logits[0], axis=-1)
        total -= lsm[np.arange(len(yb)), yb].sum()
    return float(total)


def perplexity_corpus(model: LanguageModel, ids) -> float:
    """exp(mean NLL) over the whole stream, state threaded continuously."""
    ids = _validate_ids(ids, len(model.vocab))
    if ids.size == 0:
        raise InsufficientDataError("empty evaluation stream")
    x = np.concatenate(([EOS_ID], ids[:-1]))
    nll = _stream_nll(model, x, ids)
    return float(np.exp(nll / ids.size))


def _sentence_ids(tokens, vocab: Vocabulary) -> np.ndarray:
    if isinstance(tokens, str):
        tokens = tokens.lower().split()
    tokens = list(tokens)
    if not tokens:
        raise InsufficientDataError("empty sentence")
    return np.array([vocab.id_of(t) for t in tokens] + [EOS_ID], dtype=np.int64)


def sentence_nll(model: LanguageModel, tokens,
                 vocab: Vocabulary | None = None) -> tuple[float, int]:
    """(total NLL, token count) for one sentence from a fresh state.

    The sentence is scored as its tokens plus a terminal ``<eos>``.
    """
    vocab = model.vocab if vocab is None else vocab
    y = _sentence_ids(tokens, vocab)
    x = np.concatenate(([EOS_ID], y[:-1]))
    return _stream_nll(model, x, y), len(y)


def perplexity_sentence(model: LanguageModel, tokens,
                        vocab: Vocabulary | None = None) -> float:
    nll, n = sentence_nll(model, tokens, vocab)
    return float(np.exp(nll / n))


def save_checkpoint(model: LanguageModel, path: str | Path) -> None:
    """Single-file checkpoint: config, vocabulary (text + hash), tensors."""
    vocab_text = model.vocab.to_text()
    meta = {
        "format": 1,
        "config": asdict(model.config),
        "vocab_sha256": sha256_text(vocab_text),
        "vocab_text": vocab_text,
    }
    meta_bytes = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"),
                               dtype=np.uint8)
    with open(path, "wb") as f:
        np.savez_compressed(f, __meta__=meta_bytes, **model.params)


def load_checkpoint(path: str | Path,
                    expected_vocab: Vocabulary | None = None) -> LanguageModel:
    """Load and validate a checkpoint.

    Shapes are checked against the stored config; when
    ``expected_vocab`` is given its serialized hash must match.
    """
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive:
            raise ParseError("not a model checkpoint (missing metadata)")
        meta = json.loads(bytes(archive["__meta__"]))
        cfg = LmConfig(**meta["config"])
        vocab_text = meta["vocab_text"]
        if sha256_text(vocab_text) != meta["vocab_sha256"]:
            raise ParseError("checkpoint vocabulary hash mismatch (corrupt file)")
        vocab = Vocabulary.from_text(vocab_text)
        shapes = _param_shapes(cfg, len(vocab))
        params = {}
        for key, shape in shapes.items():
            if key not in archive:
                raise ParseError(f"checkpoint missing tensor {key!r}")
            tensor = np.asarray(archive[key], dtype=np.float64)
            if tensor.shape != shape:
                raise ConfigurationError(
                    f"tensor {key!r} has shape {tensor.shape}, config implies {shape}")
            params[key] = tensor
    if expected_vocab is not None:
        if sha256_text(expected_vocab.to_text()) != meta["vocab_sha256"]:
            raise VocabularyMismatchError(
                "checkpoint vocabulary differs from the expected vocabulary")
    return LanguageModel(config=cfg, vocab=vocab, params=params)
