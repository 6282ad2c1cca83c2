"""Hard debiasing of word embeddings.

The gender direction g is the top principal direction of pair-centered
definitional vectors (she/he, mother/father, ...).  Neutralize projects
gender-neutral words onto the complement of g and renormalizes; equalize
re-positions gendered pairs so both members share their g-orthogonal
component and sit symmetrically along g.

All operations take a normalized matrix and return a new one; nothing
is mutated in place.  Tolerances: 1e-12 degeneracy cutoffs, 1e-9
invariant checks.

Whether the original experiment equalized pairs or only neutralized is
not documented; ``debias_all`` applies both steps by default and takes
``equalize_pairs=False`` to disable the second.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingMatrix
from .errors import ConfigurationError, DegenerateGeometryError

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-12


@dataclass
class GenderSubspace:
    """A single gender direction plus the variance share it captures."""

    g: np.ndarray
    explained_variance_ratio: float

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        norm = np.linalg.norm(self.g)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"g must be unit norm, got {norm}")
        if not 0.0 <= self.explained_variance_ratio <= 1.0 + 1e-12:
            raise ValueError("explained_variance_ratio outside [0, 1]")


@dataclass
class WordSets:
    """Word lists steering the debias pipeline.

    ``neutral_words=None`` means the default: every vocabulary word not
    appearing in any pair list.  An explicit set (even empty) is taken
    as-is, except that definitional words may never be neutralized.
    """

    definitional_pairs: list[tuple[str, str]]
    equality_pairs: list[tuple[str, str]] = field(default_factory=list)
    neutral_words: set[str] | None = None

    def validate(self) -> None:
        if not self.definitional_pairs:
            raise ConfigurationError("need at least one definitional pair")
        for a, b in list(self.definitional_pairs) + list(self.equality_pairs):
            if a == b:
                raise ConfigurationError(f"pair words must be distinct: ({a}, {b})")
        if self.neutral_words is not None:
            definitional = {w for p in self.definitional_pairs for w in p}
            overlap = sorted(definitional & set(self.neutral_words))
            if overlap:
                raise ConfigurationError(
                    "words are both definitional and neutral: " + ", ".join(overlap))

    def gendered_words(self) -> set[str]:
        return {w for p in list(self.definitional_pairs) + list(self.equality_pairs)
                for w in p}


def _require_normalized(emb: EmbeddingMatrix) -> None:
    if not emb.normalized:
        raise ValueError("operation requires a normalized embedding matrix")


def _usable_pairs(emb: EmbeddingMatrix, pairs) -> list[tuple[str, str]]:
    usable = []
    for a, b in pairs:
        if a in emb and b in emb:
            usable.append((a, b))
        else:
            missing = [w for w in (a, b) if w not in emb]
            logger.warning("skipping pair (%s, %s): missing %s", a, b,
                           ", ".join(missing))
    return usable


def gender_direction(emb: EmbeddingMatrix, pairs) -> GenderSubspace:
    """Top principal direction of the pair-centered definitional rows.

    Sign convention: the male side is positive, fixed by (he - she)·g > 0
    when both pronouns are present, otherwise by the summed male-female
    projections of the usable pairs.
    """
    _require_normalized(emb)
    usable = _usable_pairs(emb, pairs)
    if not usable:
        raise ConfigurationError("no definitional pair has both words in vocabulary")
    rows = []
    for fem, male in usable:
        a, b = emb.row(fem), emb.row(male)
        center = (a + b) / 2.0
        rows.append(a - center)
        rows.append(b - center)
    stacked = np.vstack(rows)
    _, s, vt = np.linalg.svd(stacked, full_matrices=False)
    if s[0] < DEGENERACY_TOL:
        raise DegenerateGeometryError(
            "all centered definitional rows are numerically zero")
    g = vt[0] / np.linalg.norm(vt[0])
    ratio = float(s[0] ** 2 / np.sum(s ** 2))

    orient = 0.0
    if "he" in emb and "she" in emb:
        orient = float((emb.row("he") - emb.row("she")) @ g)
    if abs(orient) <= DEGENERACY_TOL:
        orient = float(sum((emb.row(m) - emb.row(f)) @ g for f, m in usable))
    if orient < -DEGENERACY_TOL:
        g = -g
    elif abs(orient) <= DEGENERACY_TOL:
        logger.warning("gender direction orientation undetermined; sign arbitrary")
    return GenderSubspace(g=g, explained_variance_ratio=ratio)


def neutralize(emb: EmbeddingMatrix, neutral_words,
               sub: GenderSubspace) -> EmbeddingMatrix:
    """Remove the g component from each neutral word and renormalize."""
    _require_normalized(emb)
    g = sub.g
    vectors = emb.vectors.copy()
    idx = np.array(sorted(emb.word_to_row[w] for w in set(neutral_words)
                          if w in emb.word_to_row), dtype=np.int64)
    if idx.size:
        block = vectors[idx]
        residual = block - np.outer(block @ g, g)
        norms = np.linalg.norm(residual, axis=1)
        bad = np.nonzero(norms < DEGENERACY_TOL)[0]
        if bad.size:
            word = emb.words[idx[bad[0]]]
            raise DegenerateGeometryError(
                f"word {word!r} is parallel to the gender direction")
        vectors[idx] = residual / norms[:, None]
    return EmbeddingMatrix(words=list(emb.words), vectors=vectors,
                           normalized=True, vocab=emb.vocab)


def equalize(emb: EmbeddingMatrix, pairs,
             sub: GenderSubspace) -> EmbeddingMatrix:
    """Re-symmetrize each pair about the gender direction.

    After the step both members are unit vectors sharing the identical
    g-orthogonal component, differing only along g.
    """
    _require_normalized(emb)
    g = sub.g
    vectors = emb.vectors.copy()
    for fem, male in _usable_pairs(emb, pairs):
        a = vectors[emb.word_to_row[fem]]
        b = vectors[emb.word_to_row[male]]
        mu = (a + b) / 2.0
        mu_b = (mu @ g) * g
        nu = mu - mu_b
        nu_sq = float(nu @ nu)
        assert nu_sq <= 1.0 + 1e-9, "orthogonal midpoint exceeds unit ball"
        scale = np.sqrt(max(0.0, 1.0 - nu_sq))
        for word, w in ((fem, a), (male, b)):
            w_b = (w @ g) * g
            d = w_b - mu_b
            d_norm = np.linalg.norm(d)
            if d_norm < DEGENERACY_TOL:
                raise DegenerateGeometryError(
                    f"pair ({fem}, {male}) indistinguishable along the gender direction")
            vectors[emb.word_to_row[word]] = nu + scale * d / d_norm
    return EmbeddingMatrix(words=list(emb.words), vectors=vectors,
                           normalized=True, vocab=emb.vocab)


def debias_all(emb: EmbeddingMatrix, sets: WordSets,
               equalize_pairs: bool = True
               ) -> tuple[EmbeddingMatrix, GenderSubspace]:
    """Full pipeline: normalize, find g, neutralize, equalize.

    Returns the debiased matrix and the subspace used.
    """
    from .embeddings import normalize_rows

    sets.validate()
    if not emb.normalized:
        emb = normalize_rows(emb)
    sub = gender_direction(emb, sets.definitional_pairs)
    if sets.neutral_words is None:
        gendered = sets.gendered_words()
        neutral = [w for w in emb.words if w not in gendered]
    else:
        neutral = sorted(sets.neutral_words)
    out = neutralize(emb, neutral, sub)
    if equalize_pairs and sets.equality_pairs:
        out = equalize(out, sets.equality_pairs, sub)
    return out, sub


def max_projection(emb: EmbeddingMatrix, words, sub: GenderSubspace) -> float:
    """max |w·g| over the given words (diagnostic for neutralization)."""
    rows = [emb.row(w) for w in words if w in emb]
    if not rows:
        return 0.0
    return float(np.max(np.abs(np.vstack(rows) @ sub.g)))
