"""Corpus handling: tokenization, vocabularies, and pronoun audits.

Raw text is lowercased and split on whitespace; newlines delimit
sentences.  Vocabularies reserve ``<unk>`` (id 0) for unknown words and
``<eos>`` (id 1) for sentence boundaries.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigurationError, CorpusDecodeError, ParseError

UNK = "<unk>"
EOS = "<eos>"
UNK_ID = 0
EOS_ID = 1

# Pronoun inventories used for auditing; "him" is deliberately absent
# from the male list and both lists are overridable by the caller.
MALE_PRONOUNS = frozenset({"he", "his", "himself"})
FEMALE_PRONOUNS = frozenset({"she", "her", "herself"})

TokenSeq = Sequence[str]
Sentences = list[list[str]]


def tokenize(text: str | bytes) -> Sentences:
    """Split text into sentences of lowercase whitespace tokens.

    Newlines delimit sentences; blank lines produce no sentence.  Bytes
    input is decoded as UTF-8, raising :class:`CorpusDecodeError` with
    the offending byte offset on failure.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusDecodeError(exc.start, exc.reason) from exc
    sentences = []
    for line in text.split("\n"):
        tokens = line.lower().split()
        if tokens:
            sentences.append(tokens)
    return sentences


def _flatten(tokens: Iterable) -> tuple[list[str], int]:
    """Accept a flat token sequence or nested sentences.

    Returns (flat tokens, sentence count); flat input has 0 sentences.
    """
    tokens = list(tokens)
    if not tokens:
        return [], 0
    if all(isinstance(t, str) for t in tokens):
        return tokens, 0
    if all(isinstance(t, (list, tuple)) for t in tokens):
        flat = [w for sent in tokens for w in sent]
        return flat, len(tokens)
    raise TypeError("tokens must be all strings or all sentences, not a mix")


@dataclass
class Vocabulary:
    """Bidirectional word/id mapping with corpus counts.

    Ids are assigned by descending count with lexicographic tie-breaks,
    after the fixed specials ``<unk>``=0 and ``<eos>``=1.  The ``<unk>``
    count records occurrences of words dropped by ``min_count``; the
    ``<eos>`` count records the number of sentences seen.
    """

    word_to_id: dict[str, int]
    id_to_word: list[str]
    counts: dict[str, int]
    min_count: int = 1

    def __len__(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word: str) -> bool:
        return word in self.word_to_id

    def id_of(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word_of(self, idx: int) -> str:
        return self.id_to_word[idx]

    def save_text(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def to_text(self) -> str:
        lines = [f"{w}\t{self.counts.get(w, 0)}" for w in self.id_to_word]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        word_to_id: dict[str, int] = {}
        id_to_word: list[str] = []
        counts: dict[str, int] = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'word<TAB>count'", line=lineno)
            word, count_s = parts
            try:
                count = int(count_s)
            except ValueError:
                raise ParseError(f"non-integer count {count_s!r}", line=lineno)
            if word in word_to_id:
                raise ParseError(f"duplicate word {word!r}", line=lineno)
            word_to_id[word] = len(id_to_word)
            id_to_word.append(word)
            counts[word] = count
        if id_to_word[:2] != [UNK, EOS]:
            raise ParseError(f"first two entries must be {UNK} and {EOS}")
        return cls(word_to_id=word_to_id, id_to_word=id_to_word, counts=counts)

    @classmethod
    def load_text(cls, path: str | Path) -> "Vocabulary":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def build_vocab(tokens: Iterable, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from tokens (flat or nested sentences).

    Words occurring fewer than ``min_count`` times are excluded and will
    encode to ``<unk>``.  An empty token sequence yields a vocabulary of
    only the specials.
    """
    if min_count < 1:
        raise ConfigurationError(f"min_count must be >= 1, got {min_count}")
    flat, n_sentences = _flatten(tokens)
    raw_counts = Counter(flat)
    kept = [(w, c) for w, c in raw_counts.items() if c >= min_count]
    dropped_occurrences = sum(c for _, c in raw_counts.items() if c < min_count)
    # Descending count, lexicographic tie-break, for deterministic ids.
    kept.sort(key=lambda wc: (-wc[1], wc[0]))

    id_to_word = [UNK, EOS] + [w for w, _ in kept]
    word_to_id = {w: i for i, w in enumerate(id_to_word)}
    counts = {w: c for w, c in kept}
    counts[UNK] = dropped_occurrences
    counts[EOS] = n_sentences
    return Vocabulary(word_to_id=word_to_id, id_to_word=id_to_word,
                      counts=counts, min_count=min_count)


def encode(tokens: Iterable, vocab: Vocabulary) -> list[int]:
    """Map tokens to ids; OOV tokens become ``<unk>``.

    Nested sentence input appends ``<eos>`` at each sentence boundary;
    flat input is encoded as-is.
    """
    tokens = list(tokens)
    if not tokens:
        return []
    if all(isinstance(t, str) for t in tokens):
        return [vocab.id_of(t) for t in tokens]
    if all(isinstance(t, (list, tuple)) for t in tokens):
        ids: list[int] = []
        for sent in tokens:
            ids.extend(vocab.id_of(t) for t in sent)
            ids.append(EOS_ID)
        return ids
    raise TypeError("tokens must be all strings or all sentences, not a mix")


@dataclass
class PronounAudit:
    """Counts of gendered pronouns in a token stream.

    ``female_share`` is ``None`` when no listed pronoun occurs.
    """

    male_counts: dict[str, int]
    female_counts: dict[str, int]
    male_total: int = field(init=False)
    female_total: int = field(init=False)

    def __post_init__(self):
        self.male_total = sum(self.male_counts.values())
        self.female_total = sum(self.female_counts.values())

    @property
    def female_share(self) -> float | None:
        total = self.male_total + self.female_total
        if total == 0:
            return None
        return self.female_total / total

    def to_dict(self) -> dict:
        return {
            "male_counts": dict(sorted(self.male_counts.items())),
            "female_counts": dict(sorted(self.female_counts.items())),
            "male_total": self.male_total,
            "female_total": self.female_total,
            "female_share": self.female_share,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def pronoun_audit(tokens: Iterable,
                  male_set: Iterable[str] = MALE_PRONOUNS,
                  female_set: Iterable[str] = FEMALE_PRONOUNS) -> PronounAudit:
    """Count listed male/female pronouns, case-insensitively.

    The two sets must be disjoint and non-empty.
    """
    male = {w.lower() for w in male_set}
    female = {w.lower() for w in female_set}
    if not male or not female:
        raise ConfigurationError("pronoun sets must be non-empty")
    overlap = male & female
    if overlap:
        raise ConfigurationError(
            f"pronoun sets overlap: {sorted(overlap)}")

    flat, _ = _flatten(tokens)
    male_counts = {w: 0 for w in sorted(male)}
    female_counts = {w: 0 for w in sorted(female)}
    for tok in flat:
        tok = tok.lower()
        if tok in male:
            male_counts[tok] += 1
        elif tok in female:
            female_counts[tok] += 1
    return PronounAudit(male_counts=male_counts, female_counts=female_counts)


def read_corpus(path: str | Path) -> Sentences:
    """Read a UTF-8 text file and tokenize it."""
    data = Path(path).read_bytes()
    return tokenize(data)
