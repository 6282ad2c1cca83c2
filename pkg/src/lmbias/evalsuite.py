"""Stereotype-swap test sets, bias statistics, and synthetic corpora.

Six test sets from the template "<pronoun> is <article> <noun>":

1 definitional male      (he is a father)
2 definitional female    (she is a mother)
3 male stereotyped       (he is a surgeon)
4 test 3 with she        (she is a surgeon)
5 female stereotyped     (she is a hairdresser)
6 test 5 with he         (he is a hairdresser)

The bias statistic is the relative increment (PP_swapped - PP_base) /
PP_base for the pairs (1,2), (3,4), (5,6).  Test-set perplexity pools
NLL over every token of the set (per-sentence state reset) and then
exponentiates; this choice is documented because per-sentence averaging
would give a different but similar number.

The synthetic corpus generator produces template sentences with a
controllable male/female imbalance and a stereotype link between
pronouns and occupation choice, standing in for a large natural corpus
at desk scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from . import wordlists
from .corpus import PronounAudit, encode, pronoun_audit, tokenize
from .errors import ConfigurationError, InsufficientDataError, VocabularyMismatchError
from .lm import LanguageModel, perplexity_corpus, sentence_nll

VOWELS = "aeiou"

TEST_DESCRIPTIONS = {
    1: "definitional male",
    2: "definitional female",
    3: "male stereotyped",
    4: "male stereotyped, female pronouns",
    5: "female stereotyped",
    6: "female stereotyped, male pronouns",
}

INCREMENT_PAIRS = {"t2_vs_t1": (1, 2), "t4_vs_t3": (3, 4), "t6_vs_t5": (5, 6)}


def article(noun: str) -> str:
    """"an" before a vowel letter, else "a"."""
    return "an" if noun and noun[0].lower() in VOWELS else "a"


@dataclass
class WordListBundle:
    definitional_male_nouns: list[str]
    definitional_female_nouns: list[str]
    male_stereotyped_occupations: list[str]
    female_stereotyped_occupations: list[str]

    @classmethod
    def defaults(cls) -> "WordListBundle":
        return cls(
            definitional_male_nouns=wordlists.default_word_list("male_nouns"),
            definitional_female_nouns=wordlists.default_word_list("female_nouns"),
            male_stereotyped_occupations=wordlists.default_word_list("male_occupations"),
            female_stereotyped_occupations=wordlists.default_word_list("female_occupations"),
        )

    def validate(self) -> None:
        for name in ("definitional_male_nouns", "definitional_female_nouns",
                     "male_stereotyped_occupations", "female_stereotyped_occupations"):
            words = getattr(self, name)
            if len(set(words)) != len(words):
                raise ConfigurationError(f"duplicate words in {name}")


@dataclass
class TestSet:
    id: int
    description: str
    sentences: list[list[str]]

    def to_text(self) -> str:
        return "".join(" ".join(s) + "\n" for s in self.sentences)


def _pronoun_noun_sentences(pronoun: str, nouns) -> list[list[str]]:
    return [[pronoun, "is", article(n), n] for n in nouns]


def _swap_pronoun(sentences, old: str, new: str) -> list[list[str]]:
    return [[new if tok == old else tok for tok in sent] for sent in sentences]


def generate_testsets(bundle: WordListBundle,
                      ids=(1, 2, 3, 4, 5, 6)) -> list[TestSet]:
    """Build the requested test sets from the bundle's word lists."""
    bundle.validate()
    sources = {
        1: ("he", bundle.definitional_male_nouns, "definitional_male_nouns"),
        2: ("she", bundle.definitional_female_nouns, "definitional_female_nouns"),
        3: ("he", bundle.male_stereotyped_occupations, "male_stereotyped_occupations"),
        5: ("she", bundle.female_stereotyped_occupations, "female_stereotyped_occupations"),
    }
    out = []
    for tid in ids:
        if tid not in TEST_DESCRIPTIONS:
            raise ConfigurationError(f"no such test set {tid}")
        base_id = {4: 3, 6: 5}.get(tid, tid)
        pronoun, nouns, list_name = sources[base_id]
        if not nouns:
            raise ConfigurationError(
                f"test set {tid} requires a non-empty {list_name} list")
        sentences = _pronoun_noun_sentences(pronoun, nouns)
        if tid == 4:
            sentences = _swap_pronoun(sentences, "he", "she")
        elif tid == 6:
            sentences = _swap_pronoun(sentences, "she", "he")
        out.append(TestSet(id=tid, description=TEST_DESCRIPTIONS[tid],
                           sentences=sentences))
    return out


def write_testset_files(testsets, out_dir: str | Path) -> list[Path]:
    """One file per set, named test<id>.txt, one sentence per line."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ts in testsets:
        path = out_dir / f"test{ts.id}.txt"
        path.write_text(ts.to_text(), encoding="utf-8")
        paths.append(path)
    return paths


def read_testset_file(path: str | Path, tid: int,
                      description: str | None = None) -> TestSet:
    sentences = tokenize(Path(path).read_bytes())
    return TestSet(id=tid,
                   description=description or TEST_DESCRIPTIONS.get(tid, ""),
                   sentences=sentences)


def relative_increment(pp_base: float, pp_swapped: float) -> float:
    """(PP_swapped - PP_base) / PP_base."""
    if pp_base <= 0 or pp_swapped <= 0:
        raise ValueError("perplexities must be positive")
    return (pp_swapped - pp_base) / pp_base


def format_increment(value: float, decimal_sep: str = ".") -> str:
    """Signed, 2 decimals, half-away-from-zero; exact zero prints 0.00."""
    q = Decimal(float(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
    if q == 0:
        text = "0.00"
    else:
        text = ("+" if q > 0 else "") + str(q)
    return text.replace(".", decimal_sep)


def format_pp(value: float, decimal_sep: str = ".") -> str:
    """Perplexity rendering: one decimal, half-away-from-zero."""
    q = Decimal(float(value)).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    return str(q).replace(".", decimal_sep)


@dataclass
class TestSetResult:
    id: int
    pp: float
    n_tokens: int

    def to_dict(self) -> dict:
        return {"id": self.id, "pp": self.pp, "n_tokens": self.n_tokens}


@dataclass
class SentenceDelta:
    text: str
    pp_bias: float
    pp_debias: float

    @property
    def delta(self) -> float:
        return self.pp_debias - self.pp_bias

    def to_dict(self) -> dict:
        return {"text": self.text, "pp_bias": self.pp_bias,
                "pp_debias": self.pp_debias, "delta": self.delta}


@dataclass
class BiasReport:
    model_id: str
    per_test: list[TestSetResult]
    increments: dict[str, float | None]
    sentences: list[SentenceDelta] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "per_test": [r.to_dict() for r in self.per_test],
            "increments": dict(self.increments),
            "sentences": [s.to_dict() for s in self.sentences],
            "metadata": self.metadata,
        }


def evaluate_model(model: LanguageModel, testsets) -> list[TestSetResult]:
    """Pooled perplexity per test set (state reset per sentence)."""
    results = []
    for ts in testsets:
        if not ts.sentences:
            raise InsufficientDataError(f"test set {ts.id} is empty")
        total_nll = 0.0
        total_tokens = 0
        for sent in ts.sentences:
            nll, n = sentence_nll(model, sent)
            total_nll += nll
            total_tokens += n
        results.append(TestSetResult(id=ts.id,
                                     pp=float(np.exp(total_nll / total_tokens)),
                                     n_tokens=total_tokens))
    return sorted(results, key=lambda r: r.id)


def increments_from_results(results) -> dict[str, float | None]:
    """The three pair increments; None when a pair member is absent."""
    by_id = {r.id: r.pp for r in results}
    out: dict[str, float | None] = {}
    for key, (base, swapped) in INCREMENT_PAIRS.items():
        if base in by_id and swapped in by_id:
            out[key] = relative_increment(by_id[base], by_id[swapped])
        else:
            out[key] = None
    return out


def build_report(model_id: str, results, sentences=(),
                 metadata: dict | None = None) -> BiasReport:
    return BiasReport(model_id=model_id, per_test=list(results),
                      increments=increments_from_results(results),
                      sentences=list(sentences), metadata=metadata or {})


@dataclass
class ComparisonResult:
    """Per-sentence perplexity shift from the biased to the debiased model."""

    per_test: dict[int, list[SentenceDelta]]

    @property
    def mean_delta(self) -> dict[int, float]:
        return {tid: float(np.mean([s.delta for s in deltas]))
                for tid, deltas in self.per_test.items()}

    @property
    def mean_abs_delta(self) -> dict[int, float]:
        return {tid: float(np.mean([abs(s.delta) for s in deltas]))
                for tid, deltas in self.per_test.items()}

    def all_sentences(self) -> list[SentenceDelta]:
        return [s for tid in sorted(self.per_test) for s in self.per_test[tid]]


def compare_models(model_biased: LanguageModel, model_debiased: LanguageModel,
                   testsets) -> ComparisonResult:
    """Sentence-level PP under both models; requires a shared vocabulary."""
    if model_biased.vocab.id_to_word != model_debiased.vocab.id_to_word:
        raise VocabularyMismatchError(
            "models were trained with different vocabularies")
    per_test: dict[int, list[SentenceDelta]] = {}
    for ts in testsets:
        deltas = []
        for sent in ts.sentences:
            nll_b, n = sentence_nll(model_biased, sent)
            nll_d, _ = sentence_nll(model_debiased, sent)
            deltas.append(SentenceDelta(text=" ".join(sent),
                                        pp_bias=float(np.exp(nll_b / n)),
                                        pp_debias=float(np.exp(nll_d / n))))
        per_test[ts.id] = deltas
    return ComparisonResult(per_test=per_test)


@dataclass
class BalancedEval:
    pp: float
    n_tokens: int
    audit: PronounAudit

    def to_dict(self) -> dict:
        return {"pp": self.pp, "n_tokens": self.n_tokens,
                "audit": self.audit.to_dict()}


def balanced_eval(model: LanguageModel, text: str) -> BalancedEval:
    """Corpus perplexity (continuous state) plus the corpus's own audit."""
    sentences = tokenize(text)
    if not sentences:
        raise InsufficientDataError("balanced corpus is empty")
    ids = encode(sentences, model.vocab)
    return BalancedEval(pp=perplexity_corpus(model, ids), n_tokens=len(ids),
                        audit=pronoun_audit(sentences))


GENDERED_PLACEHOLDERS = ("{pro}", "{pos}", "{ref}")

FILLERS = {
    "male": {"pro": "he", "pos": "his", "ref": "himself"},
    "female": {"pro": "she", "pos": "her", "ref": "herself"},
}


@dataclass
class SynthConfig:
    """Controls for the synthetic imbalanced corpus.

    Each template must contain exactly one gendered placeholder so that
    sentence counts translate one-to-one into pronoun counts; the
    resulting female share is female_ratio/(1+female_ratio) up to the
    rounding of the female sentence count.

    A sentence of either gender draws its template from the shared
    `templates` list concatenated with that gender's extra list.  The
    extra lists give each pronoun contexts of its own, mirroring real
    text where the two pronouns never share every context.
    """

    male_context_sentences: int = 1000
    female_ratio: float = 0.2
    templates: list[str] = field(default_factory=lambda: wordlists.default_word_list("synth_templates"))
    male_templates: list[str] = field(default_factory=lambda: wordlists.default_word_list("synth_templates_male"))
    female_templates: list[str] = field(default_factory=lambda: wordlists.default_word_list("synth_templates_female"))
    male_occupations: list[str] = field(default_factory=lambda: wordlists.default_word_list("male_occupations"))
    female_occupations: list[str] = field(default_factory=lambda: wordlists.default_word_list("female_occupations"))
    stereotype_strength: float = 0.8
    seed: int = 1

    def template_pool(self, gender: str) -> list[str]:
        extra = self.male_templates if gender == "male" else self.female_templates
        return self.templates + extra

    def validate(self) -> None:
        if self.male_context_sentences < 1:
            raise ConfigurationError("male_context_sentences must be positive")
        if not 0.0 < self.female_ratio <= 1.0:
            raise ConfigurationError("female_ratio must lie in (0, 1]")
        if not 0.0 <= self.stereotype_strength <= 1.0:
            raise ConfigurationError("stereotype_strength must lie in [0, 1]")
        if not self.templates:
            raise ConfigurationError("need at least one sentence template")
        uses_occ = False
        for tpl in (self.templates + self.male_templates
                    + self.female_templates):
            n_gendered = sum(tpl.count(p) for p in GENDERED_PLACEHOLDERS)
            if n_gendered != 1:
                raise ConfigurationError(
                    f"template {tpl!r} must contain exactly one gendered "
                    f"placeholder, found {n_gendered}")
            if "{art}" in tpl and "{occ}" not in tpl:
                raise ConfigurationError(
                    f"template {tpl!r} uses {{art}} without {{occ}}")
            uses_occ = uses_occ or "{occ}" in tpl
        if uses_occ and not (self.male_occupations and self.female_occupations):
            raise ConfigurationError(
                "templates use {occ} but an occupation list is empty")


def synth_corpus(cfg: SynthConfig) -> str:
    """Deterministic imbalanced corpus, one sentence per line.

    Occupation slots draw from the sentence gender's own stereotyped
    list with probability stereotype_strength, else from the other list.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n_male = cfg.male_context_sentences
    n_female = int(np.floor(cfg.female_ratio * n_male + 0.5))
    own = {"male": cfg.male_occupations, "female": cfg.female_occupations}
    other = {"male": cfg.female_occupations, "female": cfg.male_occupations}
    sentences = []
    for gender, count in (("male", n_male), ("female", n_female)):
        pool = cfg.template_pool(gender)
        for _ in range(count):
            template = pool[rng.integers(len(pool))]
            fills = dict(FILLERS[gender])
            if "{occ}" in template:
                occ_pool = own[gender] if rng.random() < cfg.stereotype_strength \
                    else other[gender]
                occ = occ_pool[rng.integers(len(occ_pool))]
                fills["occ"] = occ
                fills["art"] = article(occ)
            sentences.append(template.format(**fills))
    order = rng.permutation(len(sentences))
    return "".join(sentences[i] + "\n" for i in order)
