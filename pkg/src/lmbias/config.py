"""Declarative pipeline configuration with desk/paper profiles.

A JSON config file supplies any subset of the sections below; the
selected profile fills the rest, and command-line flags (seed, profile,
out) override the file.  The global seed propagates into every
sub-config unless that sub-config pins its own.

Stage resumption is content-addressed: each pipeline stage hashes the
config sections it depends on (plus the input corpus bytes), so editing
an upstream section invalidates exactly the downstream stages.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from ._util import config_hash, sha256_file
from .embeddings import CbowConfig
from .errors import ConfigurationError
from .evalsuite import SynthConfig
from .lm import LmConfig

PROFILES = {
    "desk": {
        "embed": {"dim": 100},
        "lm": {"layers": 2, "hidden": 200, "emb_dim": 100, "seq_len": 35,
               "batch": 20, "dropout": 0.2},
    },
    "paper": {
        "embed": {"dim": 400},
        "lm": {"layers": 2, "hidden": 200, "emb_dim": 400, "seq_len": 70,
               "batch": 100, "dropout": 0.2},
    },
}

WORDLIST_KEYS = ("definitional_pairs", "equality_pairs", "neutral_words",
                 "male_nouns", "female_nouns", "male_occupations",
                 "female_occupations")

_TOP_KEYS = {"profile", "seed", "out_dir", "corpus", "synth", "embed", "lm",
             "wordlists", "eval", "equalize", "decimal_sep"}
_EVAL_KEYS = {"testset_dir", "balanced_corpus"}


def _build(cls, kwargs: dict, section: str):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"bad {section!r} section: {exc}") from None


@dataclass
class PipelineConfig:
    profile: str = "desk"
    seed: int = 1
    out_dir: str = "out"
    corpus: str | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    embed: CbowConfig = field(default_factory=CbowConfig)
    lm: LmConfig = field(default_factory=LmConfig)
    wordlists: dict = field(default_factory=lambda: {k: None for k in WORDLIST_KEYS})
    testset_dir: str | None = None
    balanced_corpus: str | None = None
    equalize: bool = True
    decimal_sep: str = "."

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "corpus": self.corpus,
            "synth": asdict(self.synth),
            "embed": asdict(self.embed),
            "lm": asdict(self.lm),
            "wordlists": dict(self.wordlists),
            "eval": {"testset_dir": self.testset_dir,
                     "balanced_corpus": self.balanced_corpus},
            "equalize": self.equalize,
            "decimal_sep": self.decimal_sep,
        }

    def validate(self) -> None:
        if self.profile not in PROFILES:
            raise ConfigurationError(
                f"profile must be one of {sorted(PROFILES)}, got {self.profile!r}")
        if self.decimal_sep not in (".", ","):
            raise ConfigurationError("decimal_sep must be '.' or ','")
        self.embed.validate()
        self.lm.validate()
        self.synth.validate()
        unknown = set(self.wordlists) - set(WORDLIST_KEYS)
        if unknown:
            raise ConfigurationError(f"unknown word list keys: {sorted(unknown)}")
        for path in [self.corpus, self.testset_dir, self.balanced_corpus,
                     *self.wordlists.values()]:
            if path is not None and not Path(path).exists():
                raise ConfigurationError(f"configured path does not exist: {path}")

    # Stage dependency sets for content-addressed resumption.  The
    # corpus stage depends on the input file's bytes, not just its path;
    # callers append that hash via extra.
    _STAGE_DEPS = {
        "corpus": ("seed", "corpus", "synth"),
        "audit": ("seed", "corpus", "synth"),
        "embed": ("seed", "corpus", "synth", "embed"),
        "debias": ("seed", "corpus", "synth", "embed", "wordlists", "equalize"),
        "testsets": ("wordlists", "eval"),
        "lm_learned": ("seed", "corpus", "synth", "lm"),
        "lm_frozen_biased": ("seed", "corpus", "synth", "embed", "lm"),
        "lm_frozen_debiased": ("seed", "corpus", "synth", "embed", "wordlists",
                               "equalize", "lm"),
        "eval": ("seed", "corpus", "synth", "embed", "wordlists", "equalize",
                 "lm", "eval", "decimal_sep"),
    }

    def stage_hash(self, stage: str, extra: dict | None = None) -> str:
        deps = self._STAGE_DEPS[stage]
        full = self.to_dict()
        payload = {k: full[k] for k in deps}
        if self.corpus is not None and "corpus" in deps:
            payload["corpus_sha256"] = sha256_file(self.corpus)
        if extra:
            payload.update(extra)
        return config_hash(payload)


def make_config(data: dict | None = None, profile: str | None = None,
                seed: int | None = None, out_dir: str | None = None) -> PipelineConfig:
    """Merge profile defaults, config-file fields, and flag overrides."""
    data = dict(data or {})
    unknown = set(data) - _TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    profile = profile or data.get("profile", "desk")
    if profile not in PROFILES:
        raise ConfigurationError(
            f"profile must be one of {sorted(PROFILES)}, got {profile!r}")
    seed = int(data.get("seed", 1) if seed is None else seed)
    out_dir = out_dir or data.get("out_dir", "out")

    embed_kwargs = {**PROFILES[profile]["embed"], "seed": seed,
                    **data.get("embed", {})}
    lm_kwargs = {**PROFILES[profile]["lm"], "seed": seed, **data.get("lm", {})}
    synth_kwargs = {"seed": seed, **data.get("synth", {})}

    wordlists = {k: None for k in WORDLIST_KEYS}
    wordlists.update(data.get("wordlists", {}))
    eval_section = dict(data.get("eval", {}))
    unknown = set(eval_section) - _EVAL_KEYS
    if unknown:
        raise ConfigurationError(f"unknown eval keys: {sorted(unknown)}")

    cfg = PipelineConfig(
        profile=profile,
        seed=seed,
        out_dir=str(out_dir),
        corpus=data.get("corpus"),
        synth=_build(SynthConfig, synth_kwargs, "synth"),
        embed=_build(CbowConfig, embed_kwargs, "embed"),
        lm=_build(LmConfig, lm_kwargs, "lm"),
        wordlists=wordlists,
        testset_dir=eval_section.get("testset_dir"),
        balanced_corpus=eval_section.get("balanced_corpus"),
        equalize=bool(data.get("equalize", True)),
        decimal_sep=data.get("decimal_sep", "."),
    )
    cfg.validate()
    return cfg


def load_config(path: str | Path | None, profile: str | None = None,
                seed: int | None = None, out_dir: str | None = None) -> PipelineConfig:
    data = None
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") \
                from None
        if not isinstance(data, dict):
            raise ConfigurationError("config file must contain a JSON object")
    return make_config(data, profile=profile, seed=seed, out_dir=out_dir)
