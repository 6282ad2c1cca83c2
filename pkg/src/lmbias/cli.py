"""Command-line interface and end-to-end pipeline.

Subcommands: audit, synth, train-embed, debias, train-lm, eval,
pipeline.  Exit codes: 0 success, 2 input/config error, 3 numeric
divergence.

The pipeline runs corpus -> audit -> embed -> debias -> testsets ->
three LSTM regimes (learned, frozen_biased, frozen_debiased) -> eval.
Every stage records a content hash of the config sections it depends on
under <out>/.stages/, so an interrupted run resumes from the last
completed stage and config edits invalidate exactly the affected
stages.  Report artifacts carry no timestamps; wall-clock numbers live
only in the training-log files, so reruns produce byte-identical
reports.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import wordlists
from ._util import config_hash, sha256_file, sha256_text
from .config import PipelineConfig, load_config
from .corpus import Vocabulary, build_vocab, encode, pronoun_audit, read_corpus
from .debias import WordSets, debias_all, max_projection
from .embeddings import load_text, normalize_rows, save_text, train_cbow_logged
from .errors import (ConfigurationError, CorpusDecodeError, DivergenceError,
                     InsufficientDataError, ParseError, VocabularyMismatchError)
from .evalsuite import (WordListBundle, balanced_eval, build_report,
                        compare_models, evaluate_model, generate_testsets,
                        read_testset_file, synth_corpus, write_testset_files)
from .lm import init_model, load_checkpoint, save_checkpoint, train
from .report import report_text, save_audit_figure, write_report_files

logger = logging.getLogger(__name__)

MODEL_IDS = ("learned", "frozen_biased", "frozen_debiased")
COMPARISON_TESTS = (3, 4, 5, 6)

_INPUT_ERRORS = (ConfigurationError, CorpusDecodeError, InsufficientDataError,
                 ParseError, VocabularyMismatchError, FileNotFoundError,
                 NotADirectoryError, IsADirectoryError)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _bundle(cfg: PipelineConfig) -> WordListBundle:
    def load(key: str) -> list[str]:
        path = cfg.wordlists.get(key)
        if path is not None:
            return wordlists.read_word_list(path)
        return wordlists.default_word_list(key)

    return WordListBundle(
        definitional_male_nouns=load("male_nouns"),
        definitional_female_nouns=load("female_nouns"),
        male_stereotyped_occupations=load("male_occupations"),
        female_stereotyped_occupations=load("female_occupations"),
    )


def _word_sets(cfg: PipelineConfig) -> WordSets:
    def pairs(key: str) -> list[tuple[str, str]]:
        path = cfg.wordlists.get(key)
        if path is not None:
            return wordlists.read_pair_list(path)
        return wordlists.default_pair_list(key)

    neutral = None
    neutral_path = cfg.wordlists.get("neutral_words")
    if neutral_path is not None:
        neutral = set(wordlists.read_word_list(neutral_path))
    return WordSets(definitional_pairs=pairs("definitional_pairs"),
                    equality_pairs=pairs("equality_pairs"),
                    neutral_words=neutral)


def _check_shared_vocab(models: dict) -> str:
    hashes = {name: sha256_text(m.vocab.to_text()) for name, m in models.items()}
    if len(set(hashes.values())) > 1:
        detail = ", ".join(f"{name}={h[:12]}" for name, h in sorted(hashes.items()))
        raise VocabularyMismatchError(
            f"checkpoints disagree on vocabulary: {detail}")
    return next(iter(hashes.values()))


class Pipeline:
    """Stage runner with content-addressed completion markers."""

    def __init__(self, cfg: PipelineConfig, workers: int = 1):
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        self.stage_dir = self.out / ".stages"
        self.workers = workers

    @property
    def corpus_file(self) -> Path:
        if self.cfg.corpus is not None:
            return Path(self.cfg.corpus)
        return self.out / "corpus.txt"

    def _stage_done(self, marker: Path, digest: str, paths: list[Path]) -> bool:
        if not marker.exists():
            return False
        try:
            data = json.loads(marker.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            return False
        return data.get("hash") == digest and all(p.exists() for p in paths)

    def run_stage(self, name: str, artifacts: list[str], fn) -> None:
        digest = self.cfg.stage_hash(name)
        marker = self.stage_dir / f"{name}.json"
        paths = [self.out / a for a in artifacts]
        if self._stage_done(marker, digest, paths):
            logger.info("stage %-18s up to date, skipping", name)
            return
        logger.info("stage %-18s running", name)
        fn()
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise RuntimeError(f"stage {name} did not produce: {missing}")
        self.stage_dir.mkdir(parents=True, exist_ok=True)
        marker.write_text(json.dumps(
            {"stage": name, "hash": digest, "artifacts": sorted(artifacts)},
            sort_keys=True) + "\n", encoding="utf-8")

    def _meta(self, stage: str) -> dict:
        return {"config_hash": self.cfg.stage_hash(stage), "seed": self.cfg.seed}

    # ----- stage bodies -------------------------------------------------

    def _do_corpus(self) -> None:
        if self.cfg.corpus is None:
            (self.out / "corpus.txt").write_text(synth_corpus(self.cfg.synth),
                                                 encoding="utf-8")

    def _do_audit(self) -> None:
        audit = pronoun_audit(read_corpus(self.corpus_file))
        payload = audit.to_dict()
        payload["metadata"] = self._meta("audit")
        _write_json(self.out / "audit.json", payload)
        save_audit_figure(audit, self.out / "pronoun_share.png")

    def _do_embed(self) -> None:
        sentences = read_corpus(self.corpus_file)
        vocab = build_vocab(sentences, min_count=self.cfg.embed.min_count)
        vocab.save_text(self.out / "vocab.txt")
        ids = encode(sentences, vocab)
        emb, log = train_cbow_logged(ids, vocab, self.cfg.embed,
                                     workers=self.workers)
        save_text(emb, self.out / "embedding.txt")
        _write_json(self.out / "embed_log.json",
                    {"log": log.to_dict(), "metadata": self._meta("embed")})

    def _do_debias(self) -> None:
        emb = normalize_rows(load_text(self.out / "embedding.txt"))
        save_text(emb, self.out / "embedding_norm.txt")
        sets = _word_sets(self.cfg)
        debiased, sub = debias_all(emb, sets, equalize_pairs=self.cfg.equalize)
        save_text(debiased, self.out / "embedding_debiased.txt")
        if sets.neutral_words is None:
            gendered = sets.gendered_words()
            neutral = [w for w in debiased.words if w not in gendered]
        else:
            neutral = sorted(sets.neutral_words)
        _write_json(self.out / "subspace.json", {
            "explained_variance_ratio": sub.explained_variance_ratio,
            "max_neutral_projection": max_projection(debiased, neutral, sub),
            "equalize": self.cfg.equalize,
            "metadata": self._meta("debias"),
        })

    def _do_testsets(self) -> None:
        if self.cfg.testset_dir is not None:
            src_dir = Path(self.cfg.testset_dir)
            for i in range(1, 7):
                src = src_dir / f"test{i}.txt"
                if not src.exists():
                    raise ConfigurationError(f"test set file missing: {src}")
                (self.out / f"test{i}.txt").write_bytes(src.read_bytes())
        else:
            write_testset_files(generate_testsets(_bundle(self.cfg)), self.out)

    def _lm_stage(self, model_id: str):
        def run() -> None:
            vocab = Vocabulary.load_text(self.out / "vocab.txt")
            ids = encode(read_corpus(self.corpus_file), vocab)
            if model_id == "learned":
                lm_cfg = replace(self.cfg.lm, embedding_mode="learned")
                pretrained = None
            else:
                source = {"frozen_biased": "embedding_norm.txt",
                          "frozen_debiased": "embedding_debiased.txt"}[model_id]
                lm_cfg = replace(self.cfg.lm, embedding_mode="frozen")
                pretrained = load_text(self.out / source)
            model = init_model(lm_cfg, vocab, pretrained)
            stats = train(model, ids)
            save_checkpoint(model, self.out / f"lm_{model_id}.npz")
            _write_json(self.out / f"stats_{model_id}.json", {
                "model_id": model_id,
                "stats": stats.to_dict(),
                "metadata": self._meta(f"lm_{model_id}"),
            })
        return run

    def _do_eval(self) -> None:
        models = {mid: load_checkpoint(self.out / f"lm_{mid}.npz")
                  for mid in MODEL_IDS}
        vocab_sha = _check_shared_vocab(models)
        testsets = [read_testset_file(self.out / f"test{i}.txt", i)
                    for i in range(1, 7)]
        if self.cfg.balanced_corpus is not None:
            balanced_text = Path(self.cfg.balanced_corpus).read_text(encoding="utf-8")
        else:
            balanced_text = synth_corpus(replace(self.cfg.synth, female_ratio=1.0,
                                                 seed=self.cfg.synth.seed + 1))
        (self.out / "balanced.txt").write_text(balanced_text, encoding="utf-8")

        comparison = compare_models(models["frozen_biased"],
                                    models["frozen_debiased"],
                                    [ts for ts in testsets
                                     if ts.id in COMPARISON_TESTS])
        reports = []
        for mid in MODEL_IDS:
            results = evaluate_model(models[mid], testsets)
            sentences = comparison.all_sentences() if mid == "frozen_debiased" else ()
            metadata = {**self._meta("eval"), "model_id": mid,
                        "vocab_sha256": vocab_sha,
                        "lm_config": asdict(models[mid].config)}
            reports.append(build_report(mid, results, sentences, metadata))
        balanced = {mid: balanced_eval(models[mid], balanced_text)
                    for mid in MODEL_IDS}
        _write_json(self.out / "balanced.json",
                    {"models": {mid: ev.to_dict() for mid, ev in balanced.items()},
                     "metadata": self._meta("eval")})
        write_report_files(self.out, reports, comparison, balanced,
                           self.cfg.decimal_sep)

    def run(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        self.stage_dir.mkdir(parents=True, exist_ok=True)
        corpus_artifacts = ["corpus.txt"] if self.cfg.corpus is None else []
        self.run_stage("corpus", corpus_artifacts, self._do_corpus)
        self.run_stage("audit", ["audit.json", "pronoun_share.png"], self._do_audit)
        self.run_stage("embed", ["vocab.txt", "embedding.txt", "embed_log.json"],
                       self._do_embed)
        self.run_stage("debias", ["embedding_norm.txt", "embedding_debiased.txt",
                                  "subspace.json"], self._do_debias)
        self.run_stage("testsets", [f"test{i}.txt" for i in range(1, 7)],
                       self._do_testsets)
        for mid in MODEL_IDS:
            self.run_stage(f"lm_{mid}", [f"lm_{mid}.npz", f"stats_{mid}.json"],
                           self._lm_stage(mid))
        eval_artifacts = ([f"report_{mid}.json" for mid in MODEL_IDS]
                          + ["report.tsv", "report.txt", "sentences.tsv",
                             "report_pp.png", "report_deltas.png",
                             "balanced.txt", "balanced.json"])
        self.run_stage("eval", eval_artifacts, self._do_eval)
        return self.out


def run_pipeline(cfg: PipelineConfig, workers: int = 1) -> Path:
    """Programmatic entry point for the full pipeline."""
    return Pipeline(cfg, workers=workers).run()


# ----- subcommands ------------------------------------------------------


def cmd_audit(args) -> int:
    audit = pronoun_audit(read_corpus(args.corpus))
    print(audit.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = audit.to_dict()
        payload["metadata"] = {"corpus_sha256": sha256_file(args.corpus)}
        _write_json(out / "audit.json", payload)
        save_audit_figure(audit, out / "pronoun_share.png")
        logger.info("wrote %s", out / "audit.json")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
    synth = cfg.synth
    if args.male_sentences is not None:
        synth = replace(synth, male_context_sentences=args.male_sentences)
    if args.female_ratio is not None:
        synth = replace(synth, female_ratio=args.female_ratio)
    if args.stereotype_strength is not None:
        synth = replace(synth, stereotype_strength=args.stereotype_strength)
    text = synth_corpus(synth)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "corpus.txt"
        path.write_text(text, encoding="utf-8")
        print(path)
    else:
        sys.stdout.write(text)
    return 0


def cmd_train_embed(args) -> int:
    cfg = load_config(args.config, args.profile, args.seed, args.out)
    corpus = args.corpus or cfg.corpus
    if corpus is None:
        raise ConfigurationError("no corpus given (use --corpus or the config file)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentences = read_corpus(corpus)
    vocab = build_vocab(sentences, min_count=cfg.embed.min_count)
    ids = encode(sentences, vocab)
    emb, log = train_cbow_logged(ids, vocab, cfg.embed, workers=args.workers)
    vocab.save_text(out / "vocab.txt")
    save_text(emb, out / "embedding.txt")
    _write_json(out / "embed_log.json", {
        "log": log.to_dict(),
        "metadata": {"config_hash": config_hash(asdict(cfg.embed)),
                     "seed": cfg.embed.seed,
                     "corpus_sha256": sha256_file(corpus)},
    })
    print(out / "embedding.txt")
    return 0


def cmd_debias(args) -> int:
    emb = normalize_rows(load_text(args.embedding))
    sets = WordSets(
        definitional_pairs=(wordlists.read_pair_list(args.definitional_pairs)
                            if args.definitional_pairs
                            else wordlists.default_pair_list("definitional_pairs")),
        equality_pairs=(wordlists.read_pair_list(args.equality_pairs)
                        if args.equality_pairs
                        else wordlists.default_pair_list("equality_pairs")),
        neutral_words=(set(wordlists.read_word_list(args.neutral_words))
                       if args.neutral_words else None),
    )
    debiased, sub = debias_all(emb, sets, equalize_pairs=not args.no_equalize)
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    save_text(debiased, out / "embedding_debiased.txt")
    if sets.neutral_words is None:
        gendered = sets.gendered_words()
        neutral = [w for w in debiased.words if w not in gendered]
    else:
        neutral = sorted(sets.neutral_words)
    _write_json(out / "subspace.json", {
        "explained_variance_ratio": sub.explained_variance_ratio,
        "max_neutral_projection": max_projection(debiased, neutral, sub),
        "equalize": not args.no_equalize,
        "metadata": {"embedding_sha256": sha256_file(args.embedding)},
    })
    print(out / "embedding_debiased.txt")
    return 0


def cmd_train_lm(args) -> int:
    cfg = load_config(args.config, args.profile, args.seed, args.out)
    corpus = args.corpus or cfg.corpus
    if corpus is None:
        raise ConfigurationError("no corpus given (use --corpus or the config file)")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentences = read_corpus(corpus)
    vocab = build_vocab(sentences, min_count=cfg.embed.min_count)
    ids = encode(sentences, vocab)
    lm_cfg = replace(cfg.lm, embedding_mode=args.mode)
    pretrained = None
    if args.mode == "frozen":
        if not args.embedding:
            raise ConfigurationError("--embedding is required with --mode frozen")
        pretrained = load_text(args.embedding)
    model_id = args.model_id or args.mode
    model = init_model(lm_cfg, vocab, pretrained)
    stats = train(model, ids)
    save_checkpoint(model, out / f"lm_{model_id}.npz")
    _write_json(out / f"stats_{model_id}.json", {
        "model_id": model_id,
        "stats": stats.to_dict(),
        "metadata": {"config_hash": config_hash(asdict(lm_cfg)),
                     "seed": lm_cfg.seed,
                     "corpus_sha256": sha256_file(corpus)},
    })
    print(out / f"lm_{model_id}.npz")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config, args.profile, args.seed, args.out)
    if not args.model:
        raise ConfigurationError("at least one --model NAME=CHECKPOINT is required")
    models = {}
    for item in args.model:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigurationError(f"--model expects NAME=CHECKPOINT, got {item!r}")
        models[name] = load_checkpoint(path)
    vocab_sha = _check_shared_vocab(models)

    if args.testset_dir:
        testsets = []
        for i in range(1, 7):
            path = Path(args.testset_dir) / f"test{i}.txt"
            if path.exists():
                testsets.append(read_testset_file(path, i))
        if not testsets:
            raise ConfigurationError(
                f"no test1.txt..test6.txt files in {args.testset_dir}")
    else:
        testsets = generate_testsets(_bundle(cfg))

    bias_name = args.bias or ("frozen_biased" if "frozen_biased" in models else None)
    debias_name = args.debias or ("frozen_debiased" if "frozen_debiased" in models
                                  else None)
    comparison = None
    if bias_name and debias_name:
        for name in (bias_name, debias_name):
            if name not in models:
                raise ConfigurationError(f"comparison model {name!r} not supplied")
        comparison = compare_models(models[bias_name], models[debias_name],
                                    [ts for ts in testsets
                                     if ts.id in COMPARISON_TESTS])

    decimal_sep = args.decimal_sep or cfg.decimal_sep
    reports = []
    for name in sorted(models):
        results = evaluate_model(models[name], testsets)
        sentences = ()
        if comparison is not None and name == debias_name:
            sentences = comparison.all_sentences()
        metadata = {"model_id": name, "vocab_sha256": vocab_sha,
                    "seed": models[name].config.seed,
                    "lm_config": asdict(models[name].config)}
        reports.append(build_report(name, results, sentences, metadata))

    balanced = None
    balanced_path = args.balanced_corpus or cfg.balanced_corpus
    if balanced_path:
        text = Path(balanced_path).read_text(encoding="utf-8")
        balanced = {name: balanced_eval(models[name], text)
                    for name in sorted(models)}
    out = Path(cfg.out_dir)
    write_report_files(out, reports, comparison, balanced, decimal_sep)
    if balanced is not None:
        _write_json(out / "balanced.json", {
            "models": {name: ev.to_dict() for name, ev in balanced.items()},
            "metadata": {"vocab_sha256": vocab_sha,
                         "balanced_corpus_sha256": sha256_file(balanced_path)},
        })
    print(report_text(reports, comparison, balanced, decimal_sep), end="")
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, args.profile, args.seed, args.out)
    out = run_pipeline(cfg, workers=args.workers)
    print(f"pipeline complete: {out}")
    print((out / "report.txt").read_text(encoding="utf-8"), end="")
    return 0


# ----- parser -----------------------------------------------------------


def _add_common(sp, profile: bool = True) -> None:
    sp.add_argument("--config", default=None, help="JSON config file")
    sp.add_argument("--seed", type=int, default=None, help="global seed override")
    if profile:
        sp.add_argument("--profile", choices=("desk", "paper"), default=None)
    sp.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lmbias",
        description="Measure gender bias in LSTM language models via "
                    "perplexity asymmetry on stereotype-swap test sets.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log stage progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("audit", help="count gendered pronouns in a corpus")
    sp.add_argument("corpus", help="UTF-8 text file, one sentence per line")
    sp.add_argument("--out", default=None,
                    help="also write audit.json and pronoun_share.png here")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("synth", help="generate a synthetic imbalanced corpus")
    _add_common(sp, profile=False)
    sp.add_argument("--male-sentences", type=int, default=None)
    sp.add_argument("--female-ratio", type=float, default=None)
    sp.add_argument("--stereotype-strength", type=float, default=None)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train-embed", help="train CBOW embeddings on a corpus")
    _add_common(sp)
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--workers", type=int, default=1,
                    help=">1 trades determinism for speed")
    sp.set_defaults(func=cmd_train_embed)

    sp = sub.add_parser("debias", help="hard-debias an embedding file")
    sp.add_argument("embedding", help="embedding text file")
    sp.add_argument("--definitional-pairs", default=None)
    sp.add_argument("--equality-pairs", default=None)
    sp.add_argument("--neutral-words", default=None)
    sp.add_argument("--no-equalize", action="store_true",
                    help="skip the equalize step")
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_debias)

    sp = sub.add_parser("train-lm", help="train an LSTM language model")
    _add_common(sp)
    sp.add_argument("--corpus", default=None)
    sp.add_argument("--mode", choices=("learned", "frozen"), default="learned")
    sp.add_argument("--embedding", default=None,
                    help="pre-trained embedding file (frozen mode)")
    sp.add_argument("--model-id", default=None,
                    help="label for checkpoint/stat files (default: mode)")
    sp.set_defaults(func=cmd_train_lm)

    sp = sub.add_parser("eval", help="evaluate checkpoints on the test sets")
    _add_common(sp)
    sp.add_argument("--model", action="append", default=[],
                    metavar="NAME=CHECKPOINT")
    sp.add_argument("--testset-dir", default=None,
                    help="directory with test1.txt..test6.txt (default: generate)")
    sp.add_argument("--balanced-corpus", default=None)
    sp.add_argument("--bias", default=None,
                    help="model name for the biased side of the sentence table")
    sp.add_argument("--debias", default=None,
                    help="model name for the debiased side of the sentence table")
    sp.add_argument("--decimal-sep", choices=(".", ","), default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("pipeline", help="run the full experiment end to end")
    _add_common(sp)
    sp.add_argument("--workers", type=int, default=1,
                    help="CBOW worker threads (>1 is nondeterministic)")
    sp.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except _INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
