"""Command-line interface: subcommands, exit codes, the end-to-end
pipeline, and content-addressed stage resumption.

Everything runs in-process through main(argv) except one subprocess
smoke test, so coverage and debuggers see the command code.
"""

import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

import jsonschema

from lmbias.cli import main
from lmbias.corpus import tokenize
from lmbias.embeddings import EmbeddingMatrix, load_text, normalize_rows, save_text
from lmbias.evalsuite import SynthConfig, synth_corpus
from lmbias.lm import load_checkpoint, save_checkpoint

from helpers import two_group_sentences, uniform_model

TINY_PIPELINE = {
    "synth": {"male_context_sentences": 40, "female_ratio": 0.5},
    "embed": {"dim": 16, "epochs": 1, "window": 3},
    "lm": {"layers": 1, "hidden": 16, "emb_dim": 16, "seq_len": 10,
           "batch": 5, "epochs": 1, "dropout": 0.0},
}

PIPELINE_ARTIFACTS = [
    "corpus.txt", "audit.json", "pronoun_share.png",
    "vocab.txt", "embedding.txt", "embed_log.json",
    "embedding_norm.txt", "embedding_debiased.txt", "subspace.json",
    "test1.txt", "test2.txt", "test3.txt", "test4.txt", "test5.txt",
    "test6.txt",
    "lm_learned.npz", "stats_learned.json",
    "lm_frozen_biased.npz", "stats_frozen_biased.json",
    "lm_frozen_debiased.npz", "stats_frozen_debiased.json",
    "report_learned.json", "report_frozen_biased.json",
    "report_frozen_debiased.json",
    "report.tsv", "report.txt", "sentences.tsv",
    "report_pp.png", "report_deltas.png",
    "balanced.txt", "balanced.json",
]


def write_corpus(path, sentences):
    path.write_text("".join(" ".join(s) + "\n" for s in sentences),
                    encoding="utf-8")
    return path


def mtimes(out, names):
    return {name: (out / name).stat().st_mtime_ns for name in names}


@pytest.fixture(scope="module")
def pipe(tmp_path_factory):
    """One tiny full pipeline run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("pipe")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(TINY_PIPELINE), encoding="utf-8")
    out = root / "out"
    rc = main(["pipeline", "--config", str(cfg_path), "--seed", "3",
               "--out", str(out)])
    assert rc == 0
    return cfg_path, out


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus") / "small.txt"
    return write_corpus(path, two_group_sentences(repeats=20))


# --- audit --------------------------------------------------------------


def test_audit_prints_counts(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("he went home\nshe came back\nshe read\n")
    assert main(["audit", str(corpus)]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["male_total"] == 1
    assert data["female_total"] == 2
    assert data["female_share"] == pytest.approx(2.0 / 3.0)


def test_audit_writes_artifacts(tmp_path, capsys):
    corpus = tmp_path / "c.txt"
    corpus.write_text("his dog barked\nher cat slept\n")
    out = tmp_path / "auditout"
    assert main(["audit", str(corpus), "--out", str(out)]) == 0
    capsys.readouterr()
    data = json.loads((out / "audit.json").read_text())
    assert data["male_total"] == data["female_total"] == 1
    assert "corpus_sha256" in data["metadata"]
    assert (out / "pronoun_share.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_audit_missing_file_exits_2(tmp_path, capsys):
    missing = tmp_path / "absent.txt"
    assert main(["audit", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


# --- synth --------------------------------------------------------------


def test_synth_stdout_matches_library(capsys):
    assert main(["synth", "--male-sentences", "5",
                 "--female-ratio", "1.0"]) == 0
    out = capsys.readouterr().out
    assert out == synth_corpus(SynthConfig(male_context_sentences=5,
                                           female_ratio=1.0, seed=1))


def test_synth_writes_corpus_with_requested_composition(tmp_path, capsys):
    out = tmp_path / "synthout"
    assert main(["synth", "--male-sentences", "600", "--female-ratio", "0.2",
                 "--out", str(out), "--seed", "2"]) == 0
    assert capsys.readouterr().out.strip() == str(out / "corpus.txt")
    sentences = tokenize((out / "corpus.txt").read_bytes())
    assert len(sentences) == 720
    # One gendered token per sentence: the share is 120/720.
    assert main(["audit", str(out / "corpus.txt")]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["female_total"] == 120
    assert data["female_share"] == pytest.approx(1.0 / 6.0)


def test_synth_rejects_bad_ratio(capsys):
    assert main(["synth", "--female-ratio", "7"]) == 2
    assert "female_ratio" in capsys.readouterr().err


# --- train-embed --------------------------------------------------------


def test_train_embed_is_deterministic(tmp_path, tiny_corpus, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"embed": {"dim": 8, "epochs": 2, "window": 2,
                                         "negatives": 3}}))
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["train-embed", "--config", str(cfg),
                     "--corpus", str(tiny_corpus), "--out", str(out)]) == 0
        assert capsys.readouterr().out.strip() == str(out / "embedding.txt")
        outs.append(out)
    a, b = outs
    assert (a / "embedding.txt").read_bytes() == (b / "embedding.txt").read_bytes()
    assert (a / "vocab.txt").read_bytes() == (b / "vocab.txt").read_bytes()
    log = json.loads((a / "embed_log.json").read_text())
    assert len(log["log"]["epoch_losses"]) == 2
    assert "corpus_sha256" in log["metadata"]


def test_train_embed_requires_a_corpus(capsys):
    assert main(["train-embed"]) == 2
    assert "no corpus given" in capsys.readouterr().err


def test_train_embed_divergence_exits_3(tmp_path, tiny_corpus, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"embed": {"dim": 8, "epochs": 1,
                                         "learning_rate": 1e12}}))
    with np.errstate(all="ignore"):
        rc = main(["train-embed", "--config", str(cfg),
                   "--corpus", str(tiny_corpus), "--out", str(tmp_path / "o")])
    assert rc == 3
    assert "error:" in capsys.readouterr().err


# --- debias -------------------------------------------------------------


PAIR_WORDS = ["she", "he", "her", "his", "woman", "man", "herself",
              "himself", "daughter", "son", "mother", "father", "girl",
              "boy", "female", "male"]
NEUTRAL_WORDS = ["doctor", "nurse", "engineer", "teacher"]


@pytest.fixture()
def embedding_file(tmp_path):
    rng = np.random.default_rng(8)
    words = PAIR_WORDS + NEUTRAL_WORDS
    vectors = rng.standard_normal((len(words), 10))
    vectors /= np.linalg.norm(vectors, axis=1)[:, None]
    path = tmp_path / "emb.txt"
    save_text(EmbeddingMatrix(words=words, vectors=vectors, normalized=True),
              path)
    return path


def test_debias_zeroes_neutral_projections(tmp_path, embedding_file, capsys):
    out = tmp_path / "deb"
    assert main(["debias", str(embedding_file), "--out", str(out)]) == 0
    assert capsys.readouterr().out.strip() == str(out / "embedding_debiased.txt")
    sub = json.loads((out / "subspace.json").read_text())
    assert 0.0 < sub["explained_variance_ratio"] <= 1.0
    assert sub["max_neutral_projection"] <= 1e-9
    assert sub["equalize"] is True
    debiased = load_text(out / "embedding_debiased.txt")
    assert debiased.words == PAIR_WORDS + NEUTRAL_WORDS


def test_debias_no_equalize_passes_pairs_through(tmp_path, embedding_file,
                                                 capsys):
    out = tmp_path / "deb"
    assert main(["debias", str(embedding_file), "--no-equalize",
                 "--out", str(out)]) == 0
    capsys.readouterr()
    expected = normalize_rows(load_text(embedding_file))
    debiased = load_text(out / "embedding_debiased.txt")
    for word in PAIR_WORDS:
        assert np.array_equal(debiased.row(word), expected.row(word)), word
    sub = json.loads((out / "subspace.json").read_text())
    assert sub["equalize"] is False


def test_debias_missing_embedding_exits_2(tmp_path, capsys):
    assert main(["debias", str(tmp_path / "none.txt")]) == 2
    assert "error:" in capsys.readouterr().err


# --- train-lm -----------------------------------------------------------


@pytest.fixture(scope="module")
def lm_out(tmp_path_factory, tiny_corpus):
    """train-embed then learned and frozen train-lm on one tiny corpus."""
    root = tmp_path_factory.mktemp("lmcli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps({
        "embed": {"dim": 8, "epochs": 1, "window": 2},
        "lm": {"layers": 1, "hidden": 8, "emb_dim": 8, "seq_len": 10,
               "batch": 4, "epochs": 1, "dropout": 0.0},
    }))
    out = root / "out"
    assert main(["train-embed", "--config", str(cfg),
                 "--corpus", str(tiny_corpus), "--out", str(out)]) == 0
    assert main(["train-lm", "--config", str(cfg),
                 "--corpus", str(tiny_corpus), "--out", str(out)]) == 0
    assert main(["train-lm", "--config", str(cfg),
                 "--corpus", str(tiny_corpus), "--out", str(out),
                 "--mode", "frozen", "--embedding", str(out / "embedding.txt"),
                 "--model-id", "frozen_biased"]) == 0
    return out


def test_train_lm_writes_checkpoint_and_stats(lm_out):
    model = load_checkpoint(lm_out / "lm_learned.npz")
    assert model.config.embedding_mode == "learned"
    stats = json.loads((lm_out / "stats_learned.json").read_text())
    assert stats["model_id"] == "learned"
    assert len(stats["stats"]["epoch_losses"]) == 1
    assert np.isfinite(stats["stats"]["epoch_losses"][0])


def test_train_lm_frozen_keeps_embedding_rows(lm_out):
    model = load_checkpoint(lm_out / "lm_frozen_biased.npz")
    source = load_text(lm_out / "embedding.txt")
    assert model.config.embedding_mode == "frozen"
    for i, word in enumerate(model.vocab.id_to_word):
        assert np.array_equal(model.params["emb"][i], source.row(word)), word


def test_train_lm_frozen_requires_embedding(tiny_corpus, capsys):
    assert main(["train-lm", "--corpus", str(tiny_corpus),
                 "--mode", "frozen"]) == 2
    assert "--embedding" in capsys.readouterr().err


# --- eval ---------------------------------------------------------------


def test_eval_uniform_checkpoints_report_vocab_size(tmp_path, capsys):
    flat_a, flat_b = uniform_model(12), uniform_model(12)
    path_a, path_b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(flat_a, path_a)
    save_checkpoint(flat_b, path_b)
    balanced = tmp_path / "balanced.txt"
    balanced.write_text("he spoke\nshe spoke\n")
    out = tmp_path / "evalout"
    rc = main(["eval", "--model", f"flat={path_a}", "--model", f"other={path_b}",
               "--bias", "flat", "--debias", "other",
               "--balanced-corpus", str(balanced), "--out", str(out)])
    assert rc == 0
    text = capsys.readouterr().out
    assert "test-set perplexity" in text

    report = json.loads((out / "report_flat.json").read_text())
    for row in report["per_test"]:
        assert row["pp"] == pytest.approx(12.0, abs=1e-9)
    for value in report["increments"].values():
        assert value == pytest.approx(0.0, abs=1e-12)
    # Identical models: every sentence delta is exactly zero.
    sentences = json.loads((out / "report_other.json").read_text())["sentences"]
    assert sentences and all(s["delta"] == 0.0 for s in sentences)
    balanced_data = json.loads((out / "balanced.json").read_text())
    assert balanced_data["models"]["flat"]["pp"] == pytest.approx(12.0, abs=1e-9)
    assert (out / "sentences.tsv").exists()
    assert (out / "report_deltas.png").exists()


def test_eval_requires_models(capsys):
    assert main(["eval"]) == 2
    assert "--model" in capsys.readouterr().err


def test_eval_rejects_malformed_model_argument(tmp_path, capsys):
    assert main(["eval", "--model", "nameonly"]) == 2
    assert "NAME=CHECKPOINT" in capsys.readouterr().err


def test_eval_rejects_mismatched_vocabularies(tmp_path, capsys):
    path_a, path_b = tmp_path / "a.npz", tmp_path / "b.npz"
    save_checkpoint(uniform_model(12), path_a)
    save_checkpoint(uniform_model(14), path_b)
    rc = main(["eval", "--model", f"a={path_a}", "--model", f"b={path_b}",
               "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "vocabulary" in capsys.readouterr().err


def test_eval_missing_checkpoint_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.npz"
    assert main(["eval", "--model", f"a={missing}",
                 "--out", str(tmp_path / "o")]) == 2
    assert "error:" in capsys.readouterr().err


# --- pipeline -----------------------------------------------------------


def test_pipeline_produces_all_artifacts(pipe):
    _, out = pipe
    for name in PIPELINE_ARTIFACTS:
        assert (out / name).exists(), name
    markers = {p.name for p in (out / ".stages").glob("*.json")}
    assert markers == {"corpus.json", "audit.json", "embed.json",
                       "debias.json", "testsets.json", "lm_learned.json",
                       "lm_frozen_biased.json", "lm_frozen_debiased.json",
                       "eval.json"}


def test_pipeline_reports_validate_against_schema(pipe):
    from importlib import resources
    _, out = pipe
    schema = json.loads((resources.files("lmbias") / "data"
                         / "report_schema.json").read_text(encoding="utf-8"))
    for mid in ("learned", "frozen_biased", "frozen_debiased"):
        report = json.loads((out / f"report_{mid}.json").read_text())
        jsonschema.validate(report, schema)
        assert report["model_id"] == mid
        assert [row["id"] for row in report["per_test"]] == [1, 2, 3, 4, 5, 6]


def test_pipeline_audit_reflects_synth_ratio(pipe):
    _, out = pipe
    audit = json.loads((out / "audit.json").read_text())
    assert audit["male_total"] == 40
    assert audit["female_total"] == 20
    assert audit["female_share"] == pytest.approx(1.0 / 3.0)


def test_pipeline_testsets_swap_only_pronouns(pipe):
    _, out = pipe
    for base, swapped, old, new in ((3, 4, "he", "she"), (5, 6, "she", "he")):
        base_sents = tokenize((out / f"test{base}.txt").read_bytes())
        swap_sents = tokenize((out / f"test{swapped}.txt").read_bytes())
        assert swap_sents == [[new if t == old else t for t in s]
                              for s in base_sents]


def test_pipeline_balanced_corpus_is_balanced(pipe):
    _, out = pipe
    balanced = json.loads((out / "balanced.json").read_text())
    assert set(balanced["models"]) == {"learned", "frozen_biased",
                                       "frozen_debiased"}
    for entry in balanced["models"].values():
        assert entry["audit"]["female_share"] == 0.5
        assert entry["pp"] > 1.0


def test_pipeline_rerun_skips_every_stage(pipe, capsys):
    cfg_path, out = pipe
    before = mtimes(out, PIPELINE_ARTIFACTS)
    assert main(["pipeline", "--config", str(cfg_path), "--seed", "3",
                 "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "pipeline complete" in stdout
    assert "test-set perplexity" in stdout
    assert mtimes(out, PIPELINE_ARTIFACTS) == before


def test_pipeline_resumes_eval_only_after_marker_loss(pipe, tmp_path):
    cfg_path, out = pipe
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    (copy / ".stages" / "eval.json").unlink()
    trained = ["lm_learned.npz", "lm_frozen_biased.npz",
               "lm_frozen_debiased.npz", "embedding.txt", "corpus.txt"]
    before = mtimes(copy, trained)
    report_bytes = (copy / "report.tsv").read_bytes()
    assert main(["pipeline", "--config", str(cfg_path), "--seed", "3",
                 "--out", str(copy)]) == 0
    assert mtimes(copy, trained) == before
    assert (copy / ".stages" / "eval.json").exists()
    assert (copy / "report.tsv").read_bytes() == report_bytes


def test_pipeline_decimal_sep_invalidates_only_eval(pipe, tmp_path):
    cfg_path, out = pipe
    copy = tmp_path / "copy"
    shutil.copytree(out, copy)
    cfg2 = tmp_path / "cfg2.json"
    cfg2.write_text(json.dumps({**TINY_PIPELINE, "decimal_sep": ","}))
    trained = ["lm_learned.npz", "lm_frozen_biased.npz",
               "lm_frozen_debiased.npz", "embedding.txt", "corpus.txt",
               "embedding_debiased.txt", "test1.txt"]
    before = mtimes(copy, trained)
    assert main(["pipeline", "--config", str(cfg2), "--seed", "3",
                 "--out", str(copy)]) == 0
    assert mtimes(copy, trained) == before
    report = (copy / "report.txt").read_text()
    assert "," in report and "." not in report
    # Machine-readable TSV keeps the point regardless of the separator.
    assert "." in (copy / "report.tsv").read_text()


def test_pipeline_missing_config_exits_2(tmp_path, capsys):
    assert main(["pipeline", "--config", str(tmp_path / "none.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_pipeline_reruns_are_byte_identical(pipe, tmp_path):
    cfg_path, out = pipe
    out2 = tmp_path / "fresh"
    assert main(["pipeline", "--config", str(cfg_path), "--seed", "3",
                 "--out", str(out2)]) == 0
    # Training logs hold wall-clock epoch timings; everything else is
    # required to be byte-stable.
    timed = {"embed_log.json", "stats_learned.json",
             "stats_frozen_biased.json", "stats_frozen_debiased.json"}
    for name in PIPELINE_ARTIFACTS:
        if name in timed:
            continue
        assert (out / name).read_bytes() == (out2 / name).read_bytes(), name


# --- subprocess smoke test ----------------------------------------------


def test_console_entry_point_runs(tmp_path):
    corpus = tmp_path / "c.txt"
    corpus.write_text("he waved\nshe nodded\n")
    proc = subprocess.run([sys.executable, "-m", "lmbias.cli", "audit",
                           str(corpus)], capture_output=True, text=True)
    assert proc.returncode == 0
    data = json.loads(proc.stdout)
    assert data["male_total"] == 1 and data["female_total"] == 1
