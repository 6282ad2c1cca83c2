"""Acceptance gate: one test per release criterion.

Fast criteria check exact numeric properties (orthogonality, gradient
agreement, perplexity oracles, formatting, determinism).  The two trend
criteria read the shared desk-scale three-regime runs over five seeds
and require each directional finding to hold in at least four of them.
Every test records a one-line verdict that is echoed after the summary.
"""

import time

import numpy as np

from lmbias.cli import run_pipeline
from lmbias.config import make_config
from lmbias.debias import GenderSubspace, WordSets, debias_all, equalize
from lmbias.embeddings import EmbeddingMatrix, cosine, load_text, save_text
from lmbias.evalsuite import (WordListBundle, format_increment,
                              generate_testsets, relative_increment)
from lmbias.lm import LmConfig, grad_check, init_model, perplexity_corpus

from conftest import record_verdict
from helpers import (bigram_machine, make_vocab, random_normalized_embedding,
                     uniform_model)

MODEL_IDS = ("learned", "frozen_biased", "frozen_debiased")


def debiased_fixture(seed: int):
    """500 unit rows in 50 dims with four designated word pairs."""
    emb = random_normalized_embedding(500, 50, seed=seed)
    pairs = [(f"w{2 * i:03d}", f"w{2 * i + 1:03d}") for i in range(4)]
    sets = WordSets(definitional_pairs=pairs, equality_pairs=pairs)
    return emb, pairs, sets


def per_test_pps(report: dict) -> dict[int, float]:
    return {row["id"]: row["pp"] for row in report["per_test"]}


def test_a1_neutralized_words_lose_their_gender_component():
    emb, pairs, sets = debiased_fixture(seed=11)
    t0 = time.perf_counter()
    debiased, sub = debias_all(emb, sets)
    elapsed = time.perf_counter() - t0

    gendered = {w for pair in pairs for w in pair}
    neutral_rows = np.vstack([debiased.row(w) for w in debiased.words
                              if w not in gendered])
    max_proj = float(np.max(np.abs(neutral_rows @ sub.g)))
    norm_dev = float(np.max(np.abs(
        np.linalg.norm(debiased.vectors, axis=1) - 1.0)))

    ok = max_proj <= 1e-9 and norm_dev <= 1e-9 and elapsed < 1.0
    assert record_verdict(
        "A1", ok,
        f"max |w'.g| {max_proj:.1e}, max norm dev {norm_dev:.1e}, "
        f"{elapsed * 1000:.0f} ms")


def test_a2_equalized_pairs_are_equidistant_from_neutral_words():
    emb, pairs, sets = debiased_fixture(seed=12)
    debiased, _ = debias_all(emb, sets)
    gendered = {w for pair in pairs for w in pair}
    neutral = [w for w in debiased.words if w not in gendered]
    probes = np.random.default_rng(0).choice(neutral, size=100, replace=False)
    worst = max(
        abs(cosine(debiased.row(a), debiased.row(w))
            - cosine(debiased.row(b), debiased.row(w)))
        for a, b in pairs for w in probes)

    # Two-dimensional pair worked out by hand: g along the x axis,
    # a = (1, 0), b = (0, 1) re-symmetrize to (±sqrt(3)/2, 1/2).
    axis = GenderSubspace(g=np.array([1.0, 0.0]), explained_variance_ratio=1.0)
    hand = EmbeddingMatrix(words=["a", "b"],
                           vectors=np.array([[1.0, 0.0], [0.0, 1.0]]),
                           normalized=True)
    eq = equalize(hand, [("a", "b")], axis)
    expected_a = np.array([np.sqrt(3.0) / 2.0, 0.5])
    expected_b = np.array([-np.sqrt(3.0) / 2.0, 0.5])
    hand_dev = max(float(np.max(np.abs(eq.row("a") - expected_a))),
                   float(np.max(np.abs(eq.row("b") - expected_b))))

    ok = worst <= 1e-6 and hand_dev <= 1e-6
    assert record_verdict(
        "A2", ok,
        f"max probe cosine gap {worst:.1e}, hand example dev {hand_dev:.1e}")


def test_a3_perplexity_matches_independent_oracles():
    uniform = uniform_model(42)
    rng = np.random.default_rng(7)
    uniform_dev = max(
        abs(perplexity_corpus(uniform, rng.integers(0, 42, n)) - 42.0)
        for n in (50, 137))

    machine, ids, oracle = bigram_machine(["a", "a", "b", "a", "b", "b"])
    rel = abs(perplexity_corpus(machine, ids) - oracle) / oracle

    ok = uniform_dev <= 1e-9 and rel <= 1e-10
    assert record_verdict(
        "A3", ok,
        f"uniform |PP-42| {uniform_dev:.1e}, bigram rel err {rel:.1e}")


def test_a4_analytic_gradients_match_finite_differences():
    vocab = make_vocab(18)
    assert len(vocab) == 20
    cfg = LmConfig(layers=1, hidden=8, emb_dim=8, dropout=0.0, seq_len=5,
                   batch=1, epochs=1, seed=1)
    model = init_model(cfg, vocab)
    ids = np.random.default_rng(1).integers(0, len(vocab), 5)
    t0 = time.perf_counter()
    err = grad_check(model, ids)
    elapsed = time.perf_counter() - t0

    ok = err <= 1e-4 and elapsed < 30.0
    assert record_verdict(
        "A4", ok, f"max rel gradient error {err:.2e}, {elapsed:.1f} s")


def test_a5_imbalanced_training_reproduces_direction_of_bias(acceptance_runs):
    seeds = sorted(acceptance_runs)
    swap_up = debias_shrinks = learned_best = 0
    slowest = 0.0
    for seed in seeds:
        run = acceptance_runs[seed]
        pps = {mid: per_test_pps(run["reports"][mid]) for mid in MODEL_IDS}
        if all(pps[mid][2] > pps[mid][1] for mid in MODEL_IDS):
            swap_up += 1
        incs = {mid: run["reports"][mid]["increments"]["t2_vs_t1"]
                for mid in MODEL_IDS}
        if incs["frozen_debiased"] < incs["frozen_biased"]:
            debias_shrinks += 1
        means = {mid: float(np.mean([pps[mid][t] for t in range(1, 7)]))
                 for mid in MODEL_IDS}
        if min(means, key=means.get) == "learned":
            learned_best += 1
        slowest = max(slowest, run["seconds"])

    n = len(seeds)
    ok = (swap_up >= 4 and debias_shrinks >= 4 and learned_best >= 4
          and slowest <= 600.0)
    assert record_verdict(
        "A5", ok,
        f"female-swap raises PP {swap_up}/{n}, debias shrinks increment "
        f"{debias_shrinks}/{n}, learned lowest mean PP {learned_best}/{n}, "
        f"slowest seed {slowest:.0f} s")


def test_a6_increment_rendering():
    got = (format_increment(relative_increment(204.7, 238.8)),
           format_increment(relative_increment(345.7, 524.6)),
           format_increment(relative_increment(123.4, 123.4)))
    ok = got == ("+0.17", "+0.52", "0.00")
    assert record_verdict("A6", ok, f"rendered {got[0]} {got[1]} {got[2]}")


def test_a7_balanced_corpus_shrinks_the_model_gap(acceptance_runs):
    hits = 0
    for seed in sorted(acceptance_runs):
        run = acceptance_runs[seed]
        pp_b = run["balanced_pp"]["frozen_biased"]
        pp_d = run["balanced_pp"]["frozen_debiased"]
        balanced_gap = abs(pp_b - pp_d) / pp_b
        t2_b = per_test_pps(run["reports"]["frozen_biased"])[2]
        t2_d = per_test_pps(run["reports"]["frozen_debiased"])[2]
        test2_gap = abs(t2_b - t2_d) / t2_b
        hits += balanced_gap < test2_gap

    n = len(acceptance_runs)
    ok = hits >= 4
    assert record_verdict(
        "A7", ok, f"balanced gap below test-2 gap {hits}/{n}")


def test_a8_round_trips_and_byte_identical_reruns(tmp_path):
    emb = random_normalized_embedding(120, 30, seed=3)
    save_text(emb, tmp_path / "emb.txt")
    loaded = load_text(tmp_path / "emb.txt")
    round_trip = float(np.max(np.abs(loaded.vectors - emb.vectors)))
    rt_ok = round_trip <= 1e-6 and loaded.words == emb.words

    tiny = {"synth": {"male_context_sentences": 30, "female_ratio": 0.5},
            "embed": {"dim": 12, "epochs": 1, "window": 3},
            "lm": {"layers": 1, "hidden": 12, "emb_dim": 12, "seq_len": 10,
                   "batch": 5, "epochs": 1, "dropout": 0.0}}
    outs = [run_pipeline(make_config({**tiny, "out_dir": str(tmp_path / name)},
                                     seed=5))
            for name in ("rerun_a", "rerun_b")]
    report_files = ["report_learned.json", "report_frozen_biased.json",
                    "report_frozen_debiased.json", "report.tsv", "report.txt",
                    "sentences.tsv", "balanced.json"]
    bytes_ok = all((outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
                   for name in report_files)

    sets = {ts.id: ts.sentences
            for ts in generate_testsets(WordListBundle.defaults())}
    swap_ok = (
        sets[4] == [["she" if t == "he" else t for t in s] for s in sets[3]]
        and sets[6] == [["he" if t == "she" else t for t in s]
                        for s in sets[5]])

    ok = rt_ok and bytes_ok and swap_ok
    assert record_verdict(
        "A8", ok,
        f"save/load dev {round_trip:.1e}, reports byte-identical "
        f"{bytes_ok}, pronoun swaps token-exact {swap_ok}")
