"""Report rendering: JSON, TSV, aligned text tables, and PNG figures.

Every textual artifact is deterministic for identical inputs (sorted
keys, no timestamps), so pipeline reruns are byte-identical.  Figures
are rendered with the Agg backend next to the delimited output.
"""

from __future__ import annotations

import json
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .corpus import PronounAudit  # noqa: E402
from .evalsuite import (BalancedEval, BiasReport, ComparisonResult,  # noqa: E402
                        INCREMENT_PAIRS, format_increment, format_pp)

_PNG_METADATA = {"Software": "lmbias"}


def _signed(value: float, places: str = "0.1", decimal_sep: str = ".") -> str:
    q = Decimal(float(value)).quantize(Decimal(places), rounding=ROUND_HALF_UP)
    text = ("+" if q > 0 else "") + str(q)
    return text.replace(".", decimal_sep)


def _table(rows: list[list[str]], indent: str = "") -> str:
    """Align columns: first left-justified, the rest right-justified."""
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for row in rows:
        cells = [row[0].ljust(widths[0])]
        cells += [row[c].rjust(widths[c]) for c in range(1, len(row))]
        lines.append((indent + "  ".join(cells)).rstrip())
    return "\n".join(lines)


def report_json(report: BiasReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def reports_tsv(reports: list[BiasReport]) -> str:
    lines = ["model_id\ttest_id\tpp\tn_tokens"]
    for rep in reports:
        for res in rep.per_test:
            lines.append(f"{rep.model_id}\t{res.id}\t{res.pp!r}\t{res.n_tokens}")
    return "\n".join(lines) + "\n"


def sentences_tsv(comparison: ComparisonResult) -> str:
    lines = ["test_id\tsentence\tpp_bias\tpp_debias\tdelta"]
    for tid in sorted(comparison.per_test):
        for s in comparison.per_test[tid]:
            lines.append(f"{tid}\t{s.text}\t{s.pp_bias!r}\t{s.pp_debias!r}"
                         f"\t{s.delta!r}")
    return "\n".join(lines) + "\n"


def report_text(reports: list[BiasReport],
                comparison: ComparisonResult | None = None,
                balanced: dict[str, BalancedEval] | None = None,
                decimal_sep: str = ".") -> str:
    """Human-readable aligned rendering of everything in one page."""
    sections = []

    test_ids = sorted({r.id for rep in reports for r in rep.per_test})
    header = (["model"] + [f"t{i}" for i in test_ids]
              + [f"t{b}/t{a}" for _, (a, b) in sorted(INCREMENT_PAIRS.items(),
                                                      key=lambda kv: kv[1])])
    rows = [header]
    for rep in reports:
        by_id = {r.id: r.pp for r in rep.per_test}
        row = [rep.model_id]
        row += [format_pp(by_id[i], decimal_sep) if i in by_id else "-"
                for i in test_ids]
        for key in sorted(INCREMENT_PAIRS, key=lambda k: INCREMENT_PAIRS[k]):
            inc = rep.increments.get(key)
            row.append("-" if inc is None else format_increment(inc, decimal_sep))
        rows.append(row)
    sections.append("test-set perplexity\n" + _table(rows))

    if comparison is not None and comparison.per_test:
        rows = [["sentence", "biased", "debiased", "delta"]]
        for tid in sorted(comparison.per_test):
            for s in comparison.per_test[tid]:
                rows.append([s.text,
                             format_pp(s.pp_bias, decimal_sep),
                             format_pp(s.pp_debias, decimal_sep),
                             _signed(s.delta, "0.1", decimal_sep)])
        mean_rows = [["test set", "mean delta"]]
        for tid, mean in sorted(comparison.mean_delta.items()):
            mean_rows.append([f"t{tid}", _signed(mean, "0.1", decimal_sep)])
        sections.append("sentence perplexity, biased vs debiased\n"
                        + _table(rows) + "\n\n" + _table(mean_rows))

    if balanced:
        rows = [["model", "pp", "n_tokens", "female_share"]]
        for model_id in sorted(balanced):
            ev = balanced[model_id]
            share = ev.audit.female_share
            rows.append([model_id, format_pp(ev.pp, decimal_sep),
                         str(ev.n_tokens),
                         "-" if share is None else f"{share:.3f}".replace(".", decimal_sep)])
        sections.append("balanced corpus perplexity\n" + _table(rows))

    return "\n\n".join(sections) + "\n"


def save_pp_figure(reports: list[BiasReport], path: str | Path) -> None:
    """Grouped bars: per-test perplexity for each model."""
    test_ids = sorted({r.id for rep in reports for r in rep.per_test})
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(1, len(reports))
    for k, rep in enumerate(reports):
        by_id = {r.id: r.pp for r in rep.per_test}
        xs = [i + k * width for i in range(len(test_ids))]
        ys = [by_id.get(t, 0.0) for t in test_ids]
        ax.bar(xs, ys, width=width, label=rep.model_id)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(test_ids))])
    ax.set_xticklabels([f"test {t}" for t in test_ids])
    ax.set_ylabel("perplexity")
    ax.set_title("test-set perplexity by model")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_delta_figure(comparison: ComparisonResult, path: str | Path) -> None:
    """Mean per-sentence PP delta (debiased minus biased) per test set."""
    means = comparison.mean_delta
    tids = sorted(means)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(tids)), [means[t] for t in tids], color="tab:purple")
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(tids)))
    ax.set_xticklabels([f"test {t}" for t in tids])
    ax.set_ylabel("mean PP delta (debiased - biased)")
    ax.set_title("debiasing effect per test set")
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def save_audit_figure(audit: PronounAudit, path: str | Path) -> None:
    """Two-bar male/female pronoun totals with the share in the title."""
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.bar([0, 1], [audit.male_total, audit.female_total],
           color=["tab:blue", "tab:orange"])
    ax.set_xticks([0, 1])
    ax.set_xticklabels(["male", "female"])
    ax.set_ylabel("pronoun occurrences")
    share = audit.female_share
    title = "pronoun counts"
    if share is not None:
        title += f" (female share {share:.3f})"
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_METADATA)
    plt.close(fig)


def write_report_files(out_dir: str | Path, reports: list[BiasReport],
                       comparison: ComparisonResult | None = None,
                       balanced: dict[str, BalancedEval] | None = None,
                       decimal_sep: str = ".") -> list[Path]:
    """Write the full report bundle; returns the created paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rep in reports:
        p = out_dir / f"report_{rep.model_id}.json"
        p.write_text(report_json(rep), encoding="utf-8")
        paths.append(p)
    p = out_dir / "report.tsv"
    p.write_text(reports_tsv(reports), encoding="utf-8")
    paths.append(p)
    p = out_dir / "report.txt"
    p.write_text(report_text(reports, comparison, balanced, decimal_sep),
                 encoding="utf-8")
    paths.append(p)
    if comparison is not None and comparison.per_test:
        p = out_dir / "sentences.tsv"
        p.write_text(sentences_tsv(comparison), encoding="utf-8")
        paths.append(p)
        p = out_dir / "report_deltas.png"
        save_delta_figure(comparison, p)
        paths.append(p)
    if reports:
        p = out_dir / "report_pp.png"
        save_pp_figure(reports, p)
        paths.append(p)
    return paths
