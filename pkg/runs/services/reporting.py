"""
Static report of a run directory: alignment and conflict plots plus a
markdown summary. Output bytes depend only on the inputs.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from curerec import const  # noqa: E402
from curerec.cache_keys import artifact_keys  # noqa: E402
from curerec.exceptions import ReportInputError  # noqa: E402
from evaluation.models import RunRecord  # noqa: E402
from evaluation.services.conflicts import bucket_fractions, conflict_histogram  # noqa: E402
from unlearn.services.runner import AlignmentTrace  # noqa: E402

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("label", "method", "auc", "acc", "logloss", "jsd_forget", "unlearn_wall_seconds", "conflict_rate")

_SVG_STYLE = {
    "svg.hashsalt": "curerec",
    "svg.fonttype": "none",
    "font.size": 9,
}


def load_traces(out_dir: str | Path) -> dict[str, AlignmentTrace]:
    """Every nonempty trace in the run directory, keyed by label."""
    traces = {}
    for path in sorted(Path(out_dir).glob("trace_*.csv")):
        label = path.stem.removeprefix("trace_")
        trace = AlignmentTrace.read_csv(path, label)
        if len(trace):
            traces[label] = trace
        else:
            logger.warning("Trace %s is empty", path)
    if not traces:
        raise ReportInputError(f"no nonempty trace_*.csv in {out_dir}; run `unlearn` first")
    return traces


def _save(figure, path: Path) -> Path:
    figure.savefig(path, format="svg", metadata={"Date": None})
    plt.close(figure)
    return path


def plot_alignment(traces: dict[str, AlignmentTrace], path: Path) -> Path:
    """Normalized alignment with each objective over the steps."""
    with plt.rc_context(_SVG_STYLE):
        figure, axes = plt.subplots(1, 2, figsize=(9, 3.2), sharey=True)
        for label, trace in traces.items():
            frame = trace.to_frame()
            axes[0].plot(frame["step"], pd.to_numeric(frame["A_f"]), label=label)
            axes[1].plot(frame["step"], pd.to_numeric(frame["A_r"]), label=label)
        axes[0].set_title("alignment with forget gradient")
        axes[1].set_title("alignment with retain gradient")
        for ax in axes:
            ax.set_xlabel("step")
            ax.axhline(0.0, color="grey", linewidth=0.5)
        axes[0].legend(loc="best")
        figure.tight_layout()
        return _save(figure, path)


def histograms(traces: dict[str, AlignmentTrace], column: str = "cos_psi") -> dict[str, dict[str, int]]:
    return {label: conflict_histogram(trace, column=column) for label, trace in traces.items()}


def plot_conflicts(counts: dict[str, dict[str, int]], path: Path, title: str = "") -> Path:
    """Grouped bars of the cos(psi) bucket fractions per method."""
    labels = list(counts)
    width = 0.8 / max(len(labels), 1)
    with plt.rc_context(_SVG_STYLE):
        figure, ax = plt.subplots(figsize=(6, 3.2))
        for offset, label in enumerate(labels):
            fractions = bucket_fractions(counts[label])
            xs = [i + offset * width for i in range(len(const.CONFLICT_BUCKETS))]
            ax.bar(xs, [fractions[b] for b in const.CONFLICT_BUCKETS], width=width, label=label)
        ax.set_xticks([i + width * (len(labels) - 1) / 2 for i in range(len(const.CONFLICT_BUCKETS))])
        ax.set_xticklabels(
            [
                f"cos < -{const.CONFLICT_BUCKET_EDGE}",
                f"|cos| <= {const.CONFLICT_BUCKET_EDGE}",
                f"cos > {const.CONFLICT_BUCKET_EDGE}",
            ]
        )
        ax.set_ylabel("fraction of steps")
        if title:
            ax.set_title(title)
        ax.legend(loc="best")
        figure.tight_layout()
        return _save(figure, path)


def metrics_rows(out_dir: Path) -> list[dict]:
    """Rows from the database, falling back to metrics_*.json files."""
    records = RunRecord.objects.filter(run_dir=str(out_dir))
    if records.exists():
        return [record.as_row() for record in records]
    rows = []
    for path in sorted(out_dir.glob("metrics_*.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        rows.append({column: payload.get(column) for column in SUMMARY_COLUMNS})
    return rows


def _cell(value) -> str:
    if value is None or (isinstance(value, float) and pd.isna(value)):
        return "-"
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def _bucket_table(title: str, counts: dict[str, dict[str, int]]) -> list[str]:
    lines = ["", f"## {title}", "", "| trace | " + " | ".join(const.CONFLICT_BUCKETS) + " |"]
    lines.append("|" + "---|" * (len(const.CONFLICT_BUCKETS) + 1))
    for label, bucket in counts.items():
        lines.append(f"| {label} | " + " | ".join(str(bucket[b]) for b in const.CONFLICT_BUCKETS) + " |")
    return lines


def summary_markdown(
    rows: list[dict],
    counts: dict[str, dict[str, int]],
    raw_counts: dict[str, dict[str, int]] | None = None,
) -> str:
    lines = ["# Run summary", ""]
    if rows:
        lines += ["| " + " | ".join(SUMMARY_COLUMNS) + " |", "|" + "---|" * len(SUMMARY_COLUMNS)]
        lines += ["| " + " | ".join(_cell(row.get(c)) for c in SUMMARY_COLUMNS) + " |" for row in rows]
    else:
        lines.append("No evaluated models; run `eval` for the metric table.")
    lines += _bucket_table("cos(psi) buckets", counts)
    plots = "alignment.svg, conflicts.svg"
    if raw_counts is not None:
        lines += _bucket_table("cos(psi) buckets before projection", raw_counts)
        plots += ", conflicts_raw.svg"
    lines += ["", f"Plots: {plots}", ""]
    return "\n".join(lines)


def build_report(out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    keys = artifact_keys.run(out_dir)
    traces = load_traces(out_dir)
    counts = histograms(traces)
    raw_counts = histograms(traces, "cos_psi_raw")
    written = [
        plot_alignment(traces, keys.plot("alignment")),
        plot_conflicts(counts, keys.plot("conflicts"), "applied update"),
        plot_conflicts(raw_counts, keys.plot("conflicts_raw"), "before projection"),
    ]
    summary = summary_markdown(metrics_rows(out_dir), counts, raw_counts)
    keys.summary().write_text(summary, encoding="utf-8")
    written.append(keys.summary())
    logger.info("Report written to %s (%d traces)", out_dir, len(traces))
    return written
