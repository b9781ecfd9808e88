from __future__ import annotations

from collections.abc import Iterable

from curerec import const


def conflict_bucket(cos_psi: float, edge: float = const.CONFLICT_BUCKET_EDGE) -> str:
    if cos_psi < -edge:
        return "conflict"
    if cos_psi > edge:
        return "aligned"
    return "orthogonal"


def conflict_histogram(
    trace,
    edge: float = const.CONFLICT_BUCKET_EDGE,
    *,
    column: str = "cos_psi",
) -> dict[str, int]:
    """Counts of cos(psi) over [-1, -edge), [-edge, edge] and (edge, 1]; undefined values are skipped.

    trace is an AlignmentTrace, read through column, or any iterable of cosines.
    """
    cos_values: Iterable[float | None] = trace.cos_values(column) if hasattr(trace, "cos_values") else trace
    counts = dict.fromkeys(const.CONFLICT_BUCKETS, 0)
    for value in cos_values:
        if value is None:
            continue
        counts[conflict_bucket(float(value), edge)] += 1
    return counts


def bucket_fractions(counts: dict[str, int]) -> dict[str, float]:
    total = sum(counts.values())
    if not total:
        return dict.fromkeys(counts, 0.0)
    return {name: count / total for name, count in counts.items()}
