"""
Corrupt prompts for activation patching.

A corrupt prompt replaces one of the most influential history items with an
item that is still inside the user's neighborhood (high personalized PPR mass)
but is among the least relevant of that neighborhood. Of all such single-item
replacements the one that pushes Delta lowest wins.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import torch

from curerec.exceptions import CorruptSampleError, PromptError
from interactions.services.graph import InteractionGraph, item_node
from interactions.services.prompts import PromptSample, PromptTemplate, Vocabulary
from nanorec.services.model import RECORD_GRADS, ModelState, forward

from .push import DEFAULT_TAU, PprVector, PreferenceVector

logger = logging.getLogger(__name__)

TOP_ITEMS = 3
PREFERRED_SIZE = 50
LEAST_RELEVANT = 10


@dataclass(frozen=True)
class CorruptCandidate:
    replaced: str
    replacement: str
    sample: PromptSample
    delta: float
    candidates: int = 0


def _importance_from_grads(sample: PromptSample, grads: torch.Tensor, offset: int) -> dict[str, float]:
    norms = grads.norm(dim=-1)
    importance = {}
    for item in sample.history:
        if item not in sample.item_spans:
            raise PromptError(f"sample for {sample.user} has no span for history item {item}")
        start, end = sample.item_spans[item]
        importance[item] = float(norms[offset + start : offset + end].sum())
    return importance


def item_importances(state: ModelState, samples: Sequence[PromptSample]) -> list[dict[str, float]]:
    """Per-sample S(i): summed per-token norms of dDelta/d(embedding) over each history span."""
    if not samples:
        return []
    record = forward(state, list(samples), RECORD_GRADS)
    return [
        _importance_from_grads(sample, record.embedding_grads[row], record.offsets[row])
        for row, sample in enumerate(samples)
    ]


def item_importance(state: ModelState, sample: PromptSample) -> dict[str, float]:
    return item_importances(state, [sample])[0]


def combine_ppr(
    precomputed: Mapping[str, PprVector],
    importance: Mapping[str, float],
    tau: float = DEFAULT_TAU,
) -> PprVector:
    """Mix per-item vectors with softmax(tau * S) weights."""
    missing = sorted(set(importance) - set(precomputed))
    if missing:
        raise CorruptSampleError(f"no precomputed PPR vector for {missing}")
    preference = PreferenceVector.from_importance(importance, tau)
    first = precomputed[next(iter(preference.weights))]
    mixed = np.zeros(first.size)
    residual = dropped = 0.0
    for item, weight in preference.weights.items():
        vector = precomputed[item]
        mixed[vector.indices] += weight * vector.values
        residual += weight * vector.residual
        dropped += weight * vector.dropped
    return PprVector.from_dense(mixed, first.alpha, first.eps, "combined", residual, dropped)


def least_relevant_items(
    graph: InteractionGraph,
    ppr: PprVector,
    exclude: set[str],
    *,
    preferred: int = PREFERRED_SIZE,
    least: int = LEAST_RELEVANT,
) -> list[str]:
    """The `least` lowest-mass items among the `preferred` highest-mass ones."""
    dense = ppr.to_dense()
    scored = [
        (float(dense[graph.node_index[item_node(item)]]), item)
        for item in sorted(graph.items)
        if item not in exclude
    ]
    scored = [(mass, item) for mass, item in scored if mass > 0]
    if len(scored) < preferred:
        logger.warning(
            "Only %d items carry PPR mass; preferred set shrinks from %d", len(scored), preferred
        )
    top = sorted(scored, key=lambda pair: (-pair[0], pair[1]))[:preferred]
    return [item for _, item in sorted(top, key=lambda pair: (pair[0], pair[1]))[:least]]


def build_corrupt_sample(
    state: ModelState,
    graph: InteractionGraph,
    sample: PromptSample,
    tau: float,
    precomputed: Mapping[str, PprVector],
    *,
    template: PromptTemplate,
    vocab: Vocabulary,
    importance: Mapping[str, float] | None = None,
    top_items: int = TOP_ITEMS,
    preferred: int = PREFERRED_SIZE,
    least: int = LEAST_RELEVANT,
) -> CorruptCandidate:
    """Pick the single-item replacement with the lowest Delta.

    All candidates are scored in one batched forward pass.
    """
    if not sample.history:
        raise CorruptSampleError(f"sample for {sample.user} has an empty history")
    if importance is None:
        importance = item_importance(state, sample)

    ppr = combine_ppr(precomputed, importance, tau)
    replacements = least_relevant_items(
        graph, ppr, set(sample.history) | {sample.target}, preferred=preferred, least=least
    )
    replaced_items = [item for item, _ in sorted(importance.items(), key=lambda kv: (-kv[1], kv[0]))][:top_items]

    candidates: list[tuple[str, str, PromptSample]] = []
    for replaced, replacement in itertools.product(replaced_items, replacements):
        try:
            corrupt = template.with_replacement(sample, replaced, replacement, graph.item_names, vocab)
        except PromptError as exc:
            logger.debug("Skipping replacement %s -> %s: %s", replaced, replacement, exc)
            continue
        candidates.append((replaced, replacement, corrupt))
    if not candidates:
        raise CorruptSampleError(f"no corrupt candidate for user {sample.user} and target {sample.target}")

    with torch.no_grad():
        deltas = forward(state, [c[2] for c in candidates]).delta.tolist()
    best = int(np.argmin(deltas))
    replaced, replacement, corrupt = candidates[best]
    logger.debug(
        "Corrupt sample for %s/%s: %s -> %s (Delta %.4f, %d candidates)",
        sample.user,
        sample.target,
        replaced,
        replacement,
        deltas[best],
        len(candidates),
    )
    return CorruptCandidate(replaced, replacement, corrupt, float(deltas[best]), len(candidates))
