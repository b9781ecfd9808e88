from __future__ import annotations

import logging
from collections.abc import Sequence

from curerec.exceptions import ConfigurationError
from interactions.services.graph import InteractionGraph, item_node, user_node
from interactions.services.prompts import PromptSample

from .push import DEFAULT_ALPHA, DEFAULT_EPS, push_ppr

logger = logging.getLogger(__name__)


def proximity_scores(
    graph: InteractionGraph,
    forget: Sequence[PromptSample],
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    *,
    swap_alpha: bool = False,
) -> dict[str, float]:
    """Node -> PPR mass when restarting uniformly on forget-edge endpoints."""
    sources = sorted({user_node(s.user) for s in forget} | {item_node(s.target) for s in forget})
    weight = 1.0 / len(sources)
    vector = push_ppr(graph, {node: weight for node in sources}, alpha, eps, swap_alpha=swap_alpha)
    dense = vector.to_dense()
    return {node: float(dense[idx]) for idx, node in enumerate(graph.nodes)}


def select_retain_buffer(
    graph: InteractionGraph,
    forget: Sequence[PromptSample],
    retain_pool: Sequence[PromptSample],
    k: int = 6,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    *,
    swap_alpha: bool = False,
) -> tuple[PromptSample, ...]:
    """Top k*|forget| retained samples by score(user) + score(item)."""
    if k < 1:
        raise ConfigurationError(f"retain buffer multiplier k must be >= 1, got {k}")
    if not forget:
        raise ConfigurationError("forget set is empty")
    if not retain_pool:
        raise ConfigurationError("retain pool is empty")

    size = k * len(forget)
    if size > len(retain_pool):
        logger.warning("Retain buffer of %d exceeds the pool of %d; taking all", size, len(retain_pool))
        size = len(retain_pool)

    scores = proximity_scores(graph, forget, alpha, eps, swap_alpha=swap_alpha)

    def score(sample: PromptSample) -> float:
        return scores.get(user_node(sample.user), 0.0) + scores.get(item_node(sample.target), 0.0)

    ranked = sorted(
        enumerate(retain_pool), key=lambda pair: (-score(pair[1]), pair[1].edge_id or 0, pair[0])
    )
    buffer = tuple(sample for _, sample in ranked[:size])
    logger.info("Selected retain buffer of %d (k=%d, |forget|=%d)", len(buffer), k, len(forget))
    return buffer
