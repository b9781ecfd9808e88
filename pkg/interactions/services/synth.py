"""
Clustered synthetic interaction data.

Users and items carry latent cluster ids. A user mostly rates items of its own
cluster and likes them, and occasionally rates (and mostly dislikes) items
from other clusters, which gives circuits something learnable to localize.
"""

from __future__ import annotations

import logging

import numpy as np

from curerec.exceptions import ConfigurationError

from .graph import Interaction, InteractionGraph

logger = logging.getLogger(__name__)

INTERACTIONS_PER_USER = 20
P_IN_CLUSTER = 0.6
P_POSITIVE_IN = 0.85
P_POSITIVE_OUT = 0.15


def user_id(idx: int) -> str:
    return f"u{idx:04d}"


def item_id(idx: int) -> str:
    return f"i{idx:04d}"


def item_name(idx: int) -> str:
    return f"item_{idx:04d}"


def synthesize(
    num_users: int,
    num_items: int,
    cluster_count: int,
    seed: int,
    *,
    interactions_per_user: int = INTERACTIONS_PER_USER,
) -> InteractionGraph:
    """Generate a deterministic clustered bipartite graph."""
    if min(num_users, num_items, cluster_count) < 1:
        raise ConfigurationError("num_users, num_items and cluster_count must be >= 1")
    if cluster_count > num_items:
        raise ConfigurationError(
            f"cluster_count {cluster_count} exceeds num_items {num_items}"
        )
    if interactions_per_user < 1:
        raise ConfigurationError("interactions_per_user must be >= 1")

    rng = np.random.default_rng(seed)
    item_clusters = {item_id(i): i % cluster_count for i in range(num_items)}
    user_clusters = {user_id(u): int(rng.integers(cluster_count)) for u in range(num_users)}
    by_cluster = {
        c: np.array([i for i in range(num_items) if i % cluster_count == c])
        for c in range(cluster_count)
    }
    per_user = min(interactions_per_user, num_items)

    interactions: list[Interaction] = []
    for u in range(num_users):
        uid = user_id(u)
        home = user_clusters[uid]
        inside = list(rng.permutation(by_cluster[home]))
        outside = list(
            rng.permutation(np.concatenate([by_cluster[c] for c in range(cluster_count) if c != home]))
            if cluster_count > 1
            else []
        )
        stamps = rng.permutation(per_user)
        for k in range(per_user):
            want_inside = rng.random() < P_IN_CLUSTER
            pool = inside if (want_inside and inside) or not outside else outside
            idx = int(pool.pop())
            same = item_clusters[item_id(idx)] == home
            p_positive = P_POSITIVE_IN if same else P_POSITIVE_OUT
            label = int(rng.random() < p_positive)
            interactions.append(
                Interaction(uid, item_id(idx), label, int(1_000_000 + u * 1_000 + stamps[k]))
            )

    graph = InteractionGraph(
        interactions,
        {item_id(i): item_name(i) for i in range(num_items)},
        users=[user_id(u) for u in range(num_users)],
        items=[item_id(i) for i in range(num_items)],
        user_clusters=user_clusters,
        item_clusters=item_clusters,
    )
    logger.info(
        "Synthesized %d users x %d items in %d clusters (seed %d): %d edges, positive rate %.3f",
        num_users,
        num_items,
        cluster_count,
        seed,
        len(graph),
        graph.positive_rate(),
    )
    return graph
