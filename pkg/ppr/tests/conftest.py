import itertools

import pytest

from interactions.services.graph import Interaction, InteractionGraph
from interactions.services.prompts import PromptSample

TOY_EDGES = [("a", "x"), ("a", "y"), ("b", "y"), ("b", "z"), ("c", "z")]


def toy_graph(edges=TOY_EDGES, *, users=None, items=None):
    interactions = [Interaction(u, i, 1, k) for k, (u, i) in enumerate(edges)]
    names = {i: f"name_{i}" for _, i in edges} | {i: f"name_{i}" for i in items or ()}
    return InteractionGraph(interactions, names, users=users, items=items)


def bare_sample(graph, user, item):
    """Sample carrying only the bookkeeping the retain buffer reads."""
    return PromptSample(
        user=user,
        history=(),
        target=item,
        token_ids=(0,),
        answer="Yes",
        item_spans={},
        edge_id=graph.edge_id(user, item),
    )


@pytest.fixture
def toy():
    """Six nodes on a path: x - a - y - b - z - c."""
    return toy_graph()


def cluster_graph(clusters=4, users=4, items=8, seen=6):
    """Dense clusters joined in a ring by one disliked item per cluster.

    Each user likes `seen` consecutive items of its own cluster, so every user
    leaves some of its cluster unseen.
    """
    interactions, user_clusters, item_clusters = [], {}, {}
    stamps = itertools.count()
    for c in range(clusters):
        own = [f"c{c}i{k}" for k in range(items)]
        item_clusters.update(dict.fromkeys(own, c))
        for u in range(users):
            user = f"c{c}u{u}"
            user_clusters[user] = c
            interactions += [Interaction(user, own[(u + k) % items], 1, next(stamps)) for k in range(seen)]
        interactions.append(Interaction(f"c{c}u0", f"c{(c + 1) % clusters}i0", 0, next(stamps)))
    names = {item: f"name_{item}" for item in item_clusters}
    return InteractionGraph(interactions, names, user_clusters=user_clusters, item_clusters=item_clusters)
