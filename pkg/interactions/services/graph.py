from __future__ import annotations

from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from functools import cached_property

from curerec.cache_keys import content_hash
from curerec.exceptions import DataError


def user_node(user: str) -> str:
    return f"u:{user}"


def item_node(item: str) -> str:
    return f"i:{item}"


@dataclass(frozen=True, order=True)
class Interaction:
    """One binarized user-item rating."""

    user: str
    item: str
    label: int
    timestamp: int

    @property
    def key(self) -> tuple[str, str]:
        return (self.user, self.item)


class InteractionGraph:
    """Bipartite user-item graph with binary labels.

    Edges are kept sorted by (user, item); an edge id is its index in that
    order, which makes split manifests replayable across processes.
    """

    def __init__(
        self,
        interactions: Iterable[Interaction],
        item_names: Mapping[str, str],
        *,
        users: Iterable[str] | None = None,
        items: Iterable[str] | None = None,
        user_clusters: Mapping[str, int] | None = None,
        item_clusters: Mapping[str, int] | None = None,
    ):
        edges = sorted(interactions, key=lambda e: e.key)
        self.users: frozenset[str] = frozenset(users if users is not None else (e.user for e in edges))
        self.items: frozenset[str] = frozenset(items if items is not None else (e.item for e in edges))
        self.item_names: dict[str, str] = dict(item_names)
        self.user_clusters: dict[str, int] = dict(user_clusters or {})
        self.item_clusters: dict[str, int] = dict(item_clusters or {})

        seen: set[tuple[str, str]] = set()
        for edge in edges:
            if edge.label not in (0, 1):
                raise DataError(f"label must be 0 or 1, got {edge.label!r} for {edge.key}")
            if edge.key in seen:
                raise DataError(f"duplicate interaction {edge.key}")
            if edge.user not in self.users or edge.item not in self.items:
                raise DataError(f"edge endpoint missing from node sets: {edge.key}")
            seen.add(edge.key)

        self.edges: tuple[Interaction, ...] = tuple(edges)
        self._edge_ids = {e.key: idx for idx, e in enumerate(self.edges)}

    def __len__(self) -> int:
        return len(self.edges)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InteractionGraph):
            return NotImplemented
        return self.graph_hash == other.graph_hash

    def __hash__(self) -> int:
        return hash(self.graph_hash)

    @cached_property
    def adjacency(self) -> dict[str, tuple[str, ...]]:
        """Undirected neighbor lists keyed by prefixed node id."""
        adj: dict[str, list[str]] = defaultdict(list)
        for edge in self.edges:
            adj[user_node(edge.user)].append(item_node(edge.item))
            adj[item_node(edge.item)].append(user_node(edge.user))
        return {node: tuple(sorted(adj.get(node, ()))) for node in self.nodes}

    @cached_property
    def nodes(self) -> tuple[str, ...]:
        """Users first, then items; the index order used by PPR vectors."""
        return tuple(
            [user_node(u) for u in sorted(self.users)]
            + [item_node(i) for i in sorted(self.items)]
        )

    @cached_property
    def node_index(self) -> dict[str, int]:
        return {node: idx for idx, node in enumerate(self.nodes)}

    @cached_property
    def graph_hash(self) -> str:
        return content_hash(
            {
                "edges": [[e.user, e.item, e.label, e.timestamp] for e in self.edges],
                "users": sorted(self.users),
                "items": sorted(self.items),
                "names": sorted(self.item_names.items()),
            }
        )

    @cached_property
    def _by_user(self) -> dict[str, list[Interaction]]:
        grouped: dict[str, list[Interaction]] = defaultdict(list)
        for edge in self.edges:
            grouped[edge.user].append(edge)
        return grouped

    @cached_property
    def _by_item(self) -> dict[str, list[Interaction]]:
        grouped: dict[str, list[Interaction]] = defaultdict(list)
        for edge in self.edges:
            grouped[edge.item].append(edge)
        return grouped

    def edge_id(self, user: str, item: str) -> int:
        return self._edge_ids[(user, item)]

    def has_edge(self, user: str, item: str) -> bool:
        return (user, item) in self._edge_ids

    def user_edges(self, user: str) -> list[Interaction]:
        return list(self._by_user.get(user, ()))

    def item_edges(self, item: str) -> list[Interaction]:
        return list(self._by_item.get(item, ()))

    def history(self, user: str, *, exclude: str | None = None) -> list[str]:
        """Positively labeled items of a user, oldest first."""
        positives = [
            e for e in self._by_user.get(user, ()) if e.label == 1 and e.item != exclude
        ]
        positives.sort(key=lambda e: (e.timestamp, e.item))
        return [e.item for e in positives]

    def subgraph(self, edge_ids: Iterable[int]) -> InteractionGraph:
        """Graph over the same node sets restricted to the given edges."""
        return InteractionGraph(
            (self.edges[idx] for idx in sorted(set(edge_ids))),
            self.item_names,
            users=self.users,
            items=self.items,
            user_clusters=self.user_clusters,
            item_clusters=self.item_clusters,
        )

    def positive_rate(self) -> float:
        if not self.edges:
            return 0.0
        return sum(e.label for e in self.edges) / len(self.edges)
