"""
The edge-level computational DAG of the recommender.

Every attention head and MLP reads the sum of all earlier node outputs, so an
edge exists between any two nodes at strictly increasing depth. Heads of one
layer share a depth and are never connected to each other.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from curerec import const
from curerec.exceptions import UnknownEdgeError

EDGE_ARROW = "→"

Edge = tuple[str, str]


@dataclass(frozen=True)
class Node:
    name: str
    kind: str
    layer: int | None
    index: int
    stage: int


def attn_node(layer: int, head: int) -> str:
    return f"L{layer}.{const.KIND_ATTN}{head}"


def mlp_node(layer: int) -> str:
    return f"L{layer}.{const.KIND_MLP}0"


def edge_key(edge: Edge) -> str:
    return f"{edge[0]}{EDGE_ARROW}{edge[1]}"


def parse_edge_key(key: str) -> Edge:
    parent, sep, child = key.partition(EDGE_ARROW)
    if not sep:
        raise UnknownEdgeError(f"malformed edge key {key!r}")
    return (parent, child)


class ComputationGraph:
    def __init__(self, layers: int, heads: int):
        self.layers = layers
        self.heads = heads
        nodes = [Node(const.NODE_INPUT, const.NODE_INPUT, None, 0, 0)]
        for layer in range(layers):
            for head in range(heads):
                nodes.append(Node(attn_node(layer, head), const.KIND_ATTN, layer, head, 2 * layer + 1))
            nodes.append(Node(mlp_node(layer), const.KIND_MLP, layer, 0, 2 * layer + 2))
        nodes.append(Node(const.NODE_LOGITS, const.NODE_LOGITS, None, 0, 2 * layers + 1))
        self.nodes: tuple[Node, ...] = tuple(nodes)
        self._by_name = {node.name: node for node in self.nodes}

    @classmethod
    def for_config(cls, config) -> ComputationGraph:
        return cls(config.layers, config.heads)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def node(self, name: str) -> Node:
        try:
            return self._by_name[name]
        except KeyError:
            raise UnknownEdgeError(f"unknown node {name!r}") from None

    @property
    def node_names(self) -> tuple[str, ...]:
        return tuple(node.name for node in self.nodes)

    @cached_property
    def edges(self) -> tuple[Edge, ...]:
        """All (parent, child) pairs, ordered by child then parent depth."""
        return tuple(
            (parent.name, child.name)
            for child in self.nodes
            for parent in self.nodes
            if parent.stage < child.stage
        )

    @cached_property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    def parents(self, name: str) -> list[str]:
        stage = self.node(name).stage
        return [node.name for node in self.nodes if node.stage < stage]

    def children(self, name: str) -> list[str]:
        stage = self.node(name).stage
        return [node.name for node in self.nodes if node.stage > stage]

    def incoming(self, name: str) -> list[Edge]:
        return [(parent, name) for parent in self.parents(name)]

    def check_edge(self, edge: Edge) -> Edge:
        edge = tuple(edge)  # type: ignore[assignment]
        if edge not in self.edge_set:
            raise UnknownEdgeError(f"{edge_key(edge)} is not an edge of the computation graph")
        return edge

    @property
    def component_nodes(self) -> tuple[str, ...]:
        """Heads and MLPs; the nodes that own partitionable parameters."""
        return tuple(n.name for n in self.nodes if n.kind in (const.KIND_ATTN, const.KIND_MLP))
