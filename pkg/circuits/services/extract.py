"""
Greedy circuit extraction.

Growth starts at the logits node and repeatedly takes the highest-scoring edge
whose child is already in the circuit, so every node that enters the circuit
has a path to the logits. Ties break on the edge key.
"""

from __future__ import annotations

import heapq
import json
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from attribution.services.scoring import EdgeScoreMap
from curerec import const
from curerec.exceptions import CircuitError, ConfigurationError
from nanorec.services.graph import Edge, edge_key

logger = logging.getLogger(__name__)

DEFAULT_FRACTION = 0.05


@dataclass(frozen=True)
class Circuit:
    edges: dict[Edge, float]
    budget: int
    method: str = ""

    def __post_init__(self):
        for edge, score in self.edges.items():
            if not math.isfinite(score):
                raise CircuitError(f"score of {edge_key(edge)} is not finite")

    def __len__(self) -> int:
        return len(self.edges)

    def __contains__(self, edge: Edge) -> bool:
        return edge in self.edges

    @property
    def nodes(self) -> frozenset[str]:
        """Endpoints of the circuit edges; the logits node is always present."""
        names = {const.NODE_LOGITS}
        for parent, child in self.edges:
            names.update((parent, child))
        return frozenset(names)

    @property
    def edge_set(self) -> frozenset[Edge]:
        return frozenset(self.edges)

    def ranked(self) -> list[tuple[Edge, float]]:
        return sorted(self.edges.items(), key=lambda item: (-item[1], edge_key(item[0])))

    def to_dict(self) -> dict:
        return {
            "edges": [{"from": parent, "to": child, "score": score} for (parent, child), score in self.ranked()],
            "nodes": sorted(self.nodes),
            "budget": self.budget,
            "method": self.method,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, payload: Mapping) -> Circuit:
        return cls(
            edges={(e["from"], e["to"]): float(e["score"]) for e in payload["edges"]},
            budget=int(payload["budget"]),
            method=payload.get("method", ""),
        )

    @classmethod
    def from_json(cls, text: str) -> Circuit:
        return cls.from_dict(json.loads(text))


def budget_from_fraction(scores: EdgeScoreMap | int, fraction: float = DEFAULT_FRACTION) -> int:
    """ceil(fraction * total edges)."""
    if not 0 < fraction <= 1:
        raise ConfigurationError(f"circuit fraction must be in (0, 1], got {fraction}")
    total = scores if isinstance(scores, int) else len(scores)
    # round first so 0.05 * 100 is 5, not 6
    return max(1, math.ceil(round(fraction * total, 9)))


def greedy_extract(scores: EdgeScoreMap, budget: int) -> Circuit:
    if budget < 1:
        raise ConfigurationError(f"budget must be >= 1, got {budget}")

    incoming: dict[str, list[Edge]] = defaultdict(list)
    for edge in scores.scores:
        incoming[edge[1]].append(edge)

    frontier: list[tuple[float, str, Edge]] = []

    def open_node(name: str) -> None:
        for edge in incoming.get(name, ()):
            heapq.heappush(frontier, (-scores.scores[edge], edge_key(edge), edge))

    nodes = {const.NODE_LOGITS}
    chosen: dict[Edge, float] = {}
    open_node(const.NODE_LOGITS)
    while frontier and len(chosen) < budget:
        negative, _, edge = heapq.heappop(frontier)
        chosen[edge] = -negative
        parent = edge[0]
        if parent not in nodes:
            nodes.add(parent)
            open_node(parent)

    if len(chosen) < budget:
        logger.warning("Budget %d exceeds the %d reachable edges; taking all of them", budget, len(chosen))
    circuit = Circuit(edges=chosen, budget=budget, method=scores.method)
    check_connectivity(circuit)
    return circuit


def check_connectivity(circuit: Circuit) -> None:
    """Every node must reach the logits node through circuit edges."""
    children: dict[str, set[str]] = defaultdict(set)
    parents: dict[str, set[str]] = defaultdict(set)
    for parent, child in circuit.edges:
        children[parent].add(child)
        parents[child].add(parent)

    reached = {const.NODE_LOGITS}
    stack = [const.NODE_LOGITS]
    while stack:
        node = stack.pop()
        for parent in parents.get(node, ()):
            if parent not in reached:
                reached.add(parent)
                stack.append(parent)

    childless = sorted(n for n in circuit.nodes if n != const.NODE_LOGITS and not children.get(n))
    unreached = sorted(circuit.nodes - reached)
    if childless or unreached:
        raise CircuitError(f"disconnected circuit: childless {childless}, cut off from logits {unreached}")


def union_circuits(circuits: Iterable[Circuit]) -> Circuit:
    """Edge union, keeping the highest score seen for each edge."""
    circuits = list(circuits)
    if not circuits:
        raise CircuitError("no circuits to merge")
    edges: dict[Edge, float] = {}
    for circuit in circuits:
        for edge, score in circuit.edges.items():
            edges[edge] = max(score, edges.get(edge, score))
    return Circuit(edges=edges, budget=max(c.budget for c in circuits), method=circuits[0].method)


def extract_per_sample(maps: Iterable[EdgeScoreMap], budget: int) -> Circuit:
    """Union of one greedy circuit per sample."""
    return union_circuits(greedy_extract(scores, budget) for scores in maps)


def circuit_to_json(circuit: Circuit) -> str:
    return circuit.to_json()


def circuit_from_json(text: str) -> Circuit:
    return Circuit.from_json(text)
