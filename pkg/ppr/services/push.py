"""
Personalized PageRank on the undirected user-item graph.

Convention: pi = (1 - alpha) * p + alpha * P^T pi, with P row-stochastic over
neighbors (uniform). alpha is the probability of continuing the walk; the
swap flag reads it as the restart probability instead. Walks reaching a node
without edges stop there, i.e. P has zero rows for isolated nodes.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from curerec.exceptions import ConfigurationError
from interactions.services.graph import InteractionGraph, item_node

logger = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.85
DEFAULT_EPS = 1e-6
DEFAULT_TAU = 1.0


@dataclass(frozen=True)
class PprVector:
    """Sparse PPR mass over graph.nodes indices (sorted)."""

    indices: np.ndarray
    values: np.ndarray
    size: int
    alpha: float
    eps: float
    source: str = ""
    residual: float = 0.0
    dropped: float = field(default=0.0, compare=False)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.size)
        dense[self.indices] = self.values
        return dense

    @property
    def total_mass(self) -> float:
        return float(self.values.sum())

    def get(self, index: int) -> float:
        pos = np.searchsorted(self.indices, index)
        if pos < len(self.indices) and self.indices[pos] == index:
            return float(self.values[pos])
        return 0.0

    @classmethod
    def from_dense(cls, dense: np.ndarray, alpha: float, eps: float, source: str = "", residual: float = 0.0, dropped: float = 0.0) -> PprVector:
        indices = np.flatnonzero(dense)
        return cls(indices, dense[indices].copy(), len(dense), alpha, eps, source, residual, dropped)


@dataclass(frozen=True)
class PreferenceVector:
    """Restart distribution over history items."""

    weights: dict[str, float]
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not self.weights:
            raise ConfigurationError("preference vector needs at least one item")
        if any(w < 0 for w in self.weights.values()):
            raise ConfigurationError("preference weights must be nonnegative")
        if not math.isclose(math.fsum(self.weights.values()), 1.0, abs_tol=1e-9):
            raise ConfigurationError("preference weights must sum to 1")

    @classmethod
    def from_importance(cls, importance: Mapping[str, float], tau: float = DEFAULT_TAU) -> PreferenceVector:
        """softmax(tau * S) over the items of importance."""
        if not importance:
            raise ConfigurationError("importance map is empty")
        items = sorted(importance)
        logits = tau * np.array([importance[i] for i in items], dtype=float)
        weights = np.exp(logits - logits.max())
        weights /= weights.sum()
        return cls(dict(zip(items, weights.tolist())), tau)

    def node_weights(self) -> dict[str, float]:
        return {item_node(item): weight for item, weight in self.weights.items()}


def effective_alpha(alpha: float, swap_alpha: bool = False) -> float:
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must be in (0, 1), got {alpha}")
    return 1 - alpha if swap_alpha else alpha


def _preference_array(graph: InteractionGraph, preference) -> tuple[np.ndarray, str]:
    if isinstance(preference, str):
        weights, label = {preference: 1.0}, preference
    elif isinstance(preference, PreferenceVector):
        weights, label = preference.node_weights(), "preference"
    else:
        weights, label = dict(preference), "preference"
    p = np.zeros(len(graph.nodes))
    for node, weight in weights.items():
        if node not in graph.node_index:
            raise ConfigurationError(f"preference node {node!r} is not in the graph")
        p[graph.node_index[node]] += weight
    return p, label


def graph_transition(graph: InteractionGraph) -> np.ndarray:
    """Dense row-stochastic transition matrix; isolated nodes have zero rows."""
    n = len(graph.nodes)
    transition = np.zeros((n, n))
    for node, neighbors in graph.adjacency.items():
        if neighbors:
            row = graph.node_index[node]
            cols = [graph.node_index[m] for m in neighbors]
            transition[row, cols] = 1.0 / len(neighbors)
    return transition


def dense_ppr(graph: InteractionGraph, preference, alpha: float = DEFAULT_ALPHA, *, swap_alpha: bool = False) -> np.ndarray:
    """Exact (1 - alpha)(I - alpha P^T)^-1 p."""
    a = effective_alpha(alpha, swap_alpha)
    p, _ = _preference_array(graph, preference)
    transition = graph_transition(graph)
    system = np.eye(len(p)) - a * transition.T
    return (1 - a) * np.linalg.solve(system, p)


def push_ppr(
    graph: InteractionGraph,
    preference,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    *,
    swap_alpha: bool = False,
    trace: list[float] | None = None,
) -> PprVector:
    """Forward push until every residual is below eps.

    preference is a node id (one-hot), a PreferenceVector over items, or a
    mapping of node id to weight. Nodes are pushed FIFO, seeded in index
    order, so the result is deterministic. When trace is given it receives
    mass + residual + dropped after every push.
    """
    if eps <= 0:
        raise ConfigurationError(f"eps must be > 0, got {eps}")
    a = effective_alpha(alpha, swap_alpha)
    residual, label = _preference_array(graph, preference)
    mass = np.zeros_like(residual)
    neighbors = [
        np.array([graph.node_index[m] for m in graph.adjacency[node]], dtype=np.int64)
        for node in graph.nodes
    ]
    dropped = 0.0

    queue = deque(int(i) for i in np.flatnonzero(residual >= eps))
    queued = np.zeros(len(residual), dtype=bool)
    queued[list(queue)] = True
    pushes = 0
    while queue:
        v = queue.popleft()
        queued[v] = False
        r = residual[v]
        if r < eps:
            continue
        residual[v] = 0.0
        mass[v] += (1 - a) * r
        adjacent = neighbors[v]
        if len(adjacent) == 0:
            dropped += a * r
        else:
            residual[adjacent] += a * r / len(adjacent)
            for u in adjacent[residual[adjacent] >= eps].tolist():
                if not queued[u]:
                    queued[u] = True
                    queue.append(u)
        pushes += 1
        if trace is not None:
            trace.append(float(mass.sum() + residual.sum() + dropped))

    logger.debug("PPR from %s: %d pushes, residual %.3g", label, pushes, residual.max(initial=0.0))
    return PprVector.from_dense(mass, alpha, eps, label, float(residual.sum()), dropped)
