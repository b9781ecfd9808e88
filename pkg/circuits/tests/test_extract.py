import json

import numpy as np
import pytest

from attribution.services.scoring import METHOD_INTERVENTION, METHOD_PATCHING, EdgeScoreMap, gini, score_set
from circuits.services.extract import (
    Circuit,
    budget_from_fraction,
    check_connectivity,
    extract_per_sample,
    greedy_extract,
    union_circuits,
)
from curerec import const
from curerec.exceptions import CircuitError, ConfigurationError
from nanorec.services.graph import ComputationGraph, edge_key
from ppr.services.cache import clear_memory_cache, precompute_item_vectors
from ppr.services.corrupt import build_corrupt_sample


def _random_scores(seed, graph=None):
    graph = graph or ComputationGraph(2, 4)
    rng = np.random.default_rng(seed)
    return EdgeScoreMap({edge: float(v) for edge, v in zip(graph.edges, rng.random(len(graph.edges)))}, METHOD_INTERVENTION)


def _replay(scores, budget):
    """Straightforward re-run of the greedy rule by full rescans."""
    nodes, chosen = {const.NODE_LOGITS}, []
    while len(chosen) < budget:
        frontier = [e for e in scores.scores if e[1] in nodes and e not in chosen]
        if not frontier:
            break
        best = min(frontier, key=lambda e: (-scores.scores[e], edge_key(e)))
        chosen.append(best)
        nodes.add(best[0])
    return set(chosen)


class TestGreedyExtract:
    """Test top-down greedy circuit growth."""

    def setup_method(self):
        """Set up random scores on the 12-node DAG."""
        self.graph = ComputationGraph(2, 4)
        self.scores = _random_scores(0, self.graph)

    def test_budget_one_takes_best_logit_edge(self):
        """Test a budget of one picks the top-scoring edge into the logits."""
        circuit = greedy_extract(self.scores, 1)
        best = max(self.graph.incoming(const.NODE_LOGITS), key=lambda e: self.scores.scores[e])

        assert list(circuit.edges) == [best]

    def test_matches_replay(self):
        """Test extraction equals a brute-force replay for several seeds and budgets."""
        for seed in range(5):
            scores = _random_scores(seed, self.graph)
            for budget in (1, 3, 8, 20, 54):
                assert greedy_extract(scores, budget).edge_set == _replay(scores, budget)

    def test_monotone_in_budget(self):
        """Test a larger budget only adds edges."""
        for budget in range(1, 30):
            assert greedy_extract(self.scores, budget).edge_set <= greedy_extract(self.scores, budget + 1).edge_set

    def test_connected(self):
        """Test every circuit node except the logits has an outgoing circuit edge."""
        for budget in (1, 5, 17):
            circuit = greedy_extract(self.scores, budget)
            check_connectivity(circuit)
            sources = {parent for parent, _ in circuit.edges}
            assert circuit.nodes - {const.NODE_LOGITS} <= sources

    def test_ties_break_on_edge_key(self):
        """Test equal scores resolve by lexicographic edge key regardless of insertion order."""
        edges = list(self.graph.edges)
        forward = EdgeScoreMap(dict.fromkeys(edges, 1.0), METHOD_INTERVENTION)
        backward = EdgeScoreMap(dict.fromkeys(reversed(edges), 1.0), METHOD_INTERVENTION)

        first, second = greedy_extract(forward, 6), greedy_extract(backward, 6)

        assert first.edge_set == second.edge_set
        assert next(iter(first.edges)) == min(self.graph.incoming(const.NODE_LOGITS), key=edge_key)

    def test_oversized_budget(self):
        """Test a budget above the edge count returns every edge."""
        circuit = greedy_extract(self.scores, 500)

        assert circuit.edge_set == self.graph.edge_set
        assert circuit.budget == 500

    def test_invalid_budget(self):
        """Test a budget below one is rejected."""
        with pytest.raises(ConfigurationError):
            greedy_extract(self.scores, 0)


class TestBudgetFromFraction:
    """Test budget rounding."""

    def test_examples(self):
        """Test top-5% budgets round up."""
        assert budget_from_fraction(100, 0.05) == 5
        assert budget_from_fraction(33, 0.05) == 2
        assert budget_from_fraction(54, 1.0) == 54

    def test_from_score_map(self):
        """Test the edge count is read from a score map."""
        assert budget_from_fraction(_random_scores(1), 0.05) == 3

    def test_invalid_fraction(self):
        """Test fractions outside (0, 1] are rejected."""
        for fraction in (0.0, -0.1, 1.5):
            with pytest.raises(ConfigurationError):
                budget_from_fraction(100, fraction)


class TestCircuitHelpers:
    """Test connectivity checks, unions and the JSON dump."""

    def test_childless_node_rejected(self):
        """Test an edge that does not lead to the logits fails the check."""
        circuit = Circuit({("input", "L0.attn0"): 1.0}, budget=1)

        with pytest.raises(CircuitError):
            check_connectivity(circuit)

    def test_non_finite_score(self):
        """Test non-finite scores cannot enter a circuit."""
        with pytest.raises(CircuitError):
            Circuit({("input", "logits"): float("nan")}, budget=1)

    def test_json_dump(self):
        """Test the dump lists edges with scores, nodes, budget and method."""
        circuit = greedy_extract(_random_scores(2), 4)
        payload = json.loads(circuit.to_json())

        assert set(payload) == {"edges", "nodes", "budget", "method"}
        assert len(payload["edges"]) == 4
        assert set(payload["edges"][0]) == {"from", "to", "score"}
        assert Circuit.from_json(circuit.to_json()) == circuit

    def test_union_and_per_sample(self):
        """Test the per-sample union covers each sample circuit."""
        maps = [_random_scores(seed) for seed in range(3)]

        merged = extract_per_sample(maps, 4)

        for scores in maps:
            assert greedy_extract(scores, 4).edge_set <= merged.edge_set
        check_connectivity(merged)
        with pytest.raises(CircuitError):
            union_circuits([])


class TestScoreConcentration:
    """Test how concentrated patching and intervention scores are on the toy model."""

    @pytest.fixture(autouse=True)
    def _setup(self, tiny_model, tiny_split):
        clear_memory_cache()
        self.state = tiny_model
        vectors = precompute_item_vectors(tiny_split.train_graph, 0.85, 1e-6)
        self.samples, self.corrupts = [], []
        for sample in tiny_split.train[:8]:
            candidate = build_corrupt_sample(
                tiny_model,
                tiny_split.train_graph,
                sample,
                1.0,
                vectors,
                template=tiny_split.template,
                vocab=tiny_split.vocab,
            )
            self.samples.append(sample)
            self.corrupts.append(candidate.sample)

    def test_patching_more_concentrated(self):
        """Test patching puts its mass on fewer edges than intervention."""
        patching = score_set(self.state, self.samples, METHOD_PATCHING, corrupts=self.corrupts)
        intervention = score_set(self.state, self.samples, METHOD_INTERVENTION)

        assert gini(patching) > gini(intervention)

