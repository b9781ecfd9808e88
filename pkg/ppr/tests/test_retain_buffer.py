import pytest

from curerec.exceptions import ConfigurationError
from interactions.services.graph import item_node, user_node
from ppr.services.push import dense_ppr
from ppr.services.retain_buffer import select_retain_buffer

from .conftest import bare_sample, toy_graph

EDGES = [
    ("a", "x"), ("a", "y"), ("b", "y"), ("b", "z"), ("c", "z"),
    ("c", "w"), ("d", "w"), ("d", "v"), ("e", "v"), ("e", "x"),
]


class TestSelectRetainBuffer:
    """Test PPR-ranked retain buffer selection."""

    def setup_method(self):
        """Set up a ten-edge cycle with one forgotten edge."""
        self.graph = toy_graph(EDGES)
        samples = [bare_sample(self.graph, u, i) for u, i in EDGES]
        self.forget = samples[:1]
        self.pool = samples[1:]

    def test_size_is_k_times_forget(self):
        """Test the buffer holds k * |forget| samples."""
        buffer = select_retain_buffer(self.graph, self.forget, self.pool, k=6)

        assert len(buffer) == 6

    def test_capped_at_pool(self):
        """Test a buffer larger than the pool takes the whole pool."""
        buffer = select_retain_buffer(self.graph, self.forget, self.pool, k=20)

        assert sorted(s.edge_id for s in buffer) == sorted(s.edge_id for s in self.pool)

    def test_matches_dense_ranking(self):
        """Test every selected edge scores at least as high as every skipped edge under the exact PPR."""
        buffer = select_retain_buffer(self.graph, self.forget, self.pool, k=3, eps=1e-10)
        exact = dense_ppr(self.graph, {user_node("a"): 0.5, item_node("x"): 0.5}, 0.85)

        def score(sample):
            return exact[self.graph.node_index[user_node(sample.user)]] + exact[self.graph.node_index[item_node(sample.target)]]

        chosen = {s.edge_id for s in buffer}
        kept = min(score(s) for s in self.pool if s.edge_id in chosen)
        skipped = max(score(s) for s in self.pool if s.edge_id not in chosen)
        assert kept >= skipped - 1e-8

    def test_neighbors_come_first(self):
        """Test edges touching a forgotten endpoint outrank the far side of the cycle."""
        buffer = select_retain_buffer(self.graph, self.forget, self.pool, k=1, eps=1e-10)
        top = buffer[0]

        assert top.user == "a" or top.target == "x"

    def test_isolated_component(self):
        """Test forgetting inside a separate component draws the buffer from that component."""
        graph = toy_graph(EDGES + [("f", "q"), ("g", "q")])
        forget = [bare_sample(graph, "f", "q")]
        pool = [bare_sample(graph, u, i) for u, i in EDGES] + [bare_sample(graph, "g", "q")]

        buffer = select_retain_buffer(graph, forget, pool, k=1)

        assert [(s.user, s.target) for s in buffer] == [("g", "q")]

    def test_invalid_inputs(self):
        """Test k < 1 and empty sets are rejected."""
        with pytest.raises(ConfigurationError):
            select_retain_buffer(self.graph, self.forget, self.pool, k=0)
        with pytest.raises(ConfigurationError):
            select_retain_buffer(self.graph, [], self.pool)
        with pytest.raises(ConfigurationError):
            select_retain_buffer(self.graph, self.forget, [])
