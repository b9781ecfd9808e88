import pytest

from circuits.services.extract import Circuit
from circuits.services.partition import partition
from curerec import const
from nanorec.services.model import node_param_keys


def _circuit(nodes):
    """Star circuit: every listed node feeds the logits directly."""
    return Circuit({(node, const.NODE_LOGITS): 1.0 for node in nodes}, budget=len(nodes))


class TestPartition:
    """Test parameter grouping from forget and retain circuits."""

    @pytest.fixture(autouse=True)
    def _setup(self, tiny_model):
        self.state = tiny_model

    def test_overlapping_fixture(self):
        """Test five- and six-node circuits overlapping in three nodes give groups of 2, 3 and 3."""
        forget = _circuit(["L0.attn0", "L0.attn1", "L0.mlp0", "L1.attn0", "L1.mlp0"])
        retain = _circuit(["L0.attn0", "L0.mlp0", "L1.mlp0", "L0.attn2", "L0.attn3", "L1.attn3"])

        groups = partition(forget, retain, self.state)

        assert groups.forget_nodes == {"L0.attn1", "L1.attn0"}
        assert groups.retain_nodes == {"L0.attn2", "L0.attn3", "L1.attn3"}
        assert groups.shared_nodes == {"L0.attn0", "L0.mlp0", "L1.mlp0"}

    def test_identical_circuits_share_everything(self):
        """Test equal circuits leave no specific parameters."""
        circuit = _circuit(["L0.attn0", "L1.mlp0"])

        groups = partition(circuit, circuit, self.state)

        assert not groups.forget_specific and not groups.retain_specific
        assert groups.shared_nodes == {"L0.attn0", "L1.mlp0"}

    def test_disjoint_circuits_share_nothing(self):
        """Test disjoint circuits produce an empty shared group."""
        groups = partition(_circuit(["L0.attn0"]), _circuit(["L1.attn1"]), self.state)

        assert not groups.shared
        assert groups.forget_specific == set(node_param_keys("L0.attn0", self.state.config))

    def test_true_partition(self):
        """Test the groups are disjoint and cover every parameter key."""
        groups = partition(_circuit(["L0.attn0", "L0.mlp0"]), _circuit(["L0.mlp0", "L1.attn2"]), self.state)
        all_groups = [groups.forget_specific, groups.retain_specific, groups.shared, groups.untouched]

        assert sum(len(g) for g in all_groups) == len(self.state.params)
        assert set().union(*all_groups) == set(self.state.params)

    def test_embedding_edges_never_partitioned(self):
        """Test embedding and unembedding stay untouched even when their nodes are in a circuit."""
        circuit = Circuit({("input", "L0.attn0"): 1.0, ("L0.attn0", const.NODE_LOGITS): 1.0}, budget=2)

        groups = partition(circuit, circuit, self.state)

        assert {"embed.W_E", "embed.W_pos", "unembed.W_U"} <= groups.untouched
        assert groups.trainable == set(node_param_keys("L0.attn0", self.state.config))

    def test_node_parameters_travel_together(self):
        """Test every parameter of a node lands in the same group."""
        groups = partition(_circuit(["L0.attn0", "L1.attn1"]), _circuit(["L1.attn1"]), self.state)

        for node in self.state.graph.component_nodes:
            keys = set(node_param_keys(node, self.state.config))
            hits = [name for name in ("forget_specific", "retain_specific", "shared", "untouched") if keys & groups.group(name)]
            assert len(hits) == 1
