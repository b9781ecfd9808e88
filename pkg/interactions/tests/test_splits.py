import dataclasses

import pytest

from curerec.exceptions import ConfigurationError, SplitError
from interactions.services.graph import Interaction, InteractionGraph
from interactions.services.splits import DeletionMode, split
from interactions.services.synth import synthesize


class TestSplit:
    """Test train/val/test and forget/retain partitioning."""

    def setup_method(self):
        """Set up a small clustered graph."""
        self.graph = synthesize(30, 40, 3, seed=7)

    def test_forget_and_retain_partition_train(self):
        """Test forget and retain_pool are disjoint and cover train."""
        result = split(self.graph, (0.7, 0.2, 0.1), 0.2, "interaction", seed=3)
        forget = set(result.forget_ids)
        retain = set(result.retain_ids)
        train = {s.edge_id for s in result.train}

        assert not forget & retain
        assert forget | retain == train

    def test_forget_fraction_interaction_mode(self):
        """Test |forget| = round(0.2 |train|) in interaction mode."""
        result = split(self.graph, (0.7, 0.2, 0.1), 0.2, DeletionMode.INTERACTION, seed=3)

        assert len(result.forget) == round(0.2 * len(result.train))

    def test_deterministic(self):
        """Test the same seed gives the same manifest."""
        first = split(self.graph, seed=11)
        second = split(self.graph, seed=11)

        assert first.manifest() == second.manifest()
        assert [s.token_ids for s in first.training_samples] == [s.token_ids for s in second.training_samples]

    def test_held_out_edges_not_in_histories(self):
        """Test histories only use train interactions."""
        result = split(self.graph, seed=5)
        held_out = {
            (self.graph.edges[s.edge_id].user, self.graph.edges[s.edge_id].item)
            for s in result.val + result.test
        }

        for sample in result.training_samples + result.val + result.test:
            for item in sample.history:
                assert (sample.user, item) not in held_out

    def test_user_mode_removes_all_user_edges(self):
        """Test no retained edge touches a forgotten user."""
        result = split(self.graph, forget_fraction=0.2, deletion_mode="user", seed=3)
        forgotten_users = {s.user for s in result.forget}

        assert forgotten_users
        assert all(s.user not in forgotten_users for s in result.retain_pool)
        assert len(result.forget) >= round(0.2 * len(result.train))

    def test_item_mode_removes_all_item_edges(self):
        """Test no retained edge targets a forgotten item."""
        result = split(self.graph, forget_fraction=0.2, deletion_mode="item", seed=3)
        forgotten_items = {s.target for s in result.forget}

        assert all(s.target not in forgotten_items for s in result.retain_pool)

    def test_single_user_owning_everything(self):
        """Test user-wise deletion that empties the retain pool raises."""
        interactions = [Interaction("solo", f"x{k}", 1, k) for k in range(20)]
        graph = InteractionGraph(interactions, {f"x{k}": f"name_x{k}" for k in range(20)})

        with pytest.raises(SplitError):
            split(graph, forget_fraction=0.2, deletion_mode="user", seed=1)

    def test_ratios_must_sum_to_one(self):
        """Test invalid ratios are a configuration error."""
        with pytest.raises(ConfigurationError):
            split(self.graph, (0.7, 0.2, 0.2))

    def test_forget_fraction_bounds(self):
        """Test forget_fraction outside (0, 1) is rejected."""
        with pytest.raises(ConfigurationError):
            split(self.graph, forget_fraction=1.0)

    def test_negatives_are_unseen_items(self):
        """Test each negative targets an item its user never interacted with."""
        result = split(self.graph, seed=3)
        positives = sum(1 for s in result.train if s.label == 1)

        assert 0 < len(result.negatives) <= positives
        for negative in result.negatives:
            assert negative.negative
            assert negative.answer == "No"
            assert not self.graph.has_edge(negative.user, negative.target)

    def test_manifest_shape(self):
        """Test the manifest lists edge ids per split with seed and mode."""
        result = split(self.graph, seed=3)
        manifest = result.manifest()

        assert manifest["seed"] == 3
        assert manifest["mode"] == "interaction"
        assert manifest["forget"] == list(result.forget_ids)
        assert manifest["graph_hash"] == self.graph.graph_hash


class TestRetainOnly:
    """Test the view used for retraining without the forget set."""

    def setup_method(self):
        """Set up a split."""
        self.graph = synthesize(30, 40, 3, seed=7)
        self.split = split(self.graph, seed=3)

    def test_forgotten_edges_gone(self):
        """Test no forgotten edge is trained on or appears in a history."""
        retained = self.split.retain_only()
        forgotten = {
            (self.graph.edges[i].user, self.graph.edges[i].item) for i in self.split.forget_ids
        }

        assert not set(self.split.forget_ids) & {s.edge_id for s in retained.training_samples}
        for sample in retained.training_samples:
            for item in sample.history:
                assert (sample.user, item) not in forgotten

    def test_eval_prompts_shared(self):
        """Test val and test prompts are identical to the original split."""
        retained = self.split.retain_only()

        assert retained.val == self.split.val
        assert retained.test == self.split.test

    def test_empty_forget_reproduces_training_data(self):
        """Test removing nothing yields the original training samples."""
        nothing = dataclasses.replace(self.split, forget=(), retain_pool=self.split.train)

        retained = nothing.retain_only()

        assert retained.training_samples == self.split.training_samples
