from unittest.mock import patch

import pytest

from curerec import const
from interactions.services.splits import split
from interactions.services.synth import synthesize
from nanorec.services.config import ModelConfig
from nanorec.services.model import init


def make_model_config(vocab, **overrides):
    """Toy model shape used across the test suite."""
    values = dict(
        layers=2,
        heads=4,
        width=32,
        mlp_width=64,
        vocab_size=len(vocab),
        max_seq_len=32,
        seed=7,
        yes_id=vocab.yes_id,
        no_id=vocab.no_id,
        pad_id=vocab.pad_id,
    )
    values.update(overrides)
    return ModelConfig(**values)


@pytest.fixture(scope="session")
def tiny_graph():
    return synthesize(16, 24, 2, seed=3)


@pytest.fixture(scope="session")
def tiny_split(tiny_graph):
    return split(tiny_graph, (0.7, 0.2, 0.1), 0.2, "interaction", seed=3)


@pytest.fixture(scope="session")
def tiny_config(tiny_split):
    return make_model_config(tiny_split.vocab)


@pytest.fixture
def tiny_model(tiny_config):
    return init(tiny_config)


@pytest.fixture(scope="session")
def model_config_factory(tiny_split):
    def factory(**overrides):
        return make_model_config(tiny_split.vocab, **overrides)

    return factory


@pytest.fixture(scope="session")
def model_config_for():
    """Toy model shape for a vocabulary other than the tiny split's."""
    return make_model_config


class AcceptanceRuns:
    """Seed-pinned pipeline runs on the default synthetic dataset, computed once per seed."""

    methods = (const.METHOD_CURE, const.METHOD_UNIFORM, const.METHOD_GRADIENT_ASCENT)

    def __init__(self, root):
        self.root = root
        self._reports = {}

    def config(self, seed):
        from runs.services.config import load_run_config

        return load_run_config(overrides={"cache_dir": str(self.root / "cache")}, seed=seed, out=self.root / f"seed{seed}")

    def reports(self, seed):
        """Metrics of the original, the oracle and every method, keyed by label."""
        from runs.services import pipeline

        if seed not in self._reports:
            config = self.config(seed)
            pipeline.configure_threads(config)
            pipeline.run_train(config)
            for which in pipeline.CIRCUIT_SETS:
                pipeline.run_circuits(config, which)
            labels = [pipeline.run_unlearn(config, method)[0] for method in self.methods]
            self._reports[seed] = self._evaluate(config, labels)
        return self._reports[seed]

    def sweep(self, seed, weights):
        """CURE metrics for each retain weight, keyed by label."""
        from runs.services import pipeline

        self.reports(seed)
        config = self.config(seed)
        labels = [pipeline.run_unlearn(config, const.METHOD_CURE, weight)[0] for weight in weights]
        return self._evaluate(config, labels)

    def _evaluate(self, config, labels):
        from runs.services import pipeline

        with patch.object(pipeline.RunRecord, "record"):
            return {report.label: report for report in pipeline.run_eval(config, labels)}


@pytest.fixture(scope="session")
def acceptance_runs(tmp_path_factory):
    return AcceptanceRuns(tmp_path_factory.mktemp("acceptance"))
