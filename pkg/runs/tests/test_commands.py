import json
from io import StringIO
from unittest.mock import patch

import pandas as pd
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from curerec import const
from curerec.cache_keys import artifact_keys
from curerec.exceptions import CorruptSampleError
from evaluation.models import RunRecord
from nanorec.services.checkpoint import load_checkpoint
from runs.services import pipeline

TINY = [
    "data.users=16",
    "data.items=24",
    "data.clusters=2",
    "model.width=32",
    "model.mlp_width=64",
    "train.epochs=1",
    "train.batch_size=16",
    "attribution.fraction=0.2",
    "unlearn.steps=2",
    "unlearn.batch_size=4",
    "unlearn.k=2",
]


def _call(name, out, *args, options=(), cache=None, **kwargs):
    flags = []
    for option in [*TINY, *options, f"cache_dir={cache or out / 'cache'}"]:
        flags += ["--option", option]
    call_command(name, *args, "--seed", "3", "--threads", "1", "--out", str(out), *flags, **kwargs)


class TestTrainCommand:
    """Test the train subcommand."""

    def test_writes_run_files(self, tmp_path):
        """Test training writes checkpoint, manifest and config echo."""
        _call("train", tmp_path)
        keys = artifact_keys.run(tmp_path)

        assert keys.model().exists()
        assert json.loads(keys.split_manifest().read_text())["seed"] == 3
        assert "unlearn.omega_r = 0.6" in keys.config_echo().read_text()

    def test_deterministic(self, tmp_path):
        """Test two runs produce identical checkpoints."""
        _call("train", tmp_path / "a")
        _call("train", tmp_path / "b")

        first = artifact_keys.run(tmp_path / "a").model().read_bytes()
        second = artifact_keys.run(tmp_path / "b").model().read_bytes()
        assert first == second

    def test_missing_dataset_path(self, tmp_path):
        """Test a TSV source without a path exits with the config code and names the field."""
        with pytest.raises(CommandError, match="data.path") as exc:
            _call("train", tmp_path, options=["data.source=tsv"])

        assert exc.value.returncode == const.EXIT_CONFIG

    def test_absent_dataset_file(self, tmp_path):
        """Test a TSV path that does not exist exits with the config code."""
        with pytest.raises(CommandError) as exc:
            _call("train", tmp_path, options=["data.source=tsv", f"data.path={tmp_path / 'none.tsv'}"])

        assert exc.value.returncode == const.EXIT_CONFIG


class TestCircuitsCommand:
    """Test the circuits subcommand."""

    @pytest.fixture(autouse=True)
    def _setup(self, tmp_path):
        self.out = tmp_path
        _call("train", tmp_path)

    def test_full_fraction_lists_every_edge(self):
        """Test fraction 1.0 keeps the whole computational graph."""
        _call("circuits", self.out, "--set", "forget", options=["attribution.fraction=1.0"])

        dump = json.loads(artifact_keys.run(self.out).circuit("forget").read_text())
        assert len(dump["edges"]) == 54
        assert dump["method"] == "intervention"

    def test_per_sample_union(self):
        """Test the per-sample union keeps at least the budget and covers the aggregated circuit's size."""
        _call("circuits", self.out, "--set", "forget", options=["attribution.fraction=0.1"])
        aggregated = json.loads(artifact_keys.run(self.out).circuit("forget").read_text())
        _call(
            "circuits",
            self.out,
            "--set",
            "forget",
            options=["attribution.fraction=0.1", "attribution.per_sample=true"],
        )
        union = json.loads(artifact_keys.run(self.out).circuit("forget").read_text())

        assert union["budget"] == aggregated["budget"] == 6
        assert len(union["edges"]) >= len(aggregated["edges"]) == 6

    def test_rerun_is_byte_identical(self):
        """Test unchanged inputs reproduce the same dump."""
        path = artifact_keys.run(self.out).circuit("retain")
        _call("circuits", self.out, "--set", "retain")
        first = path.read_bytes()
        _call("circuits", self.out, "--set", "retain")

        assert path.read_bytes() == first

    def test_corrupt_failures_exit(self):
        """Test patching exits with the attribution code when corrupt prompts cannot be built."""
        with patch.object(pipeline, "build_corrupt_sample", side_effect=CorruptSampleError("none")):
            with pytest.raises(CommandError) as exc:
                _call("circuits", self.out, "--set", "forget", "--attribution", "patching")

        assert exc.value.returncode == const.EXIT_ATTRIBUTION

    def test_requires_training(self, tmp_path):
        """Test circuits without a trained model is a config error."""
        with pytest.raises(CommandError) as exc:
            _call("circuits", tmp_path / "fresh", "--set", "forget")

        assert exc.value.returncode == const.EXIT_CONFIG


class TestUnlearnCommand:
    """Test the unlearn subcommand."""

    @pytest.fixture(autouse=True)
    def _setup(self, tmp_path):
        self.out = tmp_path
        self.keys = artifact_keys.run(tmp_path)
        _call("train", tmp_path)
        _call("circuits", tmp_path, "--set", "forget")
        _call("circuits", tmp_path, "--set", "retain")

    def test_zero_steps_copies_model(self):
        """Test no steps writes a checkpoint equal to the input."""
        _call("unlearn", self.out, "--method", "cure", options=["unlearn.steps=0"])

        assert load_checkpoint(self.keys.unlearned("cure")).equals(load_checkpoint(self.keys.model()))

    def test_trace_schema(self):
        """Test the trace CSV has exactly the trace columns, one row per step."""
        _call("unlearn", self.out)

        frame = pd.read_csv(self.keys.trace("cure"))
        assert list(frame.columns) == list(const.TRACE_COLUMNS)
        assert len(frame) == 2
        assert json.loads(self.keys.timing("cure").read_text())["omega_r"] == 0.6

    def test_baseline(self):
        """Test baselines write their own labeled outputs."""
        _call("unlearn", self.out, "--method", "gradient_ascent")

        assert self.keys.unlearned("gradient_ascent").exists()

    def test_omega_sweep(self):
        """Test a sweep writes one checkpoint and trace per weight."""
        _call("unlearn", self.out, "--omega-sweep", "0.2,0.8")

        for label in ("cure_omega0.2", "cure_omega0.8"):
            assert self.keys.unlearned(label).exists()
            assert self.keys.trace(label).exists()

    def test_bad_sweep(self):
        """Test sweep weights outside (0, 1) are rejected."""
        with pytest.raises(CommandError) as exc:
            _call("unlearn", self.out, "--omega-sweep", "0.5,1.2")

        assert exc.value.returncode == const.EXIT_CONFIG


@pytest.mark.django_db
class TestEvalAndReport:
    """Test evaluation and reporting over a complete tiny run."""

    @pytest.fixture(autouse=True)
    def _setup(self, tmp_path):
        self.out = tmp_path
        self.keys = artifact_keys.run(tmp_path)
        _call("train", tmp_path)
        _call("circuits", tmp_path, "--set", "forget")
        _call("circuits", tmp_path, "--set", "retain")
        _call("unlearn", tmp_path)

    def test_eval_reports(self):
        """Test every model gets a report, a CSV row and a database row."""
        _call("eval", self.out)

        oracle = json.loads(self.keys.metrics("oracle").read_text())
        cure = json.loads(self.keys.metrics("cure").read_text())
        assert oracle["jsd_forget"] == 0.0
        assert cure["unlearn_wall_seconds"] > 0
        assert cure["conflict_rate"] == 0.0
        for field in ("auc", "acc", "logloss", "jsd_forget", "unlearn_wall_seconds", "conflict_rate", "config"):
            assert field in cure
        assert list(pd.read_csv(self.keys.runs_csv())["label"]) == ["original", "oracle", "cure"]
        assert RunRecord.objects.filter(run_dir=str(self.out)).count() == 3

    def test_eval_output(self):
        """Test eval prints one line per model, a styled completion line and the oracle retrain time."""
        out = StringIO()
        _call("eval", self.out, stdout=out)

        text = out.getvalue()
        assert "✓ Evaluated 3 models" in text
        assert text.count("JSD") == 3
        assert json.loads(self.keys.metrics("oracle").read_text())["unlearn_wall_seconds"] > 0

    def test_report(self):
        """Test the report writes deterministic plots and a summary."""
        _call("eval", self.out)
        _call("report", self.out)
        first = self.keys.plot("conflicts").read_bytes()
        _call("report", self.out)

        assert self.keys.plot("conflicts").read_bytes() == first
        assert self.keys.plot("alignment").exists()
        assert self.keys.plot("conflicts_raw").exists()
        summary = self.keys.summary().read_text()
        assert "| cure |" in summary
        assert "before projection" in summary

    def test_report_without_trace(self):
        """Test a run without any nonempty trace exits with the report code."""
        self.keys.trace("cure").write_text(",".join(const.TRACE_COLUMNS) + "\n")

        with pytest.raises(CommandError) as exc:
            _call("report", self.out)

        assert exc.value.returncode == const.EXIT_REPORT_INPUT
