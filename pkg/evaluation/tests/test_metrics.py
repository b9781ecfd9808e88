import math

import numpy as np
import pandas as pd
import pytest

from curerec import const
from curerec.exceptions import ConfigurationError
from evaluation.services.metrics import (
    MetricsReport,
    accuracy,
    append_runs_csv,
    auc_acc_logloss,
    binary_jsd,
    jsd_forget,
    log_loss,
    roc_auc,
)
from runs.services.pipeline import LABEL_ORACLE, LABEL_ORIGINAL


def _report(label="cure", **overrides):
    values = dict(
        label=label,
        method="cure",
        auc=0.8,
        acc=0.7,
        logloss=0.5,
        jsd_forget=0.01,
        unlearn_wall_seconds=1.5,
        conflict_rate=0.0,
    )
    values.update(overrides)
    return MetricsReport(**values)


class TestRocAuc:
    """Test the rank-statistic AUC."""

    def test_perfect_separation(self):
        """Test positives scored above every negative give AUC 1."""
        assert roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.2, 0.1]) == 1.0

    def test_hand_case(self):
        """Test three of four positive/negative pairs ordered correctly."""
        assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.3, 0.1]) == pytest.approx(0.75)

    def test_ties_count_half(self):
        """Test tied scores contribute one half."""
        assert roc_auc([1, 0], [0.5, 0.5]) == pytest.approx(0.5)

    def test_random_scores(self):
        """Test random scores on balanced labels sit near one half."""
        rng = np.random.default_rng(0)
        labels = np.repeat([0, 1], 5000)

        assert roc_auc(labels, rng.random(10_000)) == pytest.approx(0.5, abs=0.02)

    def test_monotone_invariance(self):
        """Test a strictly increasing transform leaves AUC unchanged."""
        rng = np.random.default_rng(1)
        labels = rng.integers(0, 2, 200)
        scores = rng.random(200)

        assert roc_auc(labels, scores) == pytest.approx(roc_auc(labels, np.exp(3 * scores)))

    def test_single_class(self):
        """Test AUC is missing when only one class is present."""
        assert roc_auc([1, 1], [0.2, 0.9]) is None


class TestPointMetrics:
    """Test accuracy and logloss."""

    def test_accuracy_threshold(self):
        """Test scores at exactly one half predict the positive class."""
        assert accuracy([1, 0, 1, 0], [0.5, 0.49, 0.2, 0.9]) == 0.5

    def test_logloss(self):
        """Test logloss is the mean NLL of the true labels."""
        expected = -(math.log(0.8) + math.log(0.6)) / 2

        assert log_loss([1, 0], [0.8, 0.4]) == pytest.approx(expected)

    def test_logloss_clamps(self):
        """Test certain wrong answers stay finite."""
        assert math.isfinite(log_loss([1], [0.0]))

    def test_utility_on_model(self, tiny_model, tiny_split):
        """Test model utility lies in the unit interval."""
        utility = auc_acc_logloss(tiny_model, tiny_split.test)

        assert utility.auc is None or 0.0 <= utility.auc <= 1.0
        assert 0.0 <= utility.acc <= 1.0
        assert utility.logloss > 0.0

    def test_empty_set(self, tiny_model):
        """Test evaluating nothing is a configuration error."""
        with pytest.raises(ConfigurationError):
            auc_acc_logloss(tiny_model, [])


class TestJsd:
    """Test the binary Jensen-Shannon divergence in nats."""

    def test_identical(self):
        """Test equal distributions have zero divergence."""
        assert binary_jsd(0.3, 0.3)[0] == pytest.approx(0.0, abs=1e-15)

    def test_maximal(self):
        """Test opposite certain answers reach ln 2."""
        assert binary_jsd(1.0, 0.0)[0] == pytest.approx(math.log(2), abs=1e-9)

    def test_closed_form(self):
        """Test (0.9, 0.1) against (0.5, 0.5) in closed form."""
        assert binary_jsd(0.9, 0.5)[0] == pytest.approx(0.101750, abs=1e-6)

    def test_symmetry(self):
        """Test swapping the arguments gives the same value exactly."""
        rng = np.random.default_rng(2)
        p, q = rng.random(100), rng.random(100)

        assert np.array_equal(binary_jsd(p, q), binary_jsd(q, p))

    def test_model_against_itself(self, tiny_model, tiny_split):
        """Test a model has zero divergence from its own clone."""
        assert jsd_forget(tiny_model, tiny_model.clone(), tiny_split.forget) == pytest.approx(0.0, abs=1e-15)

    def test_empty_forget(self, tiny_model):
        """Test the forget set must not be empty."""
        with pytest.raises(ConfigurationError):
            jsd_forget(tiny_model, tiny_model, [])


class TestReports:
    """Test report serialization and the cross-run CSV."""

    def test_json_round_trip(self, tmp_path):
        """Test a report reads back with every field."""
        report = _report(config={"unlearn": {"omega_r": 0.6}}, config_hash="abc")

        loaded = MetricsReport.read(report.write(tmp_path / "metrics_cure.json"))

        assert loaded == report

    def test_runs_csv_appends(self, tmp_path):
        """Test each report appends one row under a single header."""
        path = tmp_path / "runs.csv"
        append_runs_csv(path, _report("cure"))
        append_runs_csv(path, _report("uniform", method="uniform", auc=None))

        frame = pd.read_csv(path)

        assert list(frame["label"]) == ["cure", "uniform"]
        assert "config" not in frame.columns
        assert pd.isna(frame.loc[1, "auc"])


@pytest.mark.slow
class TestForgetDivergenceOrdering:
    """Seed-pinned forget-set divergence from the retrained model."""

    @pytest.fixture(autouse=True)
    def _setup(self, acceptance_runs):
        self.reports = acceptance_runs.reports(7)

    def test_cure_below_gradient_ascent(self):
        """Test CURE ends closer to the retrained model on the forget set than gradient ascent."""
        assert self.reports[const.METHOD_CURE].jsd_forget < self.reports[const.METHOD_GRADIENT_ASCENT].jsd_forget

    def test_oracle_scores_zero(self):
        """Test the retrained model has zero divergence from itself and the original does not."""
        assert self.reports[LABEL_ORACLE].jsd_forget == 0.0
        assert self.reports[LABEL_ORIGINAL].jsd_forget > 0.0
