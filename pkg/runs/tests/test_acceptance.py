import pytest

from curerec import const
from runs.services.pipeline import LABEL_ORACLE, unlearn_label

SEEDS = (7, 8, 9)
SWEEP = (0.2, 0.4, 0.6, 0.8)


@pytest.mark.slow
class TestConflictSuppression:
    """Seed-pinned comparison of applied-update conflicts."""

    @pytest.fixture(autouse=True)
    def _setup(self, acceptance_runs):
        self.reports = acceptance_runs.reports(SEEDS[0])

    def test_uniform_conflicts_exceed_cure(self):
        """Test the uniform baseline conflicts on over 10% of steps while CURE never does."""
        cure = self.reports[const.METHOD_CURE].conflict_rate
        uniform = self.reports[const.METHOD_UNIFORM].conflict_rate

        assert cure == 0.0
        assert uniform > 0.1
        assert uniform > cure


@pytest.mark.slow
class TestDirectionalUnlearning:
    """Seed-pinned end-to-end runs on the default 3-cluster dataset."""

    @pytest.fixture(autouse=True)
    def _setup(self, acceptance_runs):
        self.runs = {seed: acceptance_runs.reports(seed) for seed in SEEDS}

    def test_cure_closest_to_oracle_on_forget_set(self):
        """Test CURE's forget-set JSD beats both baselines in at least two of three seeds."""
        wins = 0
        for reports in self.runs.values():
            cure = reports[const.METHOD_CURE].jsd_forget
            wins += cure < reports[const.METHOD_UNIFORM].jsd_forget and cure < reports[const.METHOD_GRADIENT_ASCENT].jsd_forget

        assert wins >= 2

    def test_cure_utility_near_oracle(self):
        """Test CURE's test AUC stays within 0.05 of the retrained model's."""
        for reports in self.runs.values():
            assert abs(reports[const.METHOD_CURE].auc - reports[LABEL_ORACLE].auc) <= 0.05

    def test_cure_faster_than_retraining(self):
        """Test CURE takes under half the time of retraining from scratch."""
        for reports in self.runs.values():
            retrain = reports[LABEL_ORACLE].unlearn_wall_seconds

            assert retrain > 0
            assert reports[const.METHOD_CURE].unlearn_wall_seconds < 0.5 * retrain


@pytest.mark.slow
class TestRetainWeightSweep:
    """Seed-pinned sweep of the retain weight."""

    def test_lowest_weight_has_lowest_auc(self, acceptance_runs):
        """Test the smallest retain weight gives the strictly lowest test AUC of the sweep."""
        reports = acceptance_runs.sweep(SEEDS[0], SWEEP)
        aucs = {weight: reports[unlearn_label(const.METHOD_CURE, weight)].auc for weight in SWEEP}

        assert all(aucs[SWEEP[0]] < aucs[weight] for weight in SWEEP[1:])
