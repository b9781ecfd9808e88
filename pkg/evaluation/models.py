# evaluation/models.py
"""
Persisted evaluation results, one row per evaluated checkpoint.
"""

from django.db import models


class RunRecord(models.Model):
    """
    Metrics of one evaluated model inside a run directory.
    """

    class Method(models.TextChoices):
        ORIGINAL = "original", "Original"
        ORACLE = "oracle", "Retrain oracle"
        CURE = "cure", "Circuit-aware unlearning"
        UNIFORM = "uniform", "Uniform update"
        GRADIENT_ASCENT = "gradient_ascent", "Gradient ascent"
        PCGRAD = "pcgrad", "Gradient surgery"

    run_dir = models.CharField(max_length=512, db_index=True)
    label = models.CharField(max_length=64, help_text="Checkpoint label, e.g. cure or cure_omega0.4")
    method = models.CharField(max_length=20, choices=Method.choices)

    # Utility on the test split
    auc = models.FloatField(null=True, blank=True)
    acc = models.FloatField()
    logloss = models.FloatField()

    # Unlearning
    jsd_forget = models.FloatField(null=True, blank=True)
    forget_auc = models.FloatField(null=True, blank=True)
    unlearn_wall_seconds = models.FloatField(null=True, blank=True)
    conflict_rate = models.FloatField(null=True, blank=True)

    config_hash = models.CharField(max_length=64, blank=True)
    config = models.JSONField(default=dict, blank=True)

    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["run_dir", "label"]
        indexes = [
            models.Index(fields=["run_dir", "method"], name="rr_run_method_idx"),
        ]
        constraints = [
            models.UniqueConstraint(fields=["run_dir", "label"], name="rr_unique_run_label"),
        ]

    def __str__(self):
        return f"{self.label} ({self.method}) in {self.run_dir}"

    @classmethod
    def record(cls, run_dir, report):
        """Insert or replace the row for report.label in run_dir."""
        values = report.to_dict()
        label = values.pop("label")
        obj, _ = cls.objects.update_or_create(
            run_dir=str(run_dir),
            label=label,
            defaults=values,
        )
        return obj

    def as_row(self) -> dict:
        return {
            "label": self.label,
            "method": self.method,
            "auc": self.auc,
            "acc": self.acc,
            "logloss": self.logloss,
            "jsd_forget": self.jsd_forget,
            "unlearn_wall_seconds": self.unlearn_wall_seconds,
            "conflict_rate": self.conflict_rate,
        }
