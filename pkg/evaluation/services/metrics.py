"""
Utility and unlearning metrics.

Scores are P(Yes) at the answer position. JSD is in nats over the binary
{Yes, No} distribution.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from curerec import const
from curerec.exceptions import ConfigurationError
from interactions.services.prompts import PromptSample
from nanorec.services.model import ModelState, predict_proba

logger = logging.getLogger(__name__)

ACC_THRESHOLD = 0.5


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> float | None:
    """Rank-statistic AUC with tie midpoints; None when only one class is present."""
    labels = np.asarray(labels, dtype=int)
    scores = np.asarray(scores, dtype=float)
    positives = labels == 1
    n_pos = int(positives.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    return float((ranks[positives].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def accuracy(labels: Sequence[int], scores: Sequence[float]) -> float:
    labels = np.asarray(labels, dtype=int)
    predicted = (np.asarray(scores, dtype=float) >= ACC_THRESHOLD).astype(int)
    return float((predicted == labels).mean())


def log_loss(labels: Sequence[int], scores: Sequence[float]) -> float:
    labels = np.asarray(labels, dtype=float)
    p = np.clip(np.asarray(scores, dtype=float), const.PROB_EPS, 1 - const.PROB_EPS)
    return float(-(labels * np.log(p) + (1 - labels) * np.log(1 - p)).mean())


@dataclass(frozen=True)
class Utility:
    auc: float | None
    acc: float
    logloss: float


def auc_acc_logloss(state: ModelState, samples: Sequence[PromptSample]) -> Utility:
    if not samples:
        raise ConfigurationError("cannot evaluate on an empty sample set")
    labels = [s.label for s in samples]
    scores = predict_proba(state, samples)
    auc = roc_auc(labels, scores)
    if auc is None:
        logger.warning("Evaluation set has a single class; AUC reported as missing")
    return Utility(auc=auc, acc=accuracy(labels, scores), logloss=log_loss(labels, scores))


def binary_jsd(p_yes: Sequence[float] | float, q_yes: Sequence[float] | float) -> np.ndarray:
    """Per-sample Jensen-Shannon divergence between two Bernoulli distributions."""
    p = np.clip(np.atleast_1d(np.asarray(p_yes, dtype=float)), const.PROB_EPS, 1 - const.PROB_EPS)
    q = np.clip(np.atleast_1d(np.asarray(q_yes, dtype=float)), const.PROB_EPS, 1 - const.PROB_EPS)
    P = np.stack([p, 1 - p], axis=-1)
    Q = np.stack([q, 1 - q], axis=-1)
    M = (P + Q) / 2
    kl_pm = (P * np.log(P / M)).sum(axis=-1)
    kl_qm = (Q * np.log(Q / M)).sum(axis=-1)
    return np.clip(0.5 * kl_pm + 0.5 * kl_qm, 0.0, math.log(2))


def jsd_forget(unlearned: ModelState, oracle: ModelState, forget: Sequence[PromptSample]) -> float:
    """Mean JSD between the unlearned model and the retrained oracle on forgotten prompts."""
    if not forget:
        raise ConfigurationError("jsd_forget needs a nonempty forget set")
    return float(binary_jsd(predict_proba(unlearned, forget), predict_proba(oracle, forget)).mean())


@dataclass
class MetricsReport:
    label: str
    method: str
    auc: float | None
    acc: float
    logloss: float
    jsd_forget: float | None
    unlearn_wall_seconds: float | None
    conflict_rate: float | None
    forget_auc: float | None = None
    config_hash: str = ""
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")
        return path

    @classmethod
    def read(cls, path: str | Path) -> MetricsReport:
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def csv_row(self) -> dict:
        row = self.to_dict()
        row.pop("config")
        return row


def append_runs_csv(path: str | Path, report: MetricsReport) -> Path:
    """Append one row per report; the header is written with the first row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([report.csv_row()])
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)
    return path
