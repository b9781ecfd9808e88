"""
Edge attribution scores.

Intervention scores estimate the effect of erasing an edge message to first
order, |m . dDelta/d(child input)|. Patching scores contrast the message with
the one recorded on a corrupt prompt, |(m* - m) . dDelta/d(child input)|, with
gradients taken on the clean run. Both read everything from one recorded
forward/backward pair per clean batch.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch

from curerec.exceptions import (
    ConfigurationError,
    NonFiniteGradientError,
    PatchingAlignmentError,
)
from interactions.services.prompts import PromptSample
from nanorec.services.graph import Edge, edge_key, parse_edge_key
from nanorec.services.model import (
    RECORD_GRADS,
    RECORD_MESSAGES,
    ModelState,
    forward,
    intervene_forward,
)

logger = logging.getLogger(__name__)

METHOD_INTERVENTION = "intervention"
METHOD_PATCHING = "patching"
ATTRIBUTION_METHODS = (METHOD_INTERVENTION, METHOD_PATCHING)

AGGREGATE_MEAN = "mean"
AGGREGATE_MAX = "max"


@dataclass(frozen=True)
class EdgeScoreMap:
    scores: dict[Edge, float]
    method: str
    sample_count: int = 1
    signed: dict[Edge, float] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.method not in ATTRIBUTION_METHODS:
            raise ConfigurationError(f"unknown attribution method {self.method!r}")
        for edge, score in self.scores.items():
            if not math.isfinite(score) or score < 0:
                raise ConfigurationError(f"score of {edge_key(edge)} must be finite and >= 0, got {score}")

    def __len__(self) -> int:
        return len(self.scores)

    def __getitem__(self, edge: Edge) -> float:
        return self.scores[edge]

    def ranked(self) -> list[tuple[Edge, float]]:
        """Edges by descending score, ties broken by edge key."""
        return sorted(self.scores.items(), key=lambda item: (-item[1], edge_key(item[0])))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "sample_count": self.sample_count,
            "edges": {edge_key(edge): score for edge, score in self.scores.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, payload: Mapping) -> EdgeScoreMap:
        return cls(
            scores={parse_edge_key(key): float(value) for key, value in payload["edges"].items()},
            method=payload["method"],
            sample_count=int(payload.get("sample_count", 1)),
        )

    @classmethod
    def from_json(cls, text: str) -> EdgeScoreMap:
        return cls.from_dict(json.loads(text))


def _signed_to_maps(state: ModelState, signed: torch.Tensor, method: str) -> list[EdgeScoreMap]:
    edges = state.graph.edges
    maps = []
    for row in signed.tolist():
        values = dict(zip(edges, row))
        for edge, value in values.items():
            if not math.isfinite(value):
                raise NonFiniteGradientError(edge[1])
        maps.append(
            EdgeScoreMap(
                scores={edge: abs(value) for edge, value in values.items()},
                method=method,
                signed=values,
            )
        )
    return maps


def _contract(state: ModelState, messages: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor]) -> torch.Tensor:
    """[B, E] inner products of parent messages with child input gradients."""
    columns = [(messages[parent] * grads[child]).sum(dim=-1) for parent, child in state.graph.edges]
    return torch.stack(columns, dim=-1)


def intervention_scores(state: ModelState, samples: Sequence[PromptSample]) -> list[EdgeScoreMap]:
    """Per-sample intervention maps for a batch; one forward and one backward in total."""
    record = forward(state, samples, RECORD_GRADS)
    return _signed_to_maps(state, _contract(state, record.node_outputs, record.node_grads), METHOD_INTERVENTION)


def check_alignment(sample: PromptSample, corrupt: PromptSample) -> None:
    """Clean and corrupt prompts must share length and every non-history token."""
    if len(sample) != len(corrupt):
        raise PatchingAlignmentError(
            f"clean prompt has {len(sample)} tokens, corrupt prompt {len(corrupt)}"
        )
    history_positions = {
        pos
        for item in sample.history
        for pos in range(*sample.item_spans[item])
    }
    for pos, (a, b) in enumerate(zip(sample.token_ids, corrupt.token_ids)):
        if a != b and pos not in history_positions:
            raise PatchingAlignmentError(f"prompts differ outside the history at position {pos}")


def patching_scores(
    state: ModelState,
    samples: Sequence[PromptSample],
    corrupts: Sequence[PromptSample],
) -> list[EdgeScoreMap]:
    """Per-sample patching maps; two forwards and one backward in total."""
    if len(samples) != len(corrupts):
        raise PatchingAlignmentError(f"{len(samples)} clean prompts but {len(corrupts)} corrupt prompts")
    for sample, corrupt in zip(samples, corrupts):
        check_alignment(sample, corrupt)
    clean = forward(state, samples, RECORD_GRADS)
    dirty = forward(state, corrupts, RECORD_MESSAGES)
    differences = {
        name: dirty.node_outputs[name] - clean.node_outputs[name] for name in clean.node_outputs
    }
    return _signed_to_maps(state, _contract(state, differences, clean.node_grads), METHOD_PATCHING)


def score_intervention(state: ModelState, sample: PromptSample) -> EdgeScoreMap:
    return intervention_scores(state, [sample])[0]


def score_patching(state: ModelState, sample: PromptSample, corrupt_sample: PromptSample) -> EdgeScoreMap:
    return patching_scores(state, [sample], [corrupt_sample])[0]


def aggregate(maps: Iterable[EdgeScoreMap], how: str = AGGREGATE_MEAN) -> EdgeScoreMap:
    """Per-edge mean (or max) over a sample set; independent of sample order."""
    maps = list(maps)
    if not maps:
        raise ConfigurationError("cannot aggregate an empty set of score maps")
    methods = {m.method for m in maps}
    if len(methods) != 1:
        raise ConfigurationError(f"cannot aggregate mixed methods {sorted(methods)}")
    if how not in (AGGREGATE_MEAN, AGGREGATE_MAX):
        raise ConfigurationError(f"unknown aggregation {how!r}")

    edges = maps[0].scores.keys()
    total = sum(m.sample_count for m in maps)
    if how == AGGREGATE_MEAN:
        scores = {
            edge: math.fsum(m.scores[edge] * m.sample_count for m in maps) / total for edge in edges
        }
    else:
        scores = {edge: max(m.scores[edge] for m in maps) for edge in edges}
    return EdgeScoreMap(scores=scores, method=methods.pop(), sample_count=total)


def score_maps(
    state: ModelState,
    samples: Sequence[PromptSample],
    method: str = METHOD_INTERVENTION,
    *,
    corrupts: Sequence[PromptSample] | None = None,
    batch_size: int = 64,
) -> list[EdgeScoreMap]:
    """One score map per sample, computed in batches."""
    if method == METHOD_PATCHING and corrupts is None:
        raise ConfigurationError("patching needs one corrupt prompt per sample")
    maps: list[EdgeScoreMap] = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        if method == METHOD_INTERVENTION:
            maps.extend(intervention_scores(state, chunk))
        elif method == METHOD_PATCHING:
            maps.extend(patching_scores(state, chunk, corrupts[start : start + batch_size]))
        else:
            raise ConfigurationError(f"unknown attribution method {method!r}")
    return maps


def score_set(
    state: ModelState,
    samples: Sequence[PromptSample],
    method: str = METHOD_INTERVENTION,
    *,
    corrupts: Sequence[PromptSample] | None = None,
    how: str = AGGREGATE_MEAN,
    batch_size: int = 64,
) -> EdgeScoreMap:
    """Score and aggregate a whole sample set."""
    return aggregate(score_maps(state, samples, method, corrupts=corrupts, batch_size=batch_size), how)


def exact_intervention_scores(state: ModelState, sample: PromptSample) -> EdgeScoreMap:
    """|Delta - Delta(edge zeroed)| by one exact intervened forward per edge."""
    base = forward(state, sample).delta.item()
    scores = {
        edge: abs(intervene_forward(state, sample, {edge: None}).delta.item() - base)
        for edge in state.graph.edges
    }
    return EdgeScoreMap(scores=scores, method=METHOD_INTERVENTION)


def exact_patching_scores(state: ModelState, sample: PromptSample, corrupt: PromptSample) -> EdgeScoreMap:
    """|Delta - Delta(edge carries the corrupt message)| per edge."""
    check_alignment(sample, corrupt)
    base = forward(state, sample).delta.item()
    dirty = forward(state, corrupt, RECORD_MESSAGES)
    scores = {
        edge: abs(intervene_forward(state, sample, {edge: dirty.message(edge)}).delta.item() - base)
        for edge in state.graph.edges
    }
    return EdgeScoreMap(scores=scores, method=METHOD_PATCHING)


def gini(scores: EdgeScoreMap | Sequence[float]) -> float:
    """Gini coefficient of nonnegative scores; 0 for all-equal, toward 1 when concentrated."""
    values = np.sort(np.asarray(list(scores.scores.values()) if isinstance(scores, EdgeScoreMap) else scores, dtype=float))
    total = values.sum()
    if len(values) == 0 or total == 0:
        return 0.0
    ranks = np.arange(1, len(values) + 1)
    return float((2 * (ranks * values).sum()) / (len(values) * total) - (len(values) + 1) / len(values))


def rank_correlation(first: EdgeScoreMap, second: EdgeScoreMap, edges: Iterable[Edge] | None = None) -> float:
    """Spearman correlation over shared edges (average ranks for ties)."""
    edges = sorted(edges if edges is not None else first.scores.keys(), key=edge_key)
    a = pd.Series([first.scores[e] for e in edges]).rank(method="average")
    b = pd.Series([second.scores[e] for e in edges]).rank(method="average")
    return float(a.corr(b))
