"""
Train/val/test and forget/retain splitting.

All prompts are rendered from the train subgraph so no held-out interaction
leaks into a history. Edge ids in the manifest always refer to the full graph.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from curerec import const
from curerec.exceptions import ConfigurationError, PromptError, SplitError

from .graph import InteractionGraph
from .prompts import PromptSample, PromptTemplate, Vocabulary

logger = logging.getLogger(__name__)

DEFAULT_RATIOS = (0.7, 0.2, 0.1)


class DeletionMode(str, Enum):
    INTERACTION = "interaction"
    USER = "user"
    ITEM = "item"


@dataclass(frozen=True)
class DatasetSplit:
    graph: InteractionGraph
    train_graph: InteractionGraph
    template: PromptTemplate
    vocab: Vocabulary
    seed: int
    mode: DeletionMode
    ratios: tuple[float, float, float]
    forget_fraction: float
    train: tuple[PromptSample, ...]
    val: tuple[PromptSample, ...]
    test: tuple[PromptSample, ...]
    forget: tuple[PromptSample, ...]
    retain_pool: tuple[PromptSample, ...]
    negatives: tuple[PromptSample, ...]

    @property
    def training_samples(self) -> tuple[PromptSample, ...]:
        """Labeled train prompts followed by the sampled negatives."""
        return self.train + self.negatives

    @property
    def forget_ids(self) -> tuple[int, ...]:
        return tuple(s.edge_id for s in self.forget)

    @property
    def retain_ids(self) -> tuple[int, ...]:
        return tuple(s.edge_id for s in self.retain_pool)

    def manifest(self) -> dict:
        """Replayable description of the split."""
        return {
            "graph_hash": self.graph.graph_hash,
            "seed": self.seed,
            "mode": self.mode.value,
            "ratios": list(self.ratios),
            "forget_fraction": self.forget_fraction,
            "max_history": self.template.max_history,
            "train": [s.edge_id for s in self.train],
            "val": [s.edge_id for s in self.val],
            "test": [s.edge_id for s in self.test],
            "forget": list(self.forget_ids),
            "retain": list(self.retain_ids),
            "negatives": [[s.edge_id, s.target] for s in self.negatives],
        }

    def retain_only(self) -> DatasetSplit:
        """The split a model retrained without the forget set would see.

        Retained edges are re-rendered on the graph without forgotten edges;
        negatives follow their source edge. Val/test prompts are unchanged so
        every model is evaluated on identical inputs.
        """
        forgotten = set(self.forget_ids)
        train_ids = (self.graph.edge_id(e.user, e.item) for e in self.train_graph.edges)
        kept_ids = [edge_id for edge_id in train_ids if edge_id not in forgotten]
        retain_graph = self.graph.subgraph(kept_ids)
        train = tuple(_render_edges(self.graph, retain_graph, kept_ids, self.template, self.vocab))
        renderable = {s.edge_id for s in train}
        negatives = []
        for neg in self.negatives:
            if neg.edge_id not in renderable:
                continue
            negatives.append(
                _render_negative(self.graph, retain_graph, neg.edge_id, neg.target, self.template, self.vocab)
            )
        return DatasetSplit(
            graph=self.graph,
            train_graph=retain_graph,
            template=self.template,
            vocab=self.vocab,
            seed=self.seed,
            mode=self.mode,
            ratios=self.ratios,
            forget_fraction=self.forget_fraction,
            train=train,
            val=self.val,
            test=self.test,
            forget=(),
            retain_pool=train,
            negatives=tuple(n for n in negatives if n is not None),
        )


def parse_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    values = tuple(float(r) for r in ratios)
    if len(values) != 3 or any(r < 0 for r in values):
        raise ConfigurationError(f"ratios must be three non-negative numbers, got {ratios!r}")
    if not math.isclose(sum(values), 1.0, abs_tol=1e-9):
        raise ConfigurationError(f"ratios must sum to 1, got {sum(values)}")
    return values  # type: ignore[return-value]


def _answer(label: int) -> str:
    return const.ANSWER_YES if label == 1 else const.ANSWER_NO


def _render_edges(
    graph: InteractionGraph,
    history_graph: InteractionGraph,
    edge_ids: Sequence[int],
    template: PromptTemplate,
    vocab: Vocabulary,
) -> list[PromptSample]:
    samples = []
    dropped = 0
    for edge_id in sorted(edge_ids):
        edge = graph.edges[edge_id]
        try:
            samples.append(
                template.render(
                    edge.user,
                    history_graph.history(edge.user, exclude=edge.item),
                    edge.item,
                    _answer(edge.label),
                    graph.item_names,
                    vocab,
                    edge_id=edge_id,
                )
            )
        except PromptError:
            dropped += 1
    if dropped:
        logger.warning("Dropped %d of %d interactions with no renderable history", dropped, len(edge_ids))
    return samples


def _render_negative(
    graph: InteractionGraph,
    history_graph: InteractionGraph,
    source_edge: int,
    item: str,
    template: PromptTemplate,
    vocab: Vocabulary,
) -> PromptSample | None:
    user = graph.edges[source_edge].user
    try:
        return template.render(
            user,
            history_graph.history(user, exclude=item),
            item,
            const.ANSWER_NO,
            graph.item_names,
            vocab,
            edge_id=source_edge,
            negative=True,
        )
    except PromptError:
        return None


def _sample_negatives(
    graph: InteractionGraph,
    train_graph: InteractionGraph,
    train: Sequence[PromptSample],
    template: PromptTemplate,
    vocab: Vocabulary,
    rng: np.random.Generator,
) -> list[PromptSample]:
    items = sorted(graph.items)
    negatives = []
    for sample in train:
        if sample.label != 1:
            continue
        seen = {e.item for e in graph.user_edges(sample.user)}
        candidates = [i for i in items if i not in seen]
        if not candidates:
            logger.warning("User %s has interacted with every item; no negative sampled", sample.user)
            continue
        item = candidates[int(rng.integers(len(candidates)))]
        negative = _render_negative(graph, train_graph, sample.edge_id, item, template, vocab)
        if negative is not None:
            negatives.append(negative)
    return negatives


def _select_forget(
    graph: InteractionGraph,
    train: Sequence[PromptSample],
    fraction: float,
    mode: DeletionMode,
    rng: np.random.Generator,
) -> set[int]:
    target = round(fraction * len(train))
    if mode is DeletionMode.INTERACTION:
        ids = [s.edge_id for s in train]
        chosen = rng.choice(len(ids), size=target, replace=False) if target else []
        return {ids[int(k)] for k in chosen}

    def owner(sample: PromptSample) -> str:
        return sample.user if mode is DeletionMode.USER else sample.target

    grouped: dict[str, list[int]] = {}
    for sample in train:
        grouped.setdefault(owner(sample), []).append(sample.edge_id)
    entities = sorted(grouped)
    selected: set[int] = set()
    for k in rng.permutation(len(entities)):
        if len(selected) >= target:
            break
        selected.update(grouped[entities[int(k)]])
    return selected


def split(
    graph: InteractionGraph,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    forget_fraction: float = 0.2,
    deletion_mode: DeletionMode | str = DeletionMode.INTERACTION,
    seed: int = 7,
    *,
    template: PromptTemplate | None = None,
) -> DatasetSplit:
    """Partition graph edges and render every prompt.

    Edges whose user has no other positive train interaction cannot be
    rendered and are dropped from their split.
    """
    ratios = parse_ratios(ratios)
    if not 0 < forget_fraction < 1:
        raise ConfigurationError(f"forget_fraction must be in (0, 1), got {forget_fraction}")
    mode = DeletionMode(deletion_mode)
    template = template or PromptTemplate()
    if len(graph) == 0:
        raise SplitError("cannot split an empty graph")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(graph))
    n_train = round(ratios[0] * len(graph))
    n_val = round(ratios[1] * len(graph))
    train_ids = order[:n_train].tolist()
    val_ids = order[n_train : n_train + n_val].tolist()
    test_ids = order[n_train + n_val :].tolist()

    train_graph = graph.subgraph(train_ids)
    vocab = Vocabulary.for_graph(graph, template)
    train = _render_edges(graph, train_graph, train_ids, template, vocab)
    val = _render_edges(graph, train_graph, val_ids, template, vocab)
    test = _render_edges(graph, train_graph, test_ids, template, vocab)
    if not train:
        raise SplitError("no renderable train interactions")

    forget_ids = _select_forget(graph, train, forget_fraction, mode, rng)
    forget = tuple(s for s in train if s.edge_id in forget_ids)
    retain_pool = tuple(s for s in train if s.edge_id not in forget_ids)
    if not forget:
        raise SplitError(f"forget set is empty (fraction {forget_fraction}, {len(train)} train samples)")
    if not retain_pool:
        raise SplitError("forget set covers the whole train set; nothing left to retain")

    negatives = _sample_negatives(graph, train_graph, train, template, vocab, rng)
    logger.info(
        "Split %d edges (%s mode, seed %d): train %d, val %d, test %d, forget %d, retain %d, negatives %d",
        len(graph),
        mode.value,
        seed,
        len(train),
        len(val),
        len(test),
        len(forget),
        len(retain_pool),
        len(negatives),
    )
    return DatasetSplit(
        graph=graph,
        train_graph=train_graph,
        template=template,
        vocab=vocab,
        seed=seed,
        mode=mode,
        ratios=ratios,
        forget_fraction=forget_fraction,
        train=tuple(train),
        val=tuple(val),
        test=tuple(test),
        forget=forget,
        retain_pool=retain_pool,
        negatives=tuple(negatives),
    )
