"""
Prompt rendering and the closed word-level vocabulary.

Every item name is exactly one token, so an item span is always one position
wide and "Yes"/"No" are guaranteed single tokens.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field

from curerec import const
from curerec.exceptions import PromptError

from .graph import InteractionGraph

HISTORY_SLOT = "{history}"
TARGET_SLOT = "{target}"


class Vocabulary:
    """Token <-> id mapping: pad first, then template words, answers, item names."""

    def __init__(self, template_words: Iterable[str], item_names: Iterable[str]):
        tokens = [const.PAD_TOKEN]
        for word in template_words:
            if word not in tokens:
                tokens.append(word)
        for answer in const.ANSWERS:
            if answer in tokens:
                raise PromptError(f"answer word {answer!r} also appears in the template")
            tokens.append(answer)
        reserved = set(tokens)
        for name in sorted(set(item_names)):
            if name in reserved:
                raise PromptError(f"item name {name!r} collides with a template word")
            if not name or any(ch.isspace() for ch in name):
                raise PromptError(f"item name {name!r} is not a single word")
            tokens.append(name)
        self.tokens: tuple[str, ...] = tuple(tokens)
        self._ids = {tok: idx for idx, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise PromptError(f"token {token!r} is not in the vocabulary") from None

    def encode(self, words: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.id(w) for w in words)

    def decode(self, token_ids: Sequence[int]) -> list[str]:
        return [self.tokens[t] for t in token_ids]

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def yes_id(self) -> int:
        return self._ids[const.ANSWER_YES]

    @property
    def no_id(self) -> int:
        return self._ids[const.ANSWER_NO]

    @classmethod
    def for_graph(cls, graph: InteractionGraph, template: PromptTemplate) -> Vocabulary:
        return cls(template.words, graph.item_names.values())


@dataclass(frozen=True)
class PromptSample:
    """A rendered instruction with its answer and item span bookkeeping.

    item_spans maps item id to a half-open token range. The model reads its
    prediction at the last position of token_ids.
    """

    user: str
    history: tuple[str, ...]
    target: str
    token_ids: tuple[int, ...]
    answer: str
    item_spans: dict[str, tuple[int, int]] = field(compare=False)
    edge_id: int | None = None
    negative: bool = False

    @property
    def label(self) -> int:
        return 1 if self.answer == const.ANSWER_YES else 0

    def __len__(self) -> int:
        return len(self.token_ids)


@dataclass(frozen=True)
class PromptTemplate:
    text: str = const.DEFAULT_TEMPLATE
    max_history: int = const.DEFAULT_MAX_HISTORY

    def __post_init__(self):
        words = self.text.split()
        if words.count(HISTORY_SLOT) != 1 or words.count(TARGET_SLOT) != 1:
            raise PromptError("template needs exactly one {history} and one {target} slot")
        if self.max_history < 1:
            raise PromptError("max_history must be >= 1")

    @property
    def words(self) -> list[str]:
        """Literal template words, slots excluded."""
        return [w for w in self.text.split() if w not in (HISTORY_SLOT, TARGET_SLOT)]

    def render(
        self,
        user: str,
        history: Sequence[str],
        target: str,
        answer: str,
        item_names: Mapping[str, str],
        vocab: Vocabulary,
        *,
        edge_id: int | None = None,
        negative: bool = False,
    ) -> PromptSample:
        """Render a (user, history, target) triple.

        history is oldest first; only the most recent max_history items are kept.
        """
        if answer not in const.ANSWERS:
            raise PromptError(f"answer must be one of {const.ANSWERS}, got {answer!r}")
        history = tuple(history)[-self.max_history:]
        if not history:
            raise PromptError(f"user {user} has no history besides {target}")
        if target in history:
            raise PromptError(f"target {target} appears in the history of {user}")
        if len(set(history)) != len(history):
            raise PromptError(f"history of {user} repeats an item")

        words: list[str] = []
        spans: dict[str, tuple[int, int]] = {}
        for word in self.text.split():
            if word == HISTORY_SLOT:
                for item in history:
                    spans[item] = (len(words), len(words) + 1)
                    words.append(_name(item_names, item))
            elif word == TARGET_SLOT:
                spans[target] = (len(words), len(words) + 1)
                words.append(_name(item_names, target))
            else:
                words.append(word)

        return PromptSample(
            user=user,
            history=history,
            target=target,
            token_ids=vocab.encode(words),
            answer=answer,
            item_spans=spans,
            edge_id=edge_id,
            negative=negative,
        )

    def with_replacement(
        self,
        sample: PromptSample,
        replaced: str,
        replacement: str,
        item_names: Mapping[str, str],
        vocab: Vocabulary,
    ) -> PromptSample:
        """Same prompt with one history item swapped in place."""
        if replaced not in sample.history:
            raise PromptError(f"{replaced} is not in the history of {sample.user}")
        history = tuple(replacement if item == replaced else item for item in sample.history)
        return self.render(
            sample.user,
            history,
            sample.target,
            sample.answer,
            item_names,
            vocab,
            edge_id=sample.edge_id,
            negative=sample.negative,
        )


def _name(item_names: Mapping[str, str], item: str) -> str:
    try:
        return item_names[item]
    except KeyError:
        raise PromptError(f"item {item} has no display name") from None


def render_prompt(
    graph: InteractionGraph,
    user: str,
    target_item: str,
    template: PromptTemplate,
    vocab: Vocabulary,
    *,
    answer: str | None = None,
) -> PromptSample:
    """Render the prompt for (user, target) from the user's positive history in graph.

    The answer defaults to the graph label of the edge when it exists.
    """
    edge_id = None
    if graph.has_edge(user, target_item):
        edge_id = graph.edge_id(user, target_item)
        if answer is None:
            label = graph.edges[edge_id].label
            answer = const.ANSWER_YES if label == 1 else const.ANSWER_NO
    if answer is None:
        raise PromptError(f"no interaction ({user}, {target_item}) to take the answer from")
    history = graph.history(user, exclude=target_item)
    return template.render(
        user, history, target_item, answer, graph.item_names, vocab, edge_id=edge_id
    )
