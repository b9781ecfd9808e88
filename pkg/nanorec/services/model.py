"""
Functional decoder-only transformer written over an explicit residual stream.

Each head and MLP is a node of the ComputationGraph; the input of a node is the
sum of the outputs of every earlier node, so edge messages and per-node input
gradients can be read off a single forward/backward pair. Parameters live in a
flat dict keyed "<node>.<role>" (embedding under "embed.", unembedding under
"unembed.").
"""

from __future__ import annotations

import contextlib
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import torch
import torch.nn.functional as F

from curerec import const
from curerec.exceptions import (
    ConfigurationError,
    NonFiniteGradientError,
    SequenceTooLongError,
)
from interactions.services.prompts import PromptSample

from .config import PROBABILITY_RESTRICTED, ModelConfig
from .graph import ComputationGraph, Edge, parse_edge_key

logger = logging.getLogger(__name__)

DTYPE = torch.float64
LN_EPS = 1e-5
INIT_STD = 0.02

RECORD_NONE = "none"
RECORD_MESSAGES = "messages"
RECORD_GRADS = "messages_and_grads"
RECORD_LEVELS = (RECORD_NONE, RECORD_MESSAGES, RECORD_GRADS)

EMBED_PREFIX = "embed"
UNEMBED_PREFIX = "unembed"
ATTN_ROLES = ("ln_g", "ln_b", "W_Q", "W_K", "W_V", "W_O", "b_O")
MLP_ROLES = ("ln_g", "ln_b", "W_in", "b_in", "W_out", "b_out")


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, dh, m = config.width, config.head_dim, config.mlp_width
    shapes: dict[str, tuple[int, ...]] = {
        f"{EMBED_PREFIX}.W_E": (config.vocab_size, d),
        f"{EMBED_PREFIX}.W_pos": (config.max_seq_len, d),
        f"{UNEMBED_PREFIX}.ln_g": (d,),
        f"{UNEMBED_PREFIX}.ln_b": (d,),
        f"{UNEMBED_PREFIX}.W_U": (d, config.vocab_size),
    }
    graph = ComputationGraph.for_config(config)
    for node in graph.nodes:
        if node.kind == const.KIND_ATTN:
            shapes.update(
                {
                    f"{node.name}.ln_g": (d,),
                    f"{node.name}.ln_b": (d,),
                    f"{node.name}.W_Q": (d, dh),
                    f"{node.name}.W_K": (d, dh),
                    f"{node.name}.W_V": (d, dh),
                    f"{node.name}.W_O": (dh, d),
                    f"{node.name}.b_O": (d,),
                }
            )
        elif node.kind == const.KIND_MLP:
            shapes.update(
                {
                    f"{node.name}.ln_g": (d,),
                    f"{node.name}.ln_b": (d,),
                    f"{node.name}.W_in": (d, m),
                    f"{node.name}.b_in": (m,),
                    f"{node.name}.W_out": (m, d),
                    f"{node.name}.b_out": (d,),
                }
            )
    return shapes


def node_param_keys(node: str, config: ModelConfig) -> list[str]:
    """Parameter keys owned by a DAG node."""
    if node == const.NODE_INPUT:
        return [f"{EMBED_PREFIX}.W_E", f"{EMBED_PREFIX}.W_pos"]
    if node == const.NODE_LOGITS:
        return [f"{UNEMBED_PREFIX}.{role}" for role in ("ln_g", "ln_b", "W_U")]
    kind = ComputationGraph.for_config(config).node(node).kind
    roles = ATTN_ROLES if kind == const.KIND_ATTN else MLP_ROLES
    return [f"{node}.{role}" for role in roles]


@dataclass(eq=False)
class ModelState:
    """Named float64 parameters plus pass counters used by cost assertions."""

    config: ModelConfig
    params: dict[str, torch.Tensor]
    forward_passes: int = 0
    backward_passes: int = 0

    @cached_property
    def graph(self) -> ComputationGraph:
        return ComputationGraph.for_config(self.config)

    def clone(self) -> ModelState:
        return ModelState(
            self.config,
            {key: value.detach().clone() for key, value in self.params.items()},
        )

    def reset_counters(self) -> None:
        self.forward_passes = 0
        self.backward_passes = 0

    def parameter_count(self, keys: Sequence[str] | None = None) -> int:
        keys = self.params.keys() if keys is None else keys
        return sum(self.params[key].numel() for key in keys)

    def is_finite(self) -> bool:
        return all(bool(torch.isfinite(value).all()) for value in self.params.values())

    def requires_grad_(self, flag: bool = True, keys: Sequence[str] | None = None) -> ModelState:
        for key in self.params if keys is None else keys:
            self.params[key].requires_grad_(flag)
        return self

    def equals(self, other: ModelState) -> bool:
        """Bitwise equality of every parameter."""
        if self.config != other.config or self.params.keys() != other.params.keys():
            return False
        return all(torch.equal(self.params[k], other.params[k]) for k in self.params)


def init(config: ModelConfig) -> ModelState:
    """Deterministic initialization from config.seed."""
    generator = torch.Generator().manual_seed(config.seed)
    params: dict[str, torch.Tensor] = {}
    for key, shape in sorted(parameter_shapes(config).items()):
        role = key.rsplit(".", 1)[1]
        if role == "ln_g":
            params[key] = torch.ones(shape, dtype=DTYPE)
        elif role in ("ln_b", "b_O", "b_in", "b_out"):
            params[key] = torch.zeros(shape, dtype=DTYPE)
        else:
            params[key] = torch.randn(shape, generator=generator, dtype=DTYPE) * INIT_STD
    return ModelState(config, params)


@dataclass(frozen=True)
class TokenBatch:
    """Left-padded token ids; offsets[b] is the number of pad tokens of row b."""

    tokens: torch.Tensor
    mask: torch.Tensor
    positions: torch.Tensor
    offsets: tuple[int, ...]


def make_batch(samples: Sequence[PromptSample], config: ModelConfig) -> TokenBatch:
    if not samples:
        raise ConfigurationError("cannot run the model on an empty batch")
    lengths = [len(s.token_ids) for s in samples]
    longest = max(lengths)
    if longest > config.max_seq_len:
        raise SequenceTooLongError(
            f"prompt of {longest} tokens exceeds max_seq_len {config.max_seq_len}"
        )
    tokens = torch.full((len(samples), longest), config.pad_id, dtype=torch.long)
    mask = torch.zeros((len(samples), longest), dtype=torch.bool)
    positions = torch.zeros((len(samples), longest), dtype=torch.long)
    offsets = []
    for row, sample in enumerate(samples):
        ids = torch.tensor(sample.token_ids, dtype=torch.long)
        if int(ids.max()) >= config.vocab_size or int(ids.min()) < 0:
            raise ConfigurationError(f"token id outside vocabulary of size {config.vocab_size}")
        pad = longest - len(ids)
        tokens[row, pad:] = ids
        mask[row, pad:] = True
        positions[row, pad:] = torch.arange(len(ids))
        offsets.append(pad)
    return TokenBatch(tokens, mask, positions, tuple(offsets))


@dataclass
class ForwardRecord:
    """Outputs of one pass over a batch.

    node_outputs holds each node's output at the answer position, which is the
    message it sends along every outgoing edge. node_grads holds dDelta/d(node
    input) at the answer position; embedding_grads holds dDelta/d(embedding)
    at every position.
    """

    logits: torch.Tensor
    p_yes: torch.Tensor
    p_no: torch.Tensor
    offsets: tuple[int, ...]
    node_outputs: dict[str, torch.Tensor] | None = None
    node_inputs: dict[str, torch.Tensor] | None = None
    node_grads: dict[str, torch.Tensor] | None = None
    embedding_grads: torch.Tensor | None = None
    config: ModelConfig | None = field(default=None, repr=False)

    @property
    def delta(self) -> torch.Tensor:
        return self.p_yes - self.p_no

    @property
    def answer_logits(self) -> torch.Tensor:
        return self.logits[:, -1]

    def message(self, edge: Edge | str) -> torch.Tensor:
        if self.node_outputs is None:
            raise ConfigurationError("record was made without messages")
        parent, _ = parse_edge_key(edge) if isinstance(edge, str) else edge
        return self.node_outputs[parent]

    def answer_log_probs(self) -> torch.Tensor:
        """Log P(Yes), log P(No) per row, shape [B, 2]."""
        return answer_log_probs(self.answer_logits, self.config)


def answer_log_probs(answer_logits: torch.Tensor, config: ModelConfig) -> torch.Tensor:
    if config.probability == PROBABILITY_RESTRICTED:
        pair = answer_logits[:, [config.yes_id, config.no_id]]
        return F.log_softmax(pair, dim=-1)
    full = F.log_softmax(answer_logits, dim=-1)
    return full[:, [config.yes_id, config.no_id]]


def _attention_mask(mask: torch.Tensor) -> torch.Tensor:
    """[B, T, T] allowed-key mask: causal, real keys only, diagonal always on."""
    length = mask.shape[1]
    causal = torch.ones(length, length, dtype=torch.bool).tril()
    diagonal = torch.eye(length, dtype=torch.bool)
    return (causal[None] & mask[:, None, :]) | diagonal[None]


def _attention(params, name: str, x: torch.Tensor, allowed: torch.Tensor, head_dim: int) -> torch.Tensor:
    h = F.layer_norm(x, x.shape[-1:], params[f"{name}.ln_g"], params[f"{name}.ln_b"], LN_EPS)
    q = h @ params[f"{name}.W_Q"]
    k = h @ params[f"{name}.W_K"]
    v = h @ params[f"{name}.W_V"]
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(head_dim)
    weights = torch.softmax(scores.masked_fill(~allowed, float("-inf")), dim=-1)
    return (weights @ v) @ params[f"{name}.W_O"] + params[f"{name}.b_O"]


def _mlp(params, name: str, x: torch.Tensor) -> torch.Tensor:
    h = F.layer_norm(x, x.shape[-1:], params[f"{name}.ln_g"], params[f"{name}.ln_b"], LN_EPS)
    hidden = F.gelu(h @ params[f"{name}.W_in"] + params[f"{name}.b_in"])
    return hidden @ params[f"{name}.W_out"] + params[f"{name}.b_out"]


def unembed(params: Mapping[str, torch.Tensor], residual: torch.Tensor) -> torch.Tensor:
    """Logits from a residual-stream vector (the logits node's input)."""
    h = F.layer_norm(
        residual,
        residual.shape[-1:],
        params[f"{UNEMBED_PREFIX}.ln_g"],
        params[f"{UNEMBED_PREFIX}.ln_b"],
        LN_EPS,
    )
    return h @ params[f"{UNEMBED_PREFIX}.W_U"]


def _at_answer(correction: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """A [B, T, d] tensor that is zero except for correction at the last position."""
    return torch.cat([torch.zeros_like(like[:, :-1]), correction[:, None, :]], dim=1)


def _run(
    state: ModelState,
    batch: TokenBatch,
    patch: Mapping[Edge, torch.Tensor],
    probes: Mapping[str, torch.Tensor] | None,
):
    params = state.params
    graph = state.graph
    outputs: dict[str, torch.Tensor] = {}
    inputs: dict[str, torch.Tensor] = {}

    embedding = params[f"{EMBED_PREFIX}.W_E"][batch.tokens] + params[f"{EMBED_PREFIX}.W_pos"][batch.positions]
    if probes is not None:
        embedding = embedding + probes[const.NODE_INPUT]
    outputs[const.NODE_INPUT] = embedding
    allowed = _attention_mask(batch.mask)

    logits = None
    for node in graph.nodes[1:]:
        parents = graph.parents(node.name)
        x = outputs[parents[0]]
        for parent in parents[1:]:
            x = x + outputs[parent]
        for parent in parents:
            replacement = patch.get((parent, node.name))
            if replacement is not None:
                x = x + _at_answer(replacement - outputs[parent][:, -1], x)
        if probes is not None:
            x = x + probes[node.name]
        inputs[node.name] = x

        if node.kind == const.KIND_ATTN:
            outputs[node.name] = _attention(params, node.name, x, allowed, state.config.head_dim)
        elif node.kind == const.KIND_MLP:
            outputs[node.name] = _mlp(params, node.name, x)
        else:
            logits = unembed(params, x)
    return outputs, inputs, logits


def _as_list(samples: PromptSample | Sequence[PromptSample]) -> list[PromptSample]:
    return [samples] if isinstance(samples, PromptSample) else list(samples)


def _build_record(state, batch, outputs, inputs, logits, record: str, all_positions: bool) -> ForwardRecord:
    answer = answer_log_probs(logits[:, -1], state.config).exp()
    result = ForwardRecord(
        logits=logits,
        p_yes=answer[:, 0],
        p_no=answer[:, 1],
        offsets=batch.offsets,
        config=state.config,
    )
    if record != RECORD_NONE:
        pick = (lambda t: t.detach()) if all_positions else (lambda t: t[:, -1].detach())
        result.node_outputs = {name: pick(t) for name, t in outputs.items()}
        result.node_inputs = {name: pick(t) for name, t in inputs.items()}
    return result


def forward(
    state: ModelState,
    samples: PromptSample | Sequence[PromptSample],
    record: str = RECORD_NONE,
    *,
    all_positions: bool = False,
) -> ForwardRecord:
    """Run the model; with messages_and_grads also one backward pass seeded at Delta.

    Recording never changes the logits. Gradients for a batch are per row
    because rows do not interact.
    """
    if record not in RECORD_LEVELS:
        raise ConfigurationError(f"record must be one of {RECORD_LEVELS}, got {record!r}")
    samples = _as_list(samples)
    batch = make_batch(samples, state.config)

    probes = None
    if record == RECORD_GRADS:
        shape = (*batch.tokens.shape, state.config.width)
        probes = {
            name: torch.zeros(shape, dtype=DTYPE, requires_grad=True)
            for name in state.graph.node_names
        }

    with torch.enable_grad() if probes is not None else contextlib.nullcontext():
        outputs, inputs, logits = _run(state, batch, {}, probes)
    state.forward_passes += 1
    result = _build_record(state, batch, outputs, inputs, logits, record, all_positions)

    if record == RECORD_GRADS:
        names = list(state.graph.node_names)
        grads = torch.autograd.grad(result.delta.sum(), [probes[name] for name in names])
        state.backward_passes += 1
        by_name = dict(zip(names, grads))
        for name in names:
            if not bool(torch.isfinite(by_name[name]).all()):
                logger.error("Non-finite dDelta/d(input) at node %s", name)
                raise NonFiniteGradientError(name)
        result.embedding_grads = by_name[const.NODE_INPUT].detach()
        pick = (lambda t: t.detach()) if all_positions else (lambda t: t[:, -1].detach())
        result.node_grads = {name: pick(g) for name, g in by_name.items() if name != const.NODE_INPUT}
        result.logits = result.logits.detach()
        result.p_yes = result.p_yes.detach()
        result.p_no = result.p_no.detach()
    return result


def intervene_forward(
    state: ModelState,
    samples: PromptSample | Sequence[PromptSample],
    patch: Mapping[Edge | str, torch.Tensor | None],
    record: str = RECORD_NONE,
) -> ForwardRecord:
    """Exact forward where each patched edge carries a replacement message.

    A replacement of None ablates the edge (zero message). Replacements act at
    the answer position; every downstream node is recomputed.
    """
    if record == RECORD_GRADS:
        raise ConfigurationError("intervene_forward does not record gradients")
    samples = _as_list(samples)
    batch = make_batch(samples, state.config)
    rows, width = len(samples), state.config.width

    resolved: dict[Edge, torch.Tensor] = {}
    for key, replacement in patch.items():
        edge = state.graph.check_edge(parse_edge_key(key) if isinstance(key, str) else key)
        if replacement is None:
            replacement = torch.zeros(rows, width, dtype=DTYPE)
        replacement = torch.as_tensor(replacement, dtype=DTYPE)
        if replacement.dim() == 1:
            replacement = replacement.expand(rows, width)
        resolved[edge] = replacement

    outputs, inputs, logits = _run(state, batch, resolved, None)
    state.forward_passes += 1
    return _build_record(state, batch, outputs, inputs, logits, record, False)


def predict_proba(
    state: ModelState,
    samples: Sequence[PromptSample],
    *,
    batch_size: int = 256,
) -> np.ndarray:
    """P(Yes) for every sample, without gradients."""
    scores = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start : start + batch_size]
            scores.append(forward(state, chunk).p_yes.numpy())
    if not scores:
        return np.zeros(0)
    return np.concatenate(scores)
