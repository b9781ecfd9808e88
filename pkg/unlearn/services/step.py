"""
One unlearning step.

Gradients of both objectives are taken once over every trainable key and then
routed: forget-specific parameters follow the forget gradient only,
retain-specific parameters the retain gradient only, and shared parameters
the projected weighted combination. Untouched parameters are never written.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import torch

from circuits.services.partition import ParameterPartition
from curerec.exceptions import NonFiniteGradientError
from interactions.services.prompts import PromptSample
from nanorec.services.model import ModelState

from .config import OPTIMIZER_ADAMW, UnlearnConfig
from .losses import answer_nll, forget_loss, retain_loss
from .projection import ProjectedPair, alignment, cosine, project_pair

logger = logging.getLogger(__name__)

OBJECTIVE_KL = "kl"
OBJECTIVE_NLL = "nll"

COMBINE_SUM = "sum"
COMBINE_PCGRAD = "pcgrad"

Grads = dict[str, torch.Tensor]


def flatten(grads: Mapping[str, torch.Tensor], keys: Sequence[str]) -> torch.Tensor:
    if not keys:
        return torch.zeros(0, dtype=torch.float64)
    return torch.cat([grads[key].reshape(-1) for key in keys])


def unflatten(vector: torch.Tensor, like: Mapping[str, torch.Tensor], keys: Sequence[str]) -> Grads:
    out, offset = {}, 0
    for key in keys:
        size = like[key].numel()
        out[key] = vector[offset : offset + size].reshape(like[key].shape)
        offset += size
    return out


@dataclass(frozen=True)
class GroupGradients:
    """Flattened per-group gradients; the cross terms are diagnostics only."""

    shared_forget: torch.Tensor
    shared_retain: torch.Tensor
    forget_forget: torch.Tensor
    retain_retain: torch.Tensor
    forget_retain: torch.Tensor
    retain_forget: torch.Tensor

    @classmethod
    def from_grads(cls, partition: ParameterPartition, grads_f: Grads, grads_r: Grads) -> GroupGradients:
        shared = sorted(partition.shared)
        forget = sorted(partition.forget_specific)
        retain = sorted(partition.retain_specific)
        return cls(
            shared_forget=flatten(grads_f, shared),
            shared_retain=flatten(grads_r, shared),
            forget_forget=flatten(grads_f, forget),
            retain_retain=flatten(grads_r, retain),
            forget_retain=flatten(grads_r, forget),
            retain_forget=flatten(grads_f, retain),
        )

    @property
    def cos_psi(self) -> float | None:
        return cosine(self.shared_retain, self.shared_forget)

    @property
    def gamma(self) -> float | None:
        """|g_sh^R| / |g_sh^F| before normalization."""
        norm_f = float(self.shared_forget.norm())
        if norm_f == 0.0:
            return None
        return float(self.shared_retain.norm()) / norm_f

    def norms(self) -> dict[str, float]:
        return {
            name: float(getattr(self, name).norm())
            for name in ("shared_forget", "shared_retain", "forget_forget", "retain_retain", "forget_retain", "retain_forget")
        }


@dataclass
class StepResult:
    loss_forget: float
    loss_retain: float
    loss: float
    update: Grads
    row: dict
    groups: GroupGradients | None = None


def objective_gradients(
    original: ModelState,
    current: ModelState,
    keys: Sequence[str],
    forget_batch: Sequence[PromptSample],
    retain_batch: Sequence[PromptSample],
    *,
    objective: str = OBJECTIVE_KL,
    reference_forget: torch.Tensor | None = None,
    reference_retain: torch.Tensor | None = None,
) -> tuple[float, float, Grads, Grads]:
    """Loss values and gradients of the forget and retain objectives over keys.

    With the nll objective the forget loss is the negated answer NLL, so
    descending it is gradient ascent on the forget set.
    """
    current.requires_grad_(True, keys)
    try:
        if objective == OBJECTIVE_NLL:
            l_f = -answer_nll(current, forget_batch)
        else:
            l_f = forget_loss(original, current, forget_batch, reference=reference_forget)
        grads_f = _grads(l_f, current, keys)
        if objective == OBJECTIVE_NLL:
            l_r = answer_nll(current, retain_batch)
        else:
            l_r = retain_loss(original, current, retain_batch, reference=reference_retain)
        grads_r = _grads(l_r, current, keys)
    finally:
        current.requires_grad_(False, keys)
    return float(l_f.detach()), float(l_r.detach()), grads_f, grads_r


def _grads(loss: torch.Tensor, state: ModelState, keys: Sequence[str]) -> Grads:
    if not keys:
        return {}
    params = [state.params[key] for key in keys]
    values = torch.autograd.grad(loss, params, allow_unused=True)
    state.backward_passes += 1
    grads = {}
    for key, param, grad in zip(keys, params, values):
        grad = torch.zeros_like(param) if grad is None else grad.detach()
        if not bool(torch.isfinite(grad).all()):
            logger.error("Non-finite gradient for %s (loss %s)", key, float(loss.detach()))
            raise NonFiniteGradientError(key)
        grads[key] = grad
    return grads


def route(partition: ParameterPartition, grads_f: Grads, grads_r: Grads, config: UnlearnConfig) -> tuple[Grads, ProjectedPair]:
    update: Grads = {}
    for key in partition.forget_specific:
        update[key] = grads_f[key]
    for key in partition.retain_specific:
        update[key] = grads_r[key]
    shared = sorted(partition.shared)
    pair = project_pair(flatten(grads_r, shared), flatten(grads_f, shared), normalize=config.normalize)
    combined = config.omega_r * pair.retain + config.omega_f * pair.forget
    update.update(unflatten(combined, grads_f, shared))
    return update, pair


def combine(grads_f: Grads, grads_r: Grads, keys: Sequence[str], omega_r: float, how: str = COMBINE_SUM) -> tuple[Grads, ProjectedPair]:
    """Uniform update over keys: weighted sum, optionally after two-task surgery."""
    g_r, g_f = flatten(grads_r, keys), flatten(grads_f, keys)
    if how == COMBINE_PCGRAD:
        pair = project_pair(g_r, g_f, normalize=False)
    else:
        pair = ProjectedPair(g_r, g_f, cosine(g_r, g_f), False)
    combined = omega_r * pair.retain + (1.0 - omega_r) * pair.forget
    return unflatten(combined, grads_f, keys), pair


def apply_update(
    state: ModelState,
    update: Grads,
    config: UnlearnConfig,
    optimizer: torch.optim.Optimizer | None = None,
) -> None:
    """Descend along update; keys absent from it keep their exact bytes."""
    if config.optimizer == OPTIMIZER_ADAMW and optimizer is not None:
        for key, value in update.items():
            state.params[key].grad = value.clone()
        optimizer.step()
        for key in update:
            state.params[key].grad = None
        return
    with torch.no_grad():
        for key, value in update.items():
            state.params[key].sub_(config.lr * value)


def trace_row(
    step: int,
    loss_forget: float,
    loss_retain: float,
    omega_r: float,
    update: Grads,
    grads_f: Grads,
    grads_r: Grads,
    applied: ProjectedPair,
    threshold: float,
) -> dict:
    keys = sorted(update)
    a_f, a_r = alignment(flatten(update, keys), flatten(grads_f, keys), flatten(grads_r, keys))
    # cos between the two constituents that were actually applied; the raw
    # column is the pair before projection
    cos_psi = cosine(applied.retain, applied.forget)
    return {
        "step": step,
        "L_F": loss_forget,
        "L_R": loss_retain,
        "L": (1.0 - omega_r) * loss_forget + omega_r * loss_retain,
        "A_f": a_f,
        "A_r": a_r,
        "cos_psi": cos_psi,
        "cos_psi_raw": applied.cos_psi,
        "conflict_flag": cos_psi is not None and cos_psi < threshold,
        "wall_ms": 0.0,
    }


def specific_margins(groups: GroupGradients) -> tuple[float, float]:
    """(|g_f^F|^2 - g_f^F . g_f^R, |g_r^R|^2 - g_r^F . g_r^R); positive when the groups are specific."""
    forget = float(groups.forget_forget @ groups.forget_forget - groups.forget_forget @ groups.forget_retain)
    retain = float(groups.retain_retain @ groups.retain_retain - groups.retain_forget @ groups.retain_retain)
    return forget, retain


def unlearn_step(
    original: ModelState,
    current: ModelState,
    partition: ParameterPartition,
    forget_batch: Sequence[PromptSample],
    retain_batch: Sequence[PromptSample],
    config: UnlearnConfig,
    *,
    step: int = 1,
    reference_forget: torch.Tensor | None = None,
    reference_retain: torch.Tensor | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> StepResult:
    """Route both gradients to their groups and apply the update to current in place."""
    keys = sorted(partition.trainable)
    l_f, l_r, grads_f, grads_r = objective_gradients(
        original,
        current,
        keys,
        forget_batch,
        retain_batch,
        reference_forget=reference_forget,
        reference_retain=reference_retain,
    )
    groups = GroupGradients.from_grads(partition, grads_f, grads_r)
    update, pair = route(partition, grads_f, grads_r, config)
    apply_update(current, update, config, optimizer)

    margin_f, margin_r = specific_margins(groups)
    logger.debug(
        "Step %d: L_F %.6f, L_R %.6f, raw cos %s, gamma %s, specific-group margins %.3g / %.3g",
        step,
        l_f,
        l_r,
        groups.cos_psi,
        groups.gamma,
        margin_f,
        margin_r,
    )
    row = trace_row(step, l_f, l_r, config.omega_r, update, grads_f, grads_r, pair, config.conflict_threshold)
    return StepResult(l_f, l_r, row["L"], update, row, groups)


def baseline_step(
    original: ModelState,
    current: ModelState,
    keys: Sequence[str],
    forget_batch: Sequence[PromptSample],
    retain_batch: Sequence[PromptSample],
    config: UnlearnConfig,
    *,
    omega_r: float,
    objective: str = OBJECTIVE_KL,
    how: str = COMBINE_SUM,
    step: int = 1,
    reference_forget: torch.Tensor | None = None,
    reference_retain: torch.Tensor | None = None,
    optimizer: torch.optim.Optimizer | None = None,
) -> StepResult:
    """One joint update applied uniformly to keys."""
    keys = sorted(keys)
    l_f, l_r, grads_f, grads_r = objective_gradients(
        original,
        current,
        keys,
        forget_batch,
        retain_batch,
        objective=objective,
        reference_forget=reference_forget,
        reference_retain=reference_retain,
    )
    update, pair = combine(grads_f, grads_r, keys, omega_r, how)
    apply_update(current, update, config, optimizer)
    row = trace_row(step, l_f, l_r, omega_r, update, grads_f, grads_r, pair, config.conflict_threshold)
    return StepResult(l_f, l_r, row["L"], update, row)
