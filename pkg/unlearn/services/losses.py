"""
KL objectives against the frozen original model.

Both losses compare binary {Yes, No} distributions, with the original model
as the first KL argument. The forget loss is the negated divergence, so
minimizing it pushes predictions away from the original; the retain loss
pulls them back.
"""

from __future__ import annotations

from collections.abc import Sequence

import torch

from curerec import const
from interactions.services.prompts import PromptSample
from nanorec.services.model import ModelState, forward
from nanorec.services.training import nll_loss


def binary_kl(p_yes: torch.Tensor, q_yes: torch.Tensor) -> torch.Tensor:
    """Per-row KL(p || q) of Bernoulli distributions, natural log."""
    p = p_yes.clamp(const.PROB_EPS, 1 - const.PROB_EPS)
    q = q_yes.clamp(const.PROB_EPS, 1 - const.PROB_EPS)
    return p * (p / q).log() + (1 - p) * ((1 - p) / (1 - q)).log()


def reference_probs(original: ModelState, samples: Sequence[PromptSample], *, batch_size: int = 256) -> torch.Tensor:
    """P_original(Yes), the first KL argument; never part of any graph."""
    chunks = []
    with torch.no_grad():
        for start in range(0, len(samples), batch_size):
            chunks.append(forward(original, list(samples[start : start + batch_size])).p_yes)
    if not chunks:
        return torch.zeros(0, dtype=torch.float64)
    return torch.cat(chunks)


def _divergence(original, current, samples, reference) -> torch.Tensor:
    if reference is None:
        reference = reference_probs(original, samples)
    current_yes = forward(current, list(samples)).p_yes
    return binary_kl(reference.detach(), current_yes).mean()


def forget_loss(
    original: ModelState,
    current: ModelState,
    samples: Sequence[PromptSample],
    *,
    reference: torch.Tensor | None = None,
) -> torch.Tensor:
    """-mean KL(P_original || P_current); <= 0, zero when the models agree."""
    return -_divergence(original, current, samples, reference)


def retain_loss(
    original: ModelState,
    current: ModelState,
    samples: Sequence[PromptSample],
    *,
    reference: torch.Tensor | None = None,
) -> torch.Tensor:
    """mean KL(P_original || P_current); >= 0."""
    return _divergence(original, current, samples, reference)


def answer_nll(current: ModelState, samples: Sequence[PromptSample]) -> torch.Tensor:
    return nll_loss(forward(current, list(samples)), [s.answer for s in samples])
