"""
Conflict projection for the shared parameter group.

When the retain and forget gradients point against each other, each is
projected onto the normal plane of the other before the weighted sum, so
neither objective's update undoes the other to first order.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from curerec import const


@dataclass(frozen=True)
class ProjectedPair:
    retain: torch.Tensor
    forget: torch.Tensor
    cos_psi: float | None
    conflicted: bool


def cosine(first: torch.Tensor, second: torch.Tensor) -> float | None:
    a, b = float(first.norm()), float(second.norm())
    if a < const.GRAD_NORM_EPS or b < const.GRAD_NORM_EPS:
        return None
    return max(-1.0, min(1.0, float(first @ second) / (a * b)))


def project_pair(g_r: torch.Tensor, g_f: torch.Tensor, *, normalize: bool = True) -> ProjectedPair:
    """Mutually project a conflicting pair; cos_psi is measured before projection."""
    if g_r.shape != g_f.shape:
        raise ValueError(f"gradient shapes differ: {tuple(g_r.shape)} vs {tuple(g_f.shape)}")
    norm_r, norm_f = float(g_r.norm()), float(g_f.norm())
    if norm_r < const.GRAD_NORM_EPS or norm_f < const.GRAD_NORM_EPS:
        return ProjectedPair(g_r, g_f, None, False)
    if normalize:
        g_r, g_f = g_r / norm_r, g_f / norm_f
        norm_r = norm_f = 1.0
    dot = float(g_r @ g_f)
    cos_psi = max(-1.0, min(1.0, dot / (norm_r * norm_f)))
    if dot >= 0:
        return ProjectedPair(g_r, g_f, cos_psi, False)
    retain = g_r - (dot / norm_f**2) * g_f
    forget = g_f - (dot / norm_r**2) * g_r
    return ProjectedPair(retain, forget, cos_psi, True)


def project_shared(
    g_r: torch.Tensor,
    omega_r: float,
    g_f: torch.Tensor,
    omega_f: float,
    *,
    normalize: bool = True,
) -> torch.Tensor:
    pair = project_pair(g_r, g_f, normalize=normalize)
    return omega_r * pair.retain + omega_f * pair.forget


def pcgrad(g_r: torch.Tensor, g_f: torch.Tensor) -> ProjectedPair:
    """Two-task gradient surgery on raw gradients."""
    return project_pair(g_r, g_f, normalize=False)


def alignment(g: torch.Tensor, g_f: torch.Tensor, g_r: torch.Tensor) -> tuple[float | None, float | None]:
    """(g . g_f / |g_f|^2, g . g_r / |g_r|^2); None where the reference gradient vanishes."""

    def ratio(reference: torch.Tensor) -> float | None:
        squared = float(reference @ reference)
        if squared < const.GRAD_NORM_EPS**2:
            return None
        return float(g @ reference) / squared

    return ratio(g_f), ratio(g_r)
