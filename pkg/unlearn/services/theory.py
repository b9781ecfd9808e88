"""
Numerical checks of the one-step comparison between routed and uniform updates.

Instances are quadratics over three parameter groups (shared, forget, retain).
The forget objective ignores the retain group and vice versa, and the shared
gradients have equal norms (gamma = 1), which is the regime the comparison
is stated for.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import torch

from .projection import project_shared

DTYPE = torch.float64


@dataclass(frozen=True)
class QuadraticInstance:
    """L_X(theta) = g_X . theta + theta^T H_X theta / 2 for X in {F, R}; theta0 = 0."""

    dims: tuple[int, int, int]
    grad_forget: torch.Tensor
    grad_retain: torch.Tensor
    hess_forget: torch.Tensor
    hess_retain: torch.Tensor

    @property
    def shared(self) -> slice:
        return slice(0, self.dims[0])

    @property
    def forget(self) -> slice:
        return slice(self.dims[0], self.dims[0] + self.dims[1])

    @property
    def retain(self) -> slice:
        return slice(self.dims[0] + self.dims[1], sum(self.dims))

    def loss_forget(self, theta: torch.Tensor) -> float:
        return float(self.grad_forget @ theta + 0.5 * theta @ self.hess_forget @ theta)

    def loss_retain(self, theta: torch.Tensor) -> float:
        return float(self.grad_retain @ theta + 0.5 * theta @ self.hess_retain @ theta)

    def loss(self, theta: torch.Tensor, omega_r: float) -> float:
        return omega_r * self.loss_retain(theta) + (1 - omega_r) * self.loss_forget(theta)

    @property
    def cos_psi(self) -> float:
        g_r, g_f = self.grad_retain[self.shared], self.grad_forget[self.shared]
        return float(g_r @ g_f / (g_r.norm() * g_f.norm()))


def _psd(dim: int, support: Sequence[int], generator: torch.Generator) -> torch.Tensor:
    """Random PSD matrix with eigenvalues in [0.1, 1] on support, zero elsewhere."""
    index = torch.tensor(list(support))
    size = len(index)
    q, _ = torch.linalg.qr(torch.randn(size, size, generator=generator, dtype=DTYPE))
    eigen = 0.1 + 0.9 * torch.rand(size, generator=generator, dtype=DTYPE)
    full = torch.zeros(dim, dim, dtype=DTYPE)
    full[index.unsqueeze(1), index.unsqueeze(0)] = q @ torch.diag(eigen) @ q.T
    return full


def random_quadratic_instance(
    generator: torch.Generator,
    dims: tuple[int, int, int] = (6, 4, 4),
) -> QuadraticInstance:
    """Unit shared gradients, specific gradients of norm <= 1, about half the instances conflicting."""
    sh, f, r = dims
    dim = sh + f + r
    shared_f = torch.randn(sh, generator=generator, dtype=DTYPE)
    shared_r = torch.randn(sh, generator=generator, dtype=DTYPE)
    if float(shared_f @ shared_r) > 0 and float(torch.rand(1, generator=generator, dtype=DTYPE)) < 0.5:
        shared_r = -shared_r

    grad_forget = torch.zeros(dim, dtype=DTYPE)
    grad_retain = torch.zeros(dim, dtype=DTYPE)
    grad_forget[:sh] = shared_f / shared_f.norm()
    grad_retain[:sh] = shared_r / shared_r.norm()
    for grad, start, stop in ((grad_forget, sh, sh + f), (grad_retain, sh + f, dim)):
        direction = torch.randn(stop - start, generator=generator, dtype=DTYPE)
        grad[start:stop] = direction / direction.norm() * float(torch.rand(1, generator=generator, dtype=DTYPE))

    return QuadraticInstance(
        dims=dims,
        grad_forget=grad_forget,
        grad_retain=grad_retain,
        hess_forget=_psd(dim, range(0, sh + f), generator),
        hess_retain=_psd(dim, [*range(0, sh), *range(sh + f, dim)], generator),
    )


def routed_step(instance: QuadraticInstance, alpha: float, omega_r: float, *, normalize: bool = True) -> torch.Tensor:
    theta = torch.zeros(sum(instance.dims), dtype=DTYPE)
    theta[instance.shared] = -alpha * project_shared(
        instance.grad_retain[instance.shared],
        omega_r,
        instance.grad_forget[instance.shared],
        1 - omega_r,
        normalize=normalize,
    )
    theta[instance.forget] = -alpha * instance.grad_forget[instance.forget]
    theta[instance.retain] = -alpha * instance.grad_retain[instance.retain]
    return theta


def uniform_step(instance: QuadraticInstance, alpha: float, omega_r: float) -> torch.Tensor:
    return -alpha * (omega_r * instance.grad_retain + (1 - omega_r) * instance.grad_forget)


def one_step_gap(instance: QuadraticInstance, alpha: float, omega_r: float, *, normalize: bool = True) -> float:
    """L(routed step) - L(uniform step); <= O(alpha^2) when the comparison holds."""
    routed = routed_step(instance, alpha, omega_r, normalize=normalize)
    return instance.loss(routed, omega_r) - instance.loss(uniform_step(instance, alpha, omega_r), omega_r)


def conflict_bound(cos_psi: float, gamma: float, omega_r: float) -> tuple[float, bool]:
    """Lower bound on cos(psi) for the shared-group term to be nonnegative, and whether it holds."""
    bound = -gamma / (omega_r + (1 - omega_r) * gamma**2)
    return bound, cos_psi >= bound - 1e-12


def weighted_shared_bound(omega_r: float) -> float:
    """cos(psi) above which the routed shared update beats the uniform one under the weighted loss at gamma = 1.

    Equals -1 only for omega_r = 1/2.
    """
    omega_f = 1 - omega_r
    return -2 * omega_r * omega_f / (omega_r**2 + omega_f**2)


def first_order_gap(
    loss: Callable[[torch.Tensor], float],
    theta: torch.Tensor,
    grad_forget: torch.Tensor,
    grad_retain: torch.Tensor,
    omega_r: float,
    alpha: float,
) -> float:
    """|measured change - predicted change| after a uniform step of size alpha.

    The prediction is -alpha (omega_f g . g_f + omega_r g . g_r) with
    g = omega_f g_f + omega_r g_r; the gap is O(alpha^2).
    """
    omega_f = 1 - omega_r
    g = omega_f * grad_forget + omega_r * grad_retain
    predicted = -alpha * (omega_f * float(g @ grad_forget) + omega_r * float(g @ grad_retain))
    measured = loss(theta - alpha * g) - loss(theta)
    return abs(measured - predicted)
