import math
from types import SimpleNamespace
from unittest.mock import patch

import pytest
import torch

from nanorec.services.model import DTYPE
from unlearn.services.losses import binary_kl, forget_loss, reference_probs, retain_loss


def _perturbed(state, scale=0.05, seed=0):
    generator = torch.Generator().manual_seed(seed)
    noisy = state.clone()
    with torch.no_grad():
        for key in sorted(noisy.params):
            noisy.params[key].add_(torch.randn(noisy.params[key].shape, generator=generator, dtype=DTYPE) * scale)
    return noisy


class TestBinaryKl:
    """Test the Bernoulli divergence."""

    def test_closed_form(self):
        """Test KL(0.9 || 0.1) = 0.8 ln 9 in both directions."""
        forward_kl = binary_kl(torch.tensor([0.9], dtype=DTYPE), torch.tensor([0.1], dtype=DTYPE))
        backward_kl = binary_kl(torch.tensor([0.1], dtype=DTYPE), torch.tensor([0.9], dtype=DTYPE))

        assert float(forward_kl) == pytest.approx(0.8 * math.log(9), abs=1e-12)
        assert float(backward_kl) == pytest.approx(1.7578, abs=1e-4)

    def test_asymmetric_pair(self):
        """Test KL(0.9 || 0.5) = 0.9 ln 1.8 + 0.1 ln 0.2 differs from KL(0.5 || 0.9)."""
        kl = binary_kl(torch.tensor([0.9], dtype=DTYPE), torch.tensor([0.5], dtype=DTYPE))
        reverse = binary_kl(torch.tensor([0.5], dtype=DTYPE), torch.tensor([0.9], dtype=DTYPE))

        assert float(kl) == pytest.approx(0.9 * math.log(1.8) + 0.1 * math.log(0.2), abs=1e-12)
        assert float(kl) == pytest.approx(0.3681, abs=1e-4)
        assert float(reverse) == pytest.approx(0.5108, abs=1e-4)

    def test_degenerate_probabilities_stay_finite(self):
        """Test probabilities of exactly 0 and 1 are clamped."""
        kl = binary_kl(torch.tensor([0.0, 1.0], dtype=DTYPE), torch.tensor([1.0, 0.0], dtype=DTYPE))

        assert torch.isfinite(kl).all()


class TestKlLosses:
    """Test the forget and retain objectives on the toy model."""

    @pytest.fixture(autouse=True)
    def _setup(self, tiny_model, tiny_split):
        self.original = tiny_model
        self.current = _perturbed(tiny_model)
        self.forget = list(tiny_split.forget[:6])
        self.retain = list(tiny_split.retain_pool[:12])

    def test_zero_when_models_agree(self):
        """Test both losses vanish for an unchanged copy."""
        copy = self.original.clone()

        assert float(forget_loss(self.original, copy, self.forget)) == 0.0
        assert float(retain_loss(self.original, copy, self.retain)) == 0.0

    def test_signs(self):
        """Test the forget loss is nonpositive and the retain loss nonnegative."""
        assert float(forget_loss(self.original, self.current, self.forget)) <= 0.0
        assert float(retain_loss(self.original, self.current, self.retain)) >= 0.0

    def test_retain_loss_ignores_order(self):
        """Test the retain loss is a mean over the batch."""
        forward_order = float(retain_loss(self.original, self.current, self.retain))
        reverse_order = float(retain_loss(self.original, self.current, self.retain[::-1]))

        assert forward_order == pytest.approx(reverse_order, rel=1e-12, abs=1e-18)

    def test_reference_is_detached(self):
        """Test gradients reach only the current model."""
        self.original.requires_grad_(True)
        try:
            reference = reference_probs(self.original, self.forget)
        finally:
            self.original.requires_grad_(False)

        assert not reference.requires_grad

    def test_gradient_matches_finite_differences(self):
        """Test analytic loss gradients against central differences."""
        reference = reference_probs(self.original, self.forget)
        h = 1e-6
        for key, index in (("L1.mlp0.W_out", (0, 0)), ("L0.attn0.W_Q", (1, 2)), ("L1.attn2.b_O", (3,))):
            param = self.current.params[key]
            param.requires_grad_(True)
            loss = forget_loss(self.original, self.current, self.forget, reference=reference)
            (grad,) = torch.autograd.grad(loss, [param])
            param.requires_grad_(False)

            with torch.no_grad():
                param[index] += h
                plus = float(forget_loss(self.original, self.current, self.forget, reference=reference))
                param[index] -= 2 * h
                minus = float(forget_loss(self.original, self.current, self.forget, reference=reference))
                param[index] += h
            numeric = (plus - minus) / (2 * h)

            assert float(grad[index]) == pytest.approx(numeric, rel=1e-4, abs=1e-10)


class TestKlDirection:
    """Test the original model is the first KL argument."""

    def setup_method(self):
        self.reference = torch.tensor([0.9], dtype=DTYPE)
        self.record = SimpleNamespace(p_yes=torch.tensor([0.5], dtype=DTYPE))

    def test_forget_loss(self):
        """Test the forget loss is -KL(P_original || P_current)."""
        with patch("unlearn.services.losses.forward", return_value=self.record):
            loss = forget_loss(None, None, ["sample"], reference=self.reference)

        assert float(loss) == pytest.approx(-0.368064, abs=1e-6)

    def test_retain_loss(self):
        """Test the retain loss is KL(P_original || P_current)."""
        with patch("unlearn.services.losses.forward", return_value=self.record):
            loss = retain_loss(None, None, ["sample"], reference=self.reference)

        assert float(loss) == pytest.approx(0.368064, abs=1e-6)

    def test_gradient_reaches_current_only(self):
        """Test the reference carries no gradient while the current probabilities do."""
        current = torch.tensor([0.5], dtype=DTYPE, requires_grad=True)
        reference = torch.tensor([0.9], dtype=DTYPE, requires_grad=True)
        with patch("unlearn.services.losses.forward", return_value=SimpleNamespace(p_yes=current)):
            loss = retain_loss(None, None, ["sample"], reference=reference)
        loss.backward()

        # d/dq KL(p || q) = (q - p) / (q (1 - q)) = -1.6 at p=0.9, q=0.5
        assert float(current.grad) == pytest.approx(-1.6, abs=1e-9)
        assert reference.grad is None
