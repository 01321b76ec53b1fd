import math

import pytest
import torch

from shapefill.errors import InvalidInputError
from shapefill.features import IdentityExtractor
from shapefill.losses import (
    LossWeights,
    class_loss,
    gan_loss_d,
    gan_loss_g,
    gradient_penalty,
    perceptual_loss,
    total_generator_loss,
)


class TestClassLoss:
    def test_perfect_prediction_is_zero(self):
        t = torch.tensor([[0.0, 1.0, 0.0]])
        assert class_loss(t, t).item() == pytest.approx(0.0, abs=1e-9)

    def test_uniform_prediction_is_log_c(self):
        t_hat = torch.full((1, 4), 0.25)
        t = torch.tensor([[1.0, 0.0, 0.0, 0.0]])
        assert class_loss(t_hat, t).item() == pytest.approx(math.log(4), abs=1e-6)

    def test_hand_computed_value(self):
        t_hat = torch.tensor([[0.7, 0.2, 0.1]])
        t = torch.tensor([[0.0, 1.0, 0.0]])
        assert class_loss(t_hat, t).item() == pytest.approx(-math.log(0.2), abs=1e-6)

    def test_zero_probability_clamped(self):
        t_hat = torch.tensor([[1.0, 0.0]])
        t = torch.tensor([[0.0, 1.0]])
        assert torch.isfinite(class_loss(t_hat, t))

    def test_gradient_is_softmax_identity(self):
        torch.manual_seed(0)
        logits = torch.randn(6, 5, dtype=torch.float64, requires_grad=True)
        t = torch.eye(5, dtype=torch.float64)[torch.arange(6) % 5]
        class_loss(torch.softmax(logits, dim=1), t).backward()
        expected = (torch.softmax(logits, dim=1).detach() - t) / 6
        assert (logits.grad - expected).abs().max() < 1e-6


class TestPerceptualLoss:
    def test_identical_inputs_give_zero(self, micro_config):
        x = torch.randn(2, 3, 8, 8)
        assert perceptual_loss(x, x, IdentityExtractor()).item() == pytest.approx(0, abs=1e-7)

    def test_symmetric(self):
        a, b = torch.randn(2, 3, 8, 8), torch.randn(2, 3, 8, 8)
        fx = IdentityExtractor()
        assert perceptual_loss(a, b, fx).item() == pytest.approx(
            perceptual_loss(b, a, fx).item(), abs=1e-7)

    def test_identity_extractor_equals_pixel_mse(self):
        torch.manual_seed(1)
        a, b = torch.randn(2, 3, 8, 8), torch.randn(2, 3, 8, 8)
        got = perceptual_loss(a, b, IdentityExtractor()).item()
        assert got == pytest.approx(((a - b) ** 2).mean().item(), abs=1e-6)

    def test_residual_scaling_is_quadratic(self):
        a = torch.randn(1, 3, 8, 8)
        d = torch.randn(1, 3, 8, 8)
        fx = IdentityExtractor()
        base = perceptual_loss(a, a + d, fx).item()
        scaled = perceptual_loss(a, a + 3.0 * d, fx).item()
        assert scaled == pytest.approx(9.0 * base, rel=1e-5)


class TestGanLosses:
    def test_equal_scores_zero_critic_loss(self):
        s = torch.tensor([0.3, -1.2, 4.0])
        assert gan_loss_d(s, s).item() == pytest.approx(0.0, abs=1e-7)

    def test_generator_loss_is_negative_mean(self):
        s = torch.tensor([1.0, 2.0, 6.0])
        assert gan_loss_g(s).item() == pytest.approx(-3.0, abs=1e-7)

    def test_penalty_closed_form_for_linear_critic(self):
        class LinearCritic(torch.nn.Module):
            def forward(self, x):
                return x.flatten(1).sum(dim=1) / x[0].numel()

        n = 3 * 8 * 8
        real = torch.randn(4, 3, 8, 8, dtype=torch.float64)
        fake = torch.randn(4, 3, 8, 8, dtype=torch.float64)
        # gradient of D is 1/n everywhere, so its norm is 1/sqrt(n)
        expected = (1.0 / math.sqrt(n) - 1.0) ** 2
        gp = gradient_penalty(LinearCritic(), real, fake,
                              rng=torch.Generator().manual_seed(0))
        assert gp.item() == pytest.approx(expected, abs=1e-10)

    def test_penalty_nonnegative_and_deterministic(self, micro_config):
        from shapefill.model import Discriminator
        D = Discriminator(micro_config)
        real, fake = torch.randn(2, 3, 16, 16), torch.randn(2, 3, 16, 16)
        a = gradient_penalty(D, real, fake, rng=torch.Generator().manual_seed(3))
        b = gradient_penalty(D, real, fake, rng=torch.Generator().manual_seed(3))
        assert a.item() >= 0
        assert a.item() == b.item()


class TestTotalLoss:
    def test_zero_parts(self):
        z = torch.zeros(())
        assert total_generator_loss(z, z, z, LossWeights()).item() == 0.0

    def test_unit_parts_default_weights(self):
        one = torch.ones(())
        assert total_generator_loss(one, one, one, LossWeights()).item() == pytest.approx(12.0)

    def test_random_parts_scalar_oracle(self, rng):
        for _ in range(10):
            p, g, c = rng.normal(size=3)
            wp, wg, wc = rng.uniform(0.1, 5.0, size=3)
            w = LossWeights(wp, wg, wc)
            got = total_generator_loss(torch.tensor(p), torch.tensor(g),
                                       torch.tensor(c), w).item()
            assert got == pytest.approx(wp * p + wg * g + wc * c, abs=1e-9)

    def test_invalid_weights_rejected(self):
        with pytest.raises(InvalidInputError):
            LossWeights(-1.0, 1.0, 1.0)
        with pytest.raises(InvalidInputError):
            LossWeights(0.0, 0.0, 0.0)
