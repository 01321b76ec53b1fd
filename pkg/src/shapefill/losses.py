"""Training objectives: class cross-entropy, perceptual loss, and the
improved-Wasserstein adversarial pair with gradient penalty."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidInputError

LOG_CLAMP = 1e-12


@dataclass
class LossWeights:
    perceptual: float = 10.0
    gan: float = 1.0
    classify: float = 1.0
    gradient_penalty: float = 10.0

    def __post_init__(self):
        if min(self.perceptual, self.gan, self.classify) < 0:
            raise InvalidInputError("loss weights must be nonnegative")
        if self.perceptual == self.gan == self.classify == 0:
            raise InvalidInputError("at least one loss weight must be positive")


def class_loss(t_hat: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of predicted probabilities against one-hot labels."""
    if t_hat.shape != t.shape:
        raise InvalidInputError(f"shape mismatch {tuple(t_hat.shape)} vs {tuple(t.shape)}")
    return -(t * torch.log(t_hat.clamp_min(LOG_CLAMP))).sum(dim=-1).mean()


def perceptual_loss(output: torch.Tensor, target: torch.Tensor, fx) -> torch.Tensor:
    """Sum over extractor layers of mean squared feature differences."""
    if output.shape != target.shape:
        raise InvalidInputError("perceptual loss inputs must have the same shape")
    total = output.new_zeros(())
    for fa, fb in zip(fx.layers(output), fx.layers(target)):
        total = total + (fa - fb).pow(2).mean()
    return total


def gan_loss_g(fake_scores: torch.Tensor) -> torch.Tensor:
    return -fake_scores.mean()


def gan_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    return fake_scores.mean() - real_scores.mean()


def hinge_loss_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Non-saturating alternative, selectable via the gan_variant flag."""
    return torch.nn.functional.softplus(-fake_scores).mean()


def hinge_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    sp = torch.nn.functional.softplus
    return sp(-real_scores).mean() + sp(fake_scores).mean()


def gradient_penalty(discriminator, real: torch.Tensor, fake: torch.Tensor,
                     rng: torch.Generator | None = None) -> torch.Tensor:
    """Unit-gradient-norm penalty at random interpolates of real and fake."""
    if real.shape != fake.shape:
        raise InvalidInputError("real and fake batches must have the same shape")
    alpha = torch.rand(real.shape[0], 1, 1, 1, generator=rng,
                       dtype=real.dtype, device=real.device)
    mix = (alpha * real + (1.0 - alpha) * fake).requires_grad_(True)
    scores = discriminator(mix)
    grads, = torch.autograd.grad(scores.sum(), mix, create_graph=True)
    norms = grads.flatten(1).norm(dim=1)
    return ((norms - 1.0) ** 2).mean()


def total_generator_loss(perc: torch.Tensor, gan: torch.Tensor,
                         cls: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return weights.perceptual * perc + weights.gan * gan + weights.classify * cls
