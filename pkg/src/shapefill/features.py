"""Frozen feature extractors for the perceptual loss and toy-scale metrics.

The backbone is a small convolutional classifier trained on real images
from the toy dataset. Its trunk activations serve as the perceptual-loss
feature space; a separately seeded copy provides a fixed feature space
for the Fréchet metric.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError
from .samples import InpaintingSample


class ToyClassifier(nn.Module):
    """3-block conv trunk + linear class head; trunk output dim is fixed."""

    FEATURE_DIM = 64

    def __init__(self, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv3 = nn.Conv2d(32, self.FEATURE_DIM, 3, padding=1)
        self.head = nn.Linear(self.FEATURE_DIM, num_classes)

    def layers(self, images: torch.Tensor) -> list[torch.Tensor]:
        """Trunk activations, one map per block; extractor interface."""
        f1 = F.leaky_relu(self.conv1(images), 0.2)
        f2 = F.leaky_relu(self.conv2(F.avg_pool2d(f1, 2)), 0.2)
        f3 = F.leaky_relu(self.conv3(F.avg_pool2d(f2, 2)), 0.2)
        return [f1, f2, f3]

    def pooled(self, images: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled final trunk map, [B, FEATURE_DIM]."""
        return self.layers(images)[-1].mean(dim=(2, 3))

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.pooled(images))

    @property
    def feature_dim(self) -> int:
        return self.FEATURE_DIM

    def freeze(self) -> "ToyClassifier":
        for p in self.parameters():
            p.requires_grad_(False)
        return self.eval()


class IdentityExtractor:
    """Single 'layer' equal to the raw pixels; used by oracle tests."""

    def layers(self, images: torch.Tensor) -> list[torch.Tensor]:
        return [images]

    def pooled(self, images: torch.Tensor) -> torch.Tensor:
        return images.flatten(1)

    @property
    def feature_dim(self) -> int:
        raise NotImplementedError("identity extractor has input-dependent dimension")


def train_toy_classifier(samples: list[InpaintingSample], num_classes: int,
                         steps: int = 300, batch_size: int = 32, lr: float = 2e-3,
                         seed: int = 0) -> ToyClassifier:
    """Train the backbone on real (unmasked) images, then freeze it."""
    torch.manual_seed(seed)
    clf = ToyClassifier(num_classes)
    opt = torch.optim.Adam(clf.parameters(), lr=lr)
    images = torch.from_numpy(np.stack([s.target for s in samples]))
    labels = torch.tensor([s.category for s in samples])
    gen = torch.Generator().manual_seed(seed)
    for _ in range(steps):
        idx = torch.randint(len(samples), (batch_size,), generator=gen)
        loss = F.cross_entropy(clf(images[idx]), labels[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
    return clf.freeze()


def save_extractor(clf: ToyClassifier, path: str) -> None:
    torch.save({"num_classes": clf.num_classes, "state": clf.state_dict()}, path)


def load_extractor(path: str) -> ToyClassifier:
    try:
        blob = torch.load(path, weights_only=True)
        clf = ToyClassifier(blob["num_classes"])
        clf.load_state_dict(blob["state"])
    except (OSError, RuntimeError, KeyError) as e:
        raise CheckpointError(f"cannot load feature extractor {path}: {e}") from e
    return clf.freeze()
