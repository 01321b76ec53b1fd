"""Two-stream inpainting generator and discriminator.

The context (bottom-up) encoder reads the masked image and hole mask, a
class head predicts the missing object's category from its features, and
a semantic-map (top-down) encoder reads the per-category hole map. Both
feature pyramids and a style code drive the shared decoder through
two-step spatial-channel adaptive instance normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import InvalidInputError

EPS = 1e-8  # inside every variance square root


@dataclass
class ModelConfig:
    image_size: int = 64
    num_scales: int = 4
    channels: tuple[int, ...] = (32, 64, 128, 256)   # index l <-> resolution N / 2^l
    num_classes: int = 4
    z_dim: int = 64
    h_dim: int = 64
    use_pce: bool = True
    use_top_down: bool = True
    infer_class_mode: str = "soft"   # "soft" or "hard" predicted class at inference

    def __post_init__(self):
        if len(self.channels) != self.num_scales:
            raise InvalidInputError("channels must list one width per scale")
        if self.image_size < 16 or self.image_size % (2 ** (self.num_scales - 1)) != 0:
            raise InvalidInputError(
                f"image_size {self.image_size} must be >= 16 and divisible by "
                f"2^{self.num_scales - 1}")
        if min(self.channels) < 1 or self.z_dim < 1 or self.h_dim < 1 or self.num_classes < 1:
            raise InvalidInputError("all dimensions must be >= 1")
        if self.infer_class_mode not in ("soft", "hard"):
            raise InvalidInputError(f"bad infer_class_mode {self.infer_class_mode!r}")

    @property
    def w_dim(self) -> int:
        return self.z_dim + self.h_dim

    @property
    def coarsest(self) -> int:
        return self.image_size // 2 ** (self.num_scales - 1)


@dataclass
class ClassPrediction:
    embedding: torch.Tensor      # [B, h_dim]
    logits: torch.Tensor         # [B, C]
    probabilities: torch.Tensor  # [B, C], softmax of logits


def _check_finite(x: torch.Tensor, name: str) -> None:
    if not torch.isfinite(x).all():
        raise InvalidInputError(f"{name} contains non-finite values")


class ConvBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)

    def forward(self, x):
        x = F.leaky_relu(self.conv1(x), 0.2)
        return F.leaky_relu(self.conv2(x), 0.2)


class PyramidEncoder(nn.Module):
    """L conv blocks with 2x downsampling in between; emits one map per scale."""

    def __init__(self, cfg: ModelConfig, in_ch: int):
        super().__init__()
        self.blocks = nn.ModuleList()
        prev = in_ch
        for ch in cfg.channels:
            self.blocks.append(ConvBlock(prev, ch))
            prev = ch

    def forward(self, x) -> list[torch.Tensor]:
        maps = []
        for l, block in enumerate(self.blocks):
            if l > 0:
                x = F.avg_pool2d(x, 2)
            x = block(x)
            maps.append(x)
        return maps


class ClassEmbeddingHead(nn.Module):
    """Predicts the object category from the coarsest context features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        feat = cfg.channels[-1] * cfg.coarsest * cfg.coarsest
        self.embed = nn.Linear(feat, cfg.h_dim)
        self.classifier = nn.Linear(cfg.h_dim, cfg.num_classes, bias=False)

    def forward(self, coarse_map: torch.Tensor) -> ClassPrediction:
        h = self.embed(coarse_map.flatten(1))
        logits = self.classifier(h)
        return ClassPrediction(h, logits, F.softmax(logits, dim=1))


class LatentMapping(nn.Module):
    """Normalizes z to the unit hypersphere, then two FC layers."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.z_dim, cfg.z_dim)
        self.fc2 = nn.Linear(cfg.z_dim, cfg.z_dim)

    def forward(self, z):
        z = z * torch.rsqrt(z.pow(2).mean(dim=1, keepdim=True) + EPS)
        z = F.leaky_relu(self.fc1(z), 0.2)
        return F.leaky_relu(self.fc2(z), 0.2)


def make_style_code(z: torch.Tensor, h: torch.Tensor, mapping: LatentMapping) -> torch.Tensor:
    """w = concat(mapping(z), h)."""
    if z.ndim != 2 or h.ndim != 2 or z.shape[0] != h.shape[0]:
        raise InvalidInputError(f"bad style-code inputs: z {tuple(z.shape)}, h {tuple(h.shape)}")
    if z.shape[1] != mapping.fc1.in_features:
        raise InvalidInputError(f"latent dim {z.shape[1]} != {mapping.fc1.in_features}")
    return torch.cat([mapping(z), h], dim=1)


def make_semantic_map(t_hat: torch.Tensor, hole: torch.Tensor) -> torch.Tensor:
    """Per-category hole map: channel i is t_hat[i] * hole."""
    if t_hat.ndim != 2:
        raise InvalidInputError(f"expected [B, C] probabilities, got {tuple(t_hat.shape)}")
    if hole.ndim != 4 or hole.shape[1] != 1 or hole.shape[0] != t_hat.shape[0]:
        raise InvalidInputError(f"expected [B, 1, H, W] hole, got {tuple(hole.shape)}")
    if not torch.allclose(t_hat.sum(dim=1), torch.ones_like(t_hat[:, 0]), atol=1e-5):
        raise InvalidInputError("class probabilities must sum to 1")
    return t_hat[:, :, None, None] * hole


class ScAdaIn(nn.Module):
    """Two-step normalization of a decoder feature map.

    Step 1: per-channel instance normalization, affine-modulated by the
    style code. Step 2: per-position normalization across channels,
    affine-modulated by spatially varying parameters computed from the
    summed encoder features at the same scale.
    """

    def __init__(self, cfg: ModelConfig, ch: int):
        super().__init__()
        self.style_gamma = nn.Linear(cfg.w_dim, ch)
        self.style_beta = nn.Linear(cfg.w_dim, ch)
        nn.init.ones_(self.style_gamma.bias)
        nn.init.zeros_(self.style_beta.bias)
        self.spatial = nn.Sequential(nn.Conv2d(ch, ch, 3, padding=1), nn.LeakyReLU(0.2))
        self.spatial_gamma = nn.Conv2d(ch, ch, 3, padding=1)
        self.spatial_beta = nn.Conv2d(ch, ch, 3, padding=1)
        nn.init.ones_(self.spatial_gamma.bias)
        nn.init.zeros_(self.spatial_beta.bias)

    def step_channel(self, x: torch.Tensor, w: torch.Tensor) -> torch.Tensor:
        """Instance-normalize each channel, then affine from the style code."""
        mu = x.mean(dim=(2, 3), keepdim=True)
        sigma = torch.sqrt(x.var(dim=(2, 3), unbiased=False, keepdim=True) + EPS)
        gamma = self.style_gamma(w)[:, :, None, None]
        beta = self.style_beta(w)[:, :, None, None]
        return (x - mu) / sigma * gamma + beta

    def step_position(self, x: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        """Normalize across channels per position, then spatially varying affine."""
        mu = x.mean(dim=1, keepdim=True)
        sigma = torch.sqrt(x.var(dim=1, unbiased=False, keepdim=True) + EPS)
        hidden = self.spatial(feat)
        return (x - mu) / sigma * self.spatial_gamma(hidden) + self.spatial_beta(hidden)

    def forward(self, x: torch.Tensor, w: torch.Tensor, feat: torch.Tensor) -> torch.Tensor:
        if x.shape[2:] != feat.shape[2:] or x.shape[1] != feat.shape[1]:
            raise InvalidInputError(
                f"decoder map {tuple(x.shape)} and encoder features {tuple(feat.shape)} disagree")
        return self.step_position(self.step_channel(x, w), feat)


class DecoderBlock(nn.Module):
    def __init__(self, cfg: ModelConfig, in_ch: int, out_ch: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.norm = ScAdaIn(cfg, out_ch)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, w, feat):
        y = F.leaky_relu(self.norm(self.conv1(x), w, feat), 0.2)
        y = F.leaky_relu(self.conv2(y), 0.2)
        return y + self.skip(x)


class Decoder(nn.Module):
    """Coarse-to-fine decoder shared by both streams; one ScAdaIn per scale."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        s = cfg.coarsest
        self.const = nn.Parameter(torch.randn(cfg.channels[-1], s, s))
        self.blocks = nn.ModuleList()
        prev = cfg.channels[-1]
        for l in reversed(range(cfg.num_scales)):
            self.blocks.append(DecoderBlock(cfg, prev, cfg.channels[l]))
            prev = cfg.channels[l]
        self.to_rgb = nn.Conv2d(cfg.channels[0], 3, 3, padding=1)

    def forward(self, w, b_pyr, t_pyr):
        x = self.const.unsqueeze(0).expand(w.shape[0], -1, -1, -1)
        scales = list(reversed(range(self.cfg.num_scales)))
        for i, l in enumerate(scales):
            feat = b_pyr[l] + t_pyr[l]
            x = self.blocks[i](x, w, feat)
            if not torch.isfinite(x).all():
                raise InvalidInputError(f"non-finite decoder activations at scale {l}")
            if l > 0:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
        return torch.tanh(self.to_rgb(x))


class Discriminator(nn.Module):
    """Strided residual blocks down to a scalar realness score per image."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.stem = nn.Conv2d(3, cfg.channels[0], 3, padding=1)
        self.blocks = nn.ModuleList()
        self.skips = nn.ModuleList()
        for l in range(1, cfg.num_scales):
            self.blocks.append(ConvBlock(cfg.channels[l - 1], cfg.channels[l]))
            self.skips.append(nn.Conv2d(cfg.channels[l - 1], cfg.channels[l], 1))
        self.head = nn.Linear(cfg.channels[-1] * cfg.coarsest * cfg.coarsest, 1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        _check_finite(image, "discriminator input")
        x = F.leaky_relu(self.stem(image), 0.2)
        for block, skip in zip(self.blocks, self.skips):
            x = F.avg_pool2d(x, 2)
            x = block(x) + skip(x)
        return self.head(x.flatten(1)).squeeze(1)


class TwoStreamInpainter(nn.Module):
    """Full generator: both encoders, class head, latent mapping, decoder."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.context_encoder = PyramidEncoder(cfg, in_ch=4)  # masked image + hole
        self.semantic_encoder = PyramidEncoder(cfg, in_ch=cfg.num_classes)
        self.class_head = ClassEmbeddingHead(cfg)
        self.mapping = LatentMapping(cfg)
        self.decoder = Decoder(cfg)

    def encode_context(self, masked_image, hole) -> list[torch.Tensor]:
        _check_finite(masked_image, "masked image")
        _check_finite(hole, "hole mask")
        if masked_image.shape[2:] != hole.shape[2:]:
            raise InvalidInputError("masked image and hole sizes disagree")
        return self.context_encoder(torch.cat([masked_image, hole], dim=1))

    def predict_class(self, b_pyr: list[torch.Tensor]) -> ClassPrediction:
        return self.class_head(b_pyr[-1])

    def encode_semantic(self, semantic_map) -> list[torch.Tensor]:
        _check_finite(semantic_map, "semantic map")
        return self.semantic_encoder(semantic_map)

    def forward(self, masked_image, hole, z, teacher_one_hot=None):
        """Run the whole pipeline on a batch.

        teacher_one_hot, when given, replaces the predicted class in the
        semantic map (teacher forcing during training). Returns a dict with
        the raw output, the composite, the class prediction, and the map.
        """
        cfg = self.cfg
        b_pyr = self.encode_context(masked_image, hole)
        if cfg.use_pce:
            pred = self.predict_class(b_pyr)
        else:
            zeros = masked_image.new_zeros(masked_image.shape[0], cfg.num_classes)
            pred = ClassPrediction(
                masked_image.new_zeros(masked_image.shape[0], cfg.h_dim),
                zeros, F.softmax(zeros, dim=1))

        if teacher_one_hot is not None:
            map_probs = teacher_one_hot
        elif cfg.infer_class_mode == "hard":
            map_probs = F.one_hot(pred.probabilities.argmax(dim=1),
                                  cfg.num_classes).to(masked_image.dtype)
        else:
            map_probs = pred.probabilities
        semantic_map = make_semantic_map(map_probs, hole)

        if cfg.use_top_down:
            t_pyr = self.encode_semantic(semantic_map)
        else:
            t_pyr = [torch.zeros_like(m) for m in b_pyr]

        w = make_style_code(z, pred.embedding, self.mapping)
        output = self.decoder(w, b_pyr, t_pyr)
        comp = hole * output + (1.0 - hole) * masked_image
        return {"output": output, "composite": comp,
                "class_prediction": pred, "semantic_map": semantic_map}
