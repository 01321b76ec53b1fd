"""Quantitative evaluation: Fréchet feature distance in a toy feature
space, a perceptual-distance proxy, and sample-grid emission."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import InvalidInputError
from .samples import InpaintingSample, save_image

# Published full-scale results (256x256, canonical metric networks); recorded
# in reports as context only, not comparable to toy-scale numbers.
FULL_SCALE_REFERENCE = {"coco_fid": 4.700, "coco_lpips": 0.1049}


@dataclass
class FeatureStats:
    mean: np.ndarray        # [d]
    cov: np.ndarray         # [d, d]
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise InvalidInputError("need at least 2 samples for feature statistics")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise InvalidInputError("covariance must be symmetric")


@dataclass
class MetricsReport:
    fid: float
    lpips_proxy: float
    n_images: int
    config_fingerprint: str
    per_category: dict[int, dict]
    reference_full_scale: dict = field(default_factory=lambda: dict(FULL_SCALE_REFERENCE))

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)


def extract_stats(images: torch.Tensor, fx) -> FeatureStats:
    """Mean and covariance of pooled features over an image batch."""
    if images.shape[0] < 2:
        raise InvalidInputError("need at least 2 images")
    with torch.no_grad():
        feats = fx.pooled(images).double().numpy()
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    return FeatureStats(mean, np.atleast_2d(cov), feats.shape[0])


def _sqrtm_psd(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negative modes clamped."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at 0."""
    if a.mean.shape != b.mean.shape:
        raise InvalidInputError("feature dimensions disagree")
    diff = a.mean - b.mean
    root_a = _sqrtm_psd(a.cov)
    inner = root_a @ b.cov @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    if vals.min() < -1e-6:
        warnings.warn("ill-conditioned covariance product; regularizing with 1e-6 * I")
        inner = inner + 1e-6 * np.eye(inner.shape[0])
        vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    fid = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    return max(fid, 0.0)


def lpips_proxy(images_a: torch.Tensor, images_b: torch.Tensor, fx) -> float:
    """Mean over layers and pairs of unit-normalized feature differences."""
    if images_a.shape != images_b.shape:
        raise InvalidInputError("paired images must have the same shape")
    with torch.no_grad():
        layers_a = fx.layers(images_a)
        layers_b = fx.layers(images_b)
        total = 0.0
        for fa, fb in zip(layers_a, layers_b):
            ua = fa / (fa.norm(dim=1, keepdim=True) + 1e-10)
            ub = fb / (fb.norm(dim=1, keepdim=True) + 1e-10)
            total += float((ua - ub).pow(2).sum(dim=1).mean())
    return total / len(layers_a)


def _fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def inpaint_batch(generator, samples: list[InpaintingSample], seed: int,
                  batch_size: int = 32) -> torch.Tensor:
    """Composited inpainting results for every sample, fixed latent seed."""
    from .train import batch_to_tensors
    rng = torch.Generator().manual_seed(seed)
    outs = []
    with torch.no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = batch_to_tensors(samples[i:i + batch_size])
            z = torch.randn(chunk["masked"].shape[0], generator.cfg.z_dim, generator=rng)
            outs.append(generator(chunk["masked"], chunk["hole"], z)["composite"])
    return torch.cat(outs)


def evaluate(generator, samples: list[InpaintingSample], fx,
             seed: int = 0, precomputed: torch.Tensor | None = None) -> MetricsReport:
    """Inpaint a split and score it against the real images.

    FID is computed between the composited and real sets; the perceptual
    proxy is computed pairwise against the ground truth. Read-only.
    """
    if not samples:
        raise InvalidInputError("evaluation split is empty")
    real = torch.from_numpy(np.stack([s.target for s in samples]))
    comp = precomputed if precomputed is not None else inpaint_batch(generator, samples, seed)

    fid = frechet_distance(extract_stats(comp, fx), extract_stats(real, fx))
    proxy = lpips_proxy(comp, real, fx)

    per_category: dict[int, dict] = {}
    cats = np.array([s.category for s in samples])
    for c in sorted(set(cats.tolist())):
        idx = np.nonzero(cats == c)[0]
        per_category[int(c)] = {
            "n": int(idx.size),
            "lpips_proxy": lpips_proxy(comp[idx], real[idx], fx),
        }
    fingerprint = _fingerprint({
        "n": len(samples), "seed": seed,
        "model": dataclasses.asdict(generator.cfg) if hasattr(generator, "cfg") else None,
    })
    return MetricsReport(fid=fid, lpips_proxy=proxy, n_images=len(samples),
                         config_fingerprint=fingerprint, per_category=per_category)


def save_sample_grid(path: str, sample: InpaintingSample, generator,
                     num_draws: int = 4, seed: int = 0) -> None:
    """One-row mosaic: input | inpainted x k | ground truth."""
    from .train import batch_to_tensors
    chunk = batch_to_tensors([sample])
    rng = torch.Generator().manual_seed(seed)
    tiles = [sample.masked_image]
    with torch.no_grad():
        for _ in range(num_draws):
            z = torch.randn(1, generator.cfg.z_dim, generator=rng)
            comp = generator(chunk["masked"], chunk["hole"], z)["composite"]
            tiles.append(comp[0].numpy())
    tiles.append(sample.target)
    save_image(path, np.concatenate(tiles, axis=2))
