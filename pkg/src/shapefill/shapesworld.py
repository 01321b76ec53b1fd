"""Procedural toy dataset for desk-scale verification.

Every image contains one object (circle / square / triangle / star) on a
textured background. The background texture family is correlated with the
object category with strength rho: at rho = 1 the background alone
determines the category, at rho = 0 it carries no class information.
Object appearance (hue) is category-specific, so generating the right
object requires knowing the class.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .errors import InvalidInputError, ManifestError
from .samples import (
    AnnotationRecord,
    DatasetManifest,
    FilterConfig,
    ImageRecord,
    InpaintingSample,
    InstanceAnnotation,
    cut_hole,
    filter_instance,
    load_image,
    load_mask,
)

SHAPE_NAMES = ("circle", "square", "triangle", "star")


@dataclass
class ShapesWorldConfig:
    canvas: int = 64
    num_classes: int = 4
    rho: float = 1.0                      # class-background correlation
    size_range: tuple[float, float] = (0.18, 0.32)  # object half-extent / canvas
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidInputError(f"rho must be in [0, 1], got {self.rho}")
        if self.num_classes < 2:
            raise InvalidInputError("need at least 2 categories")
        if self.canvas < 16:
            raise InvalidInputError("canvas must be >= 16")


def _hsv_to_rgb(h, s, v):
    """Vectorized HSV -> RGB, all arrays in [0, 1]."""
    h = np.asarray(h) % 1.0
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _background(cfg: ShapesWorldConfig, family: int, rng: np.random.Generator) -> np.ndarray:
    """Striped texture whose hue and orientation are set by the family."""
    n = cfg.canvas
    yy, xx = np.mgrid[0:n, 0:n] / n
    angle = math.pi * family / cfg.num_classes + rng.uniform(-0.15, 0.15)
    freq = rng.uniform(3.0, 6.0)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    wave = np.sin(2.0 * math.pi * freq * (xx * math.cos(angle) + yy * math.sin(angle)) + phase)
    hue = family / cfg.num_classes + rng.uniform(-0.02, 0.02)
    sat = 0.55 + 0.1 * wave
    val = 0.55 + 0.25 * wave + rng.normal(0.0, 0.02, size=(n, n))
    rgb = _hsv_to_rgb(np.full((n, n), hue), sat, np.clip(val, 0.0, 1.0))
    return rgb * 2.0 - 1.0


def _shape_mask(cfg: ShapesWorldConfig, shape: str, cx: float, cy: float, r: float) -> np.ndarray:
    """Rasterize one shape to a binary mask, no anti-aliasing."""
    im = Image.new("L", (cfg.canvas, cfg.canvas), 0)
    draw = ImageDraw.Draw(im)
    if shape == "circle":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=1)
    elif shape == "square":
        draw.rectangle([cx - r, cy - r, cx + r, cy + r], fill=1)
    elif shape == "triangle":
        pts = [(cx + r * math.sin(a), cy - r * math.cos(a))
               for a in (0.0, 2.0 * math.pi / 3.0, 4.0 * math.pi / 3.0)]
        draw.polygon(pts, fill=1)
    elif shape == "star":
        pts = []
        for k in range(10):
            rad = r if k % 2 == 0 else 0.45 * r
            a = math.pi * k / 5.0
            pts.append((cx + rad * math.sin(a), cy - rad * math.cos(a)))
        draw.polygon(pts, fill=1)
    else:
        raise InvalidInputError(f"unknown shape {shape!r}")
    return np.asarray(im, dtype=np.float32)


def _render(cfg: ShapesWorldConfig, category: int, rng: np.random.Generator):
    """One (image, mask) pair. Object hue is offset from the background palette."""
    if rng.random() < cfg.rho:
        family = category
    else:
        family = int(rng.integers(cfg.num_classes))
    image = _background(cfg, family, rng)

    n = cfg.canvas
    r = rng.uniform(*cfg.size_range) * n
    margin = r + 3.0
    cx = rng.uniform(margin, n - margin)
    cy = rng.uniform(margin, n - margin)
    shape = SHAPE_NAMES[category % len(SHAPE_NAMES)]
    mask = _shape_mask(cfg, shape, cx, cy, r)

    hue = (category + 0.5) / cfg.num_classes + rng.uniform(-0.02, 0.02)
    val = np.clip(0.75 + rng.normal(0.0, 0.05, size=(n, n)), 0.0, 1.0)
    obj = _hsv_to_rgb(np.full((n, n), hue), np.full((n, n), 0.9), val) * 2.0 - 1.0
    image = np.where(mask[None] > 0, obj, image).astype(np.float32)
    return image, mask


def generate_shapesworld(cfg: ShapesWorldConfig, n: int, out_dir: str,
                         seed: int | None = None, split: str = "train") -> DatasetManifest:
    """Write n images + masks + a JSON manifest. Deterministic given (cfg, seed)."""
    if n < 1:
        raise InvalidInputError("n must be >= 1")
    seed = cfg.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)

    images, annotations = [], []
    man = {
        "split": split,
        "canvas": cfg.canvas,
        "num_classes": cfg.num_classes,
        "rho": cfg.rho,
        "seed": seed,
        "categories": [{"id": i, "name": SHAPE_NAMES[i % len(SHAPE_NAMES)] + ("" if i < 4 else f"_{i}")}
                       for i in range(cfg.num_classes)],
        "images": [],
        "annotations": [],
    }
    for i in range(n):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(i,)))
        category = int(rng.integers(cfg.num_classes))
        image, mask = _render(cfg, category, rng)

        img_file = f"img_{i:05d}.png"
        mask_file = f"mask_{i:05d}.png"
        arr = np.clip((image.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
        Image.fromarray(arr).save(os.path.join(out_dir, img_file))
        Image.fromarray((mask > 0.5).astype(np.uint8) * 255, mode="L").save(
            os.path.join(out_dir, mask_file))

        man["images"].append({"id": i, "file": img_file, "width": cfg.canvas, "height": cfg.canvas})
        man["annotations"].append({"image_id": i, "category_id": category, "mask_file": mask_file})
        images.append(ImageRecord(i, os.path.join(out_dir, img_file), cfg.canvas, cfg.canvas))
        annotations.append(AnnotationRecord(i, category, mask_path=os.path.join(out_dir, mask_file)))

    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(man, f, indent=1)
    categories = {c["id"]: c["name"] for c in man["categories"]}
    return DatasetManifest(images, annotations, categories, split=split)


def read_shapesworld_manifest(out_dir: str) -> DatasetManifest:
    path = os.path.join(out_dir, "manifest.json")
    try:
        with open(path) as f:
            man = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e
    images = [ImageRecord(r["id"], os.path.join(out_dir, r["file"]), r["width"], r["height"])
              for r in man["images"]]
    annotations = [AnnotationRecord(a["image_id"], a["category_id"],
                                    mask_path=os.path.join(out_dir, a["mask_file"]))
                   for a in man["annotations"]]
    categories = {c["id"]: c["name"] for c in man["categories"]}
    return DatasetManifest(images, annotations, categories, split=man.get("split", "train"))


def load_dataset(manifest: DatasetManifest,
                 filter_cfg: FilterConfig | None = None) -> list[InpaintingSample]:
    """Materialize every (image, annotation) pair as an InpaintingSample."""
    filter_cfg = filter_cfg or FilterConfig()
    by_image = {rec.id: rec for rec in manifest.images}
    C = manifest.num_classes
    samples = []
    for ann in manifest.annotations:
        target = load_image(by_image[ann.image_id].path)
        mask = ann.mask if ann.mask is not None else load_mask(ann.mask_path)
        if not filter_instance(InstanceAnnotation(mask, ann.category_id), filter_cfg):
            continue
        hole = mask.astype(np.float32)
        one_hot = np.zeros(C, dtype=np.float32)
        one_hot[ann.category_id] = 1.0
        samples.append(InpaintingSample(cut_hole(target, hole), hole, target,
                                        ann.category_id, one_hot))
    return samples
