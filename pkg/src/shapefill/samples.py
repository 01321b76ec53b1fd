"""Training-sample construction: object-shaped holes cut from annotated images.

Images are float32 arrays of shape [3, H, W] with values in [-1, 1].
Hole masks are float32 arrays of shape [H, W] with values in {0, 1},
1 inside the hole. Masked pixels are filled with 0, the per-channel
mean under [-1, 1] normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import InvalidInputError


@dataclass
class FilterConfig:
    """Instance filter: area-fraction limits and required border margin."""

    min_frac: float = 0.02
    max_frac: float = 0.5
    border_margin: int = 1


@dataclass
class InstanceAnnotation:
    mask: np.ndarray          # [H, W], {0, 1}
    category_id: int


@dataclass
class InpaintingSample:
    masked_image: np.ndarray  # [3, H, W]
    hole: np.ndarray          # [H, W]
    target: np.ndarray        # [3, H, W]
    category: int
    one_hot: np.ndarray       # [C]


@dataclass
class ImageRecord:
    id: int
    path: str
    width: int
    height: int


@dataclass
class AnnotationRecord:
    image_id: int
    category_id: int
    mask: np.ndarray | None = None   # rasterized at image resolution
    mask_path: str | None = None


@dataclass
class DatasetManifest:
    images: list[ImageRecord]
    annotations: list[AnnotationRecord]
    categories: dict[int, str]
    split: str = "train"
    warnings: int = 0

    def __post_init__(self):
        ids = sorted(self.categories)
        if ids != list(range(len(ids))):
            raise InvalidInputError(f"category ids must be dense in [0, C): {ids}")
        image_ids = {rec.id for rec in self.images}
        for ann in self.annotations:
            if ann.image_id not in image_ids:
                raise InvalidInputError(f"annotation references unknown image {ann.image_id}")

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    def annotations_for(self, image_id: int) -> list[AnnotationRecord]:
        return [a for a in self.annotations if a.image_id == image_id]


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[0] != 3:
        raise InvalidInputError(f"expected image of shape [3, H, W], got {image.shape}")
    if not np.all(np.isfinite(image)):
        raise InvalidInputError("image contains non-finite values")


def _check_mask(mask: np.ndarray) -> None:
    if mask.ndim != 2:
        raise InvalidInputError(f"expected mask of shape [H, W], got {mask.shape}")
    if not np.isin(mask, (0, 1)).all():
        raise InvalidInputError("mask values must be 0 or 1")


def cut_hole(target: np.ndarray, hole: np.ndarray) -> np.ndarray:
    """Zero out the hole region of `target`, keeping known pixels intact."""
    _check_image(target)
    _check_mask(hole)
    if target.shape[1:] != hole.shape:
        raise InvalidInputError(f"image {target.shape[1:]} vs mask {hole.shape}")
    return target * (1.0 - hole[None].astype(target.dtype))


def composite(generated: np.ndarray, input_masked: np.ndarray, hole: np.ndarray) -> np.ndarray:
    """Generated content inside the hole, the input everywhere else."""
    _check_image(generated)
    _check_image(input_masked)
    _check_mask(hole)
    if generated.shape != input_masked.shape or generated.shape[1:] != hole.shape:
        raise InvalidInputError("composite inputs have inconsistent shapes")
    h = hole[None].astype(generated.dtype)
    return h * generated + (1.0 - h) * input_masked


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int]:
    """(row_min, col_min, row_max, col_max), inclusive. Mask must be nonempty."""
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise InvalidInputError("mask is empty")
    return int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())


def filter_instance(ann: InstanceAnnotation, cfg: FilterConfig) -> bool:
    """Accept instances by area fraction and bounding-box border margin."""
    mask = ann.mask
    frac = float(mask.mean())
    if frac == 0.0:
        return False
    if not (cfg.min_frac <= frac <= cfg.max_frac):
        return False
    r0, c0, r1, c1 = mask_bbox(mask)
    h, w = mask.shape
    m = cfg.border_margin
    return r0 >= m and c0 >= m and r1 <= h - 1 - m and c1 <= w - 1 - m


def make_samples(
    target: np.ndarray,
    annotations: list[InstanceAnnotation],
    filter_cfg: FilterConfig,
    num_classes: int,
) -> list[InpaintingSample]:
    """One training sample per annotation that passes the instance filter."""
    _check_image(target)
    samples = []
    for ann in annotations:
        _check_mask(ann.mask)
        if ann.mask.shape != target.shape[1:]:
            raise InvalidInputError("annotation mask does not match image size")
        if not 0 <= ann.category_id < num_classes:
            raise InvalidInputError(f"category_id {ann.category_id} out of range [0, {num_classes})")
        if not filter_instance(ann, filter_cfg):
            continue
        hole = ann.mask.astype(np.float32)
        one_hot = np.zeros(num_classes, dtype=np.float32)
        one_hot[ann.category_id] = 1.0
        samples.append(
            InpaintingSample(
                masked_image=cut_hole(target, hole),
                hole=hole,
                target=target,
                category=ann.category_id,
                one_hot=one_hot,
            )
        )
    return samples


def load_image(path: str) -> np.ndarray:
    """8-bit image file -> float32 [3, H, W] in [-1, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return (arr / 127.5 - 1.0).transpose(2, 0, 1)


def save_image(path: str, image: np.ndarray) -> None:
    """float [3, H, W] in [-1, 1] -> 8-bit RGB file."""
    arr = np.clip((image.transpose(1, 2, 0) + 1.0) * 127.5, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def load_mask(path: str) -> np.ndarray:
    """Single-channel mask file (255 = hole) -> float32 {0, 1} array."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr >= 128).astype(np.float32)


def save_mask(path: str, mask: np.ndarray) -> None:
    Image.fromarray((mask > 0.5).astype(np.uint8) * 255, mode="L").save(path)
