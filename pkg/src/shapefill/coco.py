"""Reader for COCO-format instance annotation files.

Supports polygon segmentations (rasterized with an even-odd fill, no
anti-aliasing) and RLE segmentations (uncompressed count lists or the
compressed ASCII encoding). Malformed records are skipped and counted.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image, ImageDraw

from .errors import ManifestError
from .samples import AnnotationRecord, DatasetManifest, ImageRecord


def rasterize_polygons(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    """Flat [x0, y0, x1, y1, ...] polygon lists -> binary mask, even-odd fill."""
    im = Image.new("1", (width, height), 0)
    draw = ImageDraw.Draw(im)
    for poly in polygons:
        pts = list(zip(poly[0::2], poly[1::2]))
        if len(pts) < 3:
            raise ValueError("degenerate polygon with fewer than 3 vertices")
        draw.polygon(pts, fill=1)
    return np.asarray(im, dtype=np.float32)


def _decode_rle_counts(counts: str) -> list[int]:
    """COCO compressed RLE: LEB128-style variable-length signed deltas."""
    out: list[int] = []
    i = 0
    while i < len(counts):
        x, k, more = 0, 0, True
        while more:
            c = ord(counts[i]) - 48
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            i += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(out) > 2:
            x += out[-2]
        out.append(x)
    return out


def decode_rle(rle: dict) -> np.ndarray:
    """RLE dict with 'size' [h, w] and 'counts' -> binary mask (column-major runs)."""
    h, w = rle["size"]
    counts = rle["counts"]
    if isinstance(counts, str):
        counts = _decode_rle_counts(counts)
    flat = np.zeros(h * w, dtype=np.float32)
    pos, val = 0, 0
    for run in counts:
        if val:
            flat[pos:pos + run] = 1.0
        pos += run
        val ^= 1
    if pos != h * w:
        raise ValueError(f"RLE runs cover {pos} pixels, expected {h * w}")
    return flat.reshape(w, h).T


def read_coco_manifest(annotation_file: str, image_root: str,
                       split: str = "train") -> DatasetManifest:
    """Parse a COCO-format JSON file into a manifest with rasterized masks.

    Category ids are remapped to a dense [0, C) range. Annotations that fail
    to rasterize are dropped and counted in manifest.warnings.
    """
    try:
        with open(annotation_file) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"cannot parse {annotation_file}: {e}") from e
    if not isinstance(doc, dict) or "images" not in doc:
        raise ManifestError(f"{annotation_file} is not a COCO-format annotation file")

    images = []
    sizes = {}
    for rec in doc.get("images", []):
        path = os.path.join(image_root, rec["file_name"])
        images.append(ImageRecord(rec["id"], path, rec["width"], rec["height"]))
        sizes[rec["id"]] = (rec["height"], rec["width"])

    raw_categories = sorted(c["id"] for c in doc.get("categories", []))
    remap = {cid: i for i, cid in enumerate(raw_categories)}
    names = {c["id"]: c["name"] for c in doc.get("categories", [])}
    categories = {remap[cid]: names[cid] for cid in raw_categories}

    annotations = []
    warnings = 0
    for ann in doc.get("annotations", []):
        try:
            h, w = sizes[ann["image_id"]]
            seg = ann["segmentation"]
            if isinstance(seg, dict):
                mask = decode_rle(seg)
            else:
                mask = rasterize_polygons(seg, h, w)
            if mask.shape != (h, w) or mask.sum() == 0:
                raise ValueError("empty or mis-sized mask")
            annotations.append(AnnotationRecord(ann["image_id"], remap[ann["category_id"]],
                                                mask=mask))
        except (KeyError, ValueError, TypeError, IndexError):
            warnings += 1
    return DatasetManifest(images, annotations, categories, split=split, warnings=warnings)
