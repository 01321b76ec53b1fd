import hashlib
import os

import numpy as np
import pytest

from shapefill.errors import InvalidInputError
from shapefill.shapesworld import (
    ShapesWorldConfig,
    generate_shapesworld,
    load_dataset,
    read_shapesworld_manifest,
)


def _dir_checksum(path):
    digest = hashlib.sha256()
    for name in sorted(os.listdir(path)):
        with open(os.path.join(path, name), "rb") as f:
            digest.update(name.encode())
            digest.update(f.read())
    return digest.hexdigest()


def _background_classifier(samples_train, samples_test):
    """Nearest-centroid on the mean color of the known (background) region."""

    def descriptor(s):
        known = s.hole == 0
        return s.target[:, known].mean(axis=1)

    centroids = {}
    for s in samples_train:
        centroids.setdefault(s.category, []).append(descriptor(s))
    centroids = {c: np.mean(v, axis=0) for c, v in centroids.items()}
    hits = 0
    for s in samples_test:
        d = descriptor(s)
        pred = min(centroids, key=lambda c: np.linalg.norm(centroids[c] - d))
        hits += pred == s.category
    return hits / len(samples_test)


def test_deterministic_regeneration(tmp_path):
    cfg = ShapesWorldConfig(seed=7)
    generate_shapesworld(cfg, 10, str(tmp_path / "a"))
    generate_shapesworld(cfg, 10, str(tmp_path / "b"))
    assert _dir_checksum(tmp_path / "a") == _dir_checksum(tmp_path / "b")


def test_full_correlation_background_determines_class(tmp_path):
    cfg = ShapesWorldConfig(rho=1.0, seed=3)
    generate_shapesworld(cfg, 160, str(tmp_path))
    samples = load_dataset(read_shapesworld_manifest(str(tmp_path)))
    split = len(samples) // 2
    acc = _background_classifier(samples[:split], samples[split:])
    assert acc == 1.0


def test_zero_correlation_background_is_uninformative(tmp_path):
    cfg = ShapesWorldConfig(rho=0.0, seed=3)
    generate_shapesworld(cfg, 320, str(tmp_path))
    samples = load_dataset(read_shapesworld_manifest(str(tmp_path)))
    split = len(samples) // 2
    acc = _background_classifier(samples[:split], samples[split:])
    assert abs(acc - 0.25) <= 0.1


def test_each_image_has_exactly_one_annotation(toy_dataset_dir):
    manifest = read_shapesworld_manifest(toy_dataset_dir)
    per_image = {}
    for ann in manifest.annotations:
        per_image[ann.image_id] = per_image.get(ann.image_id, 0) + 1
    assert set(per_image.values()) == {1}
    assert len(per_image) == len(manifest.images)


def test_sample_invariants(toy_samples):
    assert len(toy_samples) > 0
    for s in toy_samples:
        assert set(np.unique(s.hole)) <= {0.0, 1.0}
        assert 0.02 <= s.hole.mean() <= 0.5
        known = s.hole == 0
        np.testing.assert_array_equal(s.masked_image[:, known], s.target[:, known])
        assert np.isfinite(s.target).all()
        assert s.target.min() >= -1.0 and s.target.max() <= 1.0


def test_invalid_config_rejected():
    with pytest.raises(InvalidInputError):
        ShapesWorldConfig(rho=1.5)
    with pytest.raises(InvalidInputError):
        ShapesWorldConfig(num_classes=1)
    with pytest.raises(InvalidInputError):
        generate_shapesworld(ShapesWorldConfig(), 0, "/tmp/unused")
