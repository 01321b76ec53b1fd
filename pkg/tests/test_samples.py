import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapefill.errors import InvalidInputError
from shapefill.samples import (
    FilterConfig,
    InstanceAnnotation,
    composite,
    cut_hole,
    filter_instance,
    make_samples,
)

from conftest import random_image, random_mask


class TestCutHole:
    def test_full_hole_forces_fill_value(self):
        target = np.ones((3, 8, 8), dtype=np.float32)
        out = cut_hole(target, np.ones((8, 8), dtype=np.float32))
        assert (out == 0).all()

    def test_empty_mask_is_identity(self, rng):
        target = random_image(rng)
        out = cut_hole(target, np.zeros((16, 16), dtype=np.float32))
        np.testing.assert_array_equal(out, target)

    def test_half_hole_checkerboard(self):
        target = np.indices((8, 8)).sum(axis=0)[None].repeat(3, axis=0) % 2
        target = target.astype(np.float32)
        hole = np.zeros((8, 8), dtype=np.float32)
        hole[:, :4] = 1.0
        out = cut_hole(target, hole)
        assert (out[:, :, :4] == 0).all()
        np.testing.assert_array_equal(out[:, :, 4:], target[:, :, 4:])

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            cut_hole(random_image(rng, 16, 16), np.zeros((8, 8), dtype=np.float32))

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_idempotent(self, seed):
        r = np.random.default_rng(seed)
        target, hole = random_image(r), random_mask(r)
        once = cut_hole(target, hole)
        np.testing.assert_array_equal(cut_hole(once, hole), once)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_complementary_masks_reassemble(self, seed):
        r = np.random.default_rng(seed)
        target, hole = random_image(r), random_mask(r)
        total = cut_hole(target, hole) + cut_hole(target, 1.0 - hole)
        np.testing.assert_allclose(total, target, atol=0)


class TestComposite:
    def test_full_hole_returns_generated(self, rng):
        gen, inp = random_image(rng), random_image(rng)
        out = composite(gen, inp, np.ones((16, 16), dtype=np.float32))
        np.testing.assert_array_equal(out, gen)

    def test_no_hole_returns_input(self, rng):
        gen, inp = random_image(rng), random_image(rng)
        out = composite(gen, inp, np.zeros((16, 16), dtype=np.float32))
        np.testing.assert_array_equal(out, inp)

    def test_elementwise_oracle(self, rng):
        gen, inp, hole = random_image(rng), random_image(rng), random_mask(rng)
        expected = hole[None] * gen + (1 - hole[None]) * inp
        np.testing.assert_array_equal(composite(gen, inp, hole), expected)


class TestFilterInstance:
    def _mask_with_fraction(self, frac, h=20, w=20):
        mask = np.zeros((h, w), dtype=np.float32)
        side = int(round(np.sqrt(frac * h * w)))
        mask[2:2 + side, 2:2 + side] = 1.0
        return mask

    def test_mid_fraction_accepted(self):
        ann = InstanceAnnotation(self._mask_with_fraction(0.15), 0)
        assert filter_instance(ann, FilterConfig(0.02, 0.5, 1))

    def test_oversized_rejected(self):
        mask = np.ones((20, 20), dtype=np.float32)
        mask[0] = mask[-1] = mask[:, 0] = mask[:, -1] = 0
        assert not filter_instance(InstanceAnnotation(mask, 0), FilterConfig(0.02, 0.5, 1))

    def test_border_margin_enforced(self):
        mask = np.zeros((20, 20), dtype=np.float32)
        mask[0:6, 0:6] = 1.0  # touches the border
        assert not filter_instance(InstanceAnnotation(mask, 0), FilterConfig(0.0, 1.0, 2))
        mask2 = np.zeros((20, 20), dtype=np.float32)
        mask2[2:8, 2:8] = 1.0
        assert filter_instance(InstanceAnnotation(mask2, 0), FilterConfig(0.0, 1.0, 2))


class TestMakeSamples:
    def _annotations(self, n, h=24, w=24):
        anns = []
        for i in range(n):
            mask = np.zeros((h, w), dtype=np.float32)
            mask[3 + i:9 + i, 3:9] = 1.0
            anns.append(InstanceAnnotation(mask, i % 3))
        return anns

    def test_one_sample_per_passing_annotation(self, rng):
        target = random_image(rng, 24, 24)
        samples = make_samples(target, self._annotations(3), FilterConfig(), 3)
        assert len(samples) == 3

    def test_oversized_instance_filtered(self, rng):
        target = random_image(rng, 24, 24)
        big = np.zeros((24, 24), dtype=np.float32)
        big[1:23, 1:23] = 1.0   # fraction ~0.84
        samples = make_samples(target, [InstanceAnnotation(big, 0)], FilterConfig(), 3)
        assert samples == []

    def test_empty_annotation_list(self, rng):
        assert make_samples(random_image(rng), [], FilterConfig(), 3) == []

    def test_pixel_exact_against_masking_oracle(self, rng):
        target = random_image(rng, 24, 24)
        anns = self._annotations(2)
        samples = make_samples(target, anns, FilterConfig(), 3)
        for s, ann in zip(samples, anns):
            expected = target * (1.0 - ann.mask[None])
            np.testing.assert_array_equal(s.masked_image, expected)
            np.testing.assert_array_equal(s.target, target)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_emitted_samples_satisfy_invariants(self, seed):
        r = np.random.default_rng(seed)
        target = random_image(r, 24, 24)
        mask = np.zeros((24, 24), dtype=np.float32)
        r0, c0 = r.integers(2, 10, size=2)
        mask[r0:r0 + 8, c0:c0 + 8] = 1.0
        samples = make_samples(target, [InstanceAnnotation(mask, int(r.integers(4)))],
                               FilterConfig(), 4)
        for s in samples:
            known = s.hole == 0
            np.testing.assert_array_equal(s.masked_image[:, known], s.target[:, known])
            assert (s.masked_image[:, s.hole == 1] == 0).all()
            assert s.one_hot.sum() == 1.0 and s.one_hot[s.category] == 1.0
