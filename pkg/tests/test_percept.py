import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from templeak import percept
from templeak.detect import cosine

from conftest import block_image, flat_image


class TestRLE:
    @given(
        w=st.integers(1, 24),
        h=st.integers(1, 24),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_round_trip(self, w, h, data):
        bits = np.array(
            data.draw(st.lists(st.booleans(), min_size=w * h, max_size=w * h))
        ).reshape(h, w)
        runs = percept.rle_encode(bits)
        assert np.array_equal(percept.rle_decode(runs, w, h), bits)

    def test_mask_rle_round_trip(self):
        mask = percept.Mask.rect(16, 12, (2, 3, 10, 9), "rug")
        again = percept.Mask.from_rle(mask.to_rle())
        assert np.array_equal(again.bits, mask.bits)
        assert again.class_label == "rug"
        assert again.coverage == mask.coverage


class TestMaskFill:
    def test_coverage_zero_identity(self):
        img = block_image(1)
        mask = percept.Mask.empty(64, 64, "rug")
        out = percept.mask_fill(img, mask)
        assert np.array_equal(percept.decode_rgb(out), percept.decode_rgb(img))

    def test_full_coverage_midgray_fallback(self):
        img = block_image(2)
        mask = percept.Mask.rect(64, 64, (0, 0, 64, 64), "rug")
        out = percept.decode_rgb(percept.mask_fill(img, mask))
        assert np.all(out == 128)

    def test_same_outside_implies_identical_output(self):
        base = percept.decode_rgb(block_image(3))
        mask = percept.Mask.rect(64, 64, (16, 16, 48, 48), "rug")
        a = base.copy()
        b = base.copy()
        rng = np.random.default_rng(0)
        b[mask.bits] = rng.integers(0, 256, size=(int(mask.bits.sum()), 3), dtype=np.uint8)
        out_a = percept.mask_fill(percept.encode_png(a), mask)
        out_b = percept.mask_fill(percept.encode_png(b), mask)
        assert out_a == out_b

    @pytest.mark.parametrize("policy", percept.FILL_POLICIES)
    def test_outside_pixels_untouched(self, policy):
        img = block_image(4)
        mask = percept.Mask.rect(64, 64, (5, 9, 40, 33), "rug")
        before = percept.decode_rgb(img)
        after = percept.decode_rgb(percept.mask_fill(img, mask, policy))
        assert np.array_equal(before[~mask.bits], after[~mask.bits])

    def test_dimension_mismatch_errors(self):
        img = block_image(5, width=64, height=64)
        mask = percept.Mask.rect(32, 32, (0, 0, 8, 8), "rug")
        with pytest.raises(percept.PerceptError, match="dimensions"):
            percept.mask_fill(img, mask)


class TestStubExtractor:
    def test_constant_image_maps_to_e1(self):
        vec = percept.StubExtractor().embed(flat_image())
        expected = np.zeros(256)
        expected[0] = 1.0
        assert np.array_equal(percept.unit_vector(vec), expected)

    def test_identical_images_identical_vectors(self):
        e = percept.StubExtractor()
        assert np.array_equal(e.embed(block_image(6)), e.embed(block_image(6)))

    def test_coverage_zero_mask_matches_raw(self, extractor):
        img = block_image(7)
        raw = percept.masked_embed(img, None, extractor)
        masked = percept.masked_embed(img, percept.Mask.empty(64, 64, "rug"), extractor)
        assert np.array_equal(raw.vector, masked.vector)

    def test_unit_norm(self, extractor):
        for seed in range(10):
            emb = percept.masked_embed(block_image(seed), None, extractor)
            assert abs(np.linalg.norm(emb.vector) - 1.0) < 1e-6


class TestMaskedEmbed:
    def test_self_cosine_is_one(self, extractor):
        mask = percept.Mask.rect(64, 64, (8, 8, 56, 56), "rug")
        emb = percept.masked_embed(block_image(8), mask, extractor)
        assert cosine(emb.vector, emb.vector) == pytest.approx(1.0)

    def test_planted_siblings_high_cosine(self, extractor):
        # same outside the mask, different inside
        base = percept.decode_rgb(block_image(9))
        mask = percept.Mask.rect(64, 64, (16, 16, 48, 48), "rug")
        rng = np.random.default_rng(1)
        a, b = base.copy(), base.copy()
        a[mask.bits] = rng.integers(0, 256, size=(int(mask.bits.sum()), 3), dtype=np.uint8)
        b[mask.bits] = rng.integers(0, 256, size=(int(mask.bits.sum()), 3), dtype=np.uint8)
        ea = percept.masked_embed(percept.encode_png(a), mask, extractor)
        eb = percept.masked_embed(percept.encode_png(b), mask, extractor)
        assert cosine(ea.vector, eb.vector) >= 0.99

    def test_unrelated_images_below_threshold(self, extractor):
        vecs = [percept.masked_embed(block_image(100 + i), None, extractor).vector for i in range(100)]
        worst = max(
            cosine(vecs[i], vecs[j]) for i in range(len(vecs)) for j in range(i + 1, len(vecs))
        )
        assert worst < 0.95

    def test_in_mask_invariance_is_bitwise(self, extractor):
        rng = np.random.default_rng(2)
        base = percept.decode_rgb(block_image(10))
        mask = percept.Mask.rect(64, 64, (4, 4, 60, 38), "rug")
        noisy = base.copy()
        noisy[mask.bits] = rng.integers(0, 256, size=(int(mask.bits.sum()), 3), dtype=np.uint8)
        e1 = percept.masked_embed(percept.encode_png(base), mask, extractor)
        e2 = percept.masked_embed(percept.encode_png(noisy), mask, extractor)
        assert e1.vector.tobytes() == e2.vector.tobytes()


class TestStubSegmenter:
    def test_recovers_planted_rectangle(self):
        base = block_image(11)
        rect = (16, 8, 48, 40)
        seg = percept.StubSegmenter()
        seg.register_plant("rug", rect, base)
        arr = percept.decode_rgb(base).copy()
        arr[8:40, 16:48] = (1, 2, 3)  # the planted fill
        mask = seg.segment(percept.encode_png(arr), "rug")
        assert np.array_equal(mask.bits, percept.Mask.rect(64, 64, rect, "rug").bits)
        assert mask.coverage > 0

    def test_image_without_class_has_zero_coverage(self):
        seg = percept.StubSegmenter()
        seg.register_plant("rug", (16, 8, 48, 40), block_image(12))
        mask = seg.segment(block_image(13), "rug")
        assert mask.coverage == 0

    def test_unregistered_class_errors(self):
        seg = percept.StubSegmenter()
        with pytest.raises(percept.PerceptError, match="unregistered"):
            seg.segment(block_image(14), "no-such-class")

    def test_dilation_grows_mask(self):
        mask = percept.Mask.rect(32, 32, (10, 10, 20, 20), "rug")
        grown = mask.dilated(2)
        assert grown.coverage > mask.coverage
        assert grown.bits[mask.bits].all()
        assert mask.dilated(0) is mask
