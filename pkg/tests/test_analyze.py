import numpy as np
import pytest

from templeak import analyze, percept, providers
from templeak.detect import TemplateGroup, cosine
from templeak.percept import Mask
from templeak.prompt_forge import Collocation

from conftest import block_image


def unit(v):
    return percept.unit_vector(np.asarray(v, dtype=np.float64))


def make_group(members, collocation="Area Rug", min_pairwise=0.99, fingerprint=None):
    return TemplateGroup(
        group_id="run-g000",
        members=tuple(sorted(members)),
        collocation=Collocation(collocation),
        fingerprint=fingerprint if fingerprint is not None else unit([1, 0, 0]),
        min_pairwise=min_pairwise,
    )


class TestCliqueDispersion:
    def test_byte_identical_members_are_template_memorized(self):
        img = block_image(70)
        group = make_group(["m1", "m2"])
        finding = analyze.clique_dispersion(group, {"m1": img, "m2": img})
        assert finding.kind == "template_memorized"
        assert finding.evidence["max_pixel_rms"] == 0.0

    def test_object_swap_is_perturbed(self, extractor):
        size = 512
        base = percept.decode_rgb(block_image(60, size, size, cells=16))
        mask = Mask.rect(size, size, (128, 128, 384, 384), "rug")
        rng = np.random.default_rng(3)
        a = base.copy()
        a[mask.bits] = rng.integers(0, 256, (int(mask.bits.sum()), 3), dtype=np.uint8)
        b = base.copy()
        b[mask.bits] = rng.integers(0, 256, (int(mask.bits.sum()), 3), dtype=np.uint8)
        b[16:80, 16:80] = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)  # swapped object

        img_a, img_b = percept.encode_png(a), percept.encode_png(b)
        ea = percept.masked_embed(img_a, mask, extractor)
        eb = percept.masked_embed(img_b, mask, extractor)
        min_pairwise = cosine(ea.vector, eb.vector)
        assert min_pairwise > 0.95

        group = make_group(["ma", "mb"], min_pairwise=min_pairwise)
        finding = analyze.clique_dispersion(
            group, {"ma": img_a, "mb": img_b}, {"ma": mask, "mb": mask}
        )
        assert finding.kind == "perturbed"
        assert finding.evidence["max_pixel_rms"] > 8.0

    def test_single_member_errors(self):
        group = TemplateGroup(
            group_id="run-g000",
            members=("only",),
            collocation=Collocation("x"),
            fingerprint=unit([1, 0]),
            min_pairwise=1.0,
        )
        with pytest.raises(analyze.AnalyzeError, match="2 members"):
            analyze.clique_dispersion(group, {"only": block_image(1)})

    def test_member_order_invariant(self):
        imgs = {"m1": block_image(71), "m2": block_image(72), "m3": block_image(73)}
        g1 = make_group(["m1", "m2", "m3"])
        g2 = make_group(["m3", "m1", "m2"])
        f1 = analyze.clique_dispersion(g1, imgs)
        f2 = analyze.clique_dispersion(g2, imgs)
        assert f1.kind == f2.kind
        assert f1.evidence["max_pixel_rms"] == f2.evidence["max_pixel_rms"]


class TestLeakageScan:
    def fingerprint(self, seed):
        return unit(np.random.default_rng(seed).normal(size=16))

    def test_cross_category_match_is_flagged(self):
        fp = self.fingerprint(1)
        groups = [make_group(["a", "b"], collocation="T-Shirt", fingerprint=fp)]
        gens = [analyze.GenerationEmbedding("leak1", "Tank Top", fp)]
        findings = analyze.leakage_scan(groups, gens)
        assert len(findings) == 1
        assert findings[0].subject == "leak1"
        assert findings[0].evidence["group_collocation"] == "T-Shirt"
        assert findings[0].evidence["generation_collocation"] == "Tank Top"

    def test_allowlisted_pair_is_skipped(self):
        fp = self.fingerprint(1)
        groups = [make_group(["a", "b"], collocation="T-Shirt", fingerprint=fp)]
        gens = [analyze.GenerationEmbedding("leak1", "Tank Top", fp)]
        assert analyze.leakage_scan(groups, gens, [("T-Shirt", "Tank Top")]) == []
        assert analyze.leakage_scan(groups, gens, [("tank top", "t-shirt")]) == []

    def test_same_collocation_never_flags(self):
        fp = self.fingerprint(2)
        groups = [make_group(["a", "b"], collocation="Area Rug", fingerprint=fp)]
        gens = [analyze.GenerationEmbedding(f"d{i}", "Area Rug", fp) for i in range(5)]
        assert analyze.leakage_scan(groups, gens) == []

    def test_no_cross_matches_empty(self):
        groups = [make_group(["a", "b"], collocation="T-Shirt", fingerprint=self.fingerprint(3))]
        gens = [analyze.GenerationEmbedding("g1", "Tank Top", self.fingerprint(4))]
        assert analyze.leakage_scan(groups, gens) == []


class TestPatchMatch:
    def stitched(self):
        a = percept.decode_rgb(block_image(80, 256, 256))
        b = percept.decode_rgb(block_image(81, 256, 256))
        stitched = a.copy()
        stitched[:, 128:] = b[:, 128:]
        return percept.encode_png(a), percept.encode_png(b), percept.encode_png(stitched)

    def test_two_source_stitch_names_both(self):
        img_a, img_b, img = self.stitched()
        findings = analyze.patch_match(img, [("srcA", img_a), ("srcB", img_b)])
        assert len(findings) == 1
        sources = findings[0].evidence["sources"]
        assert set(sources) == {"srcA", "srcB"}
        assert all(len(cells) >= 1 for cells in sources.values())

    def test_single_source_no_finding(self):
        img_a, img_b, _ = self.stitched()
        assert analyze.patch_match(img_a, [("srcA", img_a), ("srcB", img_b)]) == []

    def test_unrelated_image_no_finding(self):
        img_a, img_b, _ = self.stitched()
        other = block_image(99, 256, 256)
        assert analyze.patch_match(other, [("srcA", img_a), ("srcB", img_b)]) == []

    def test_source_order_invariance(self):
        img_a, img_b, img = self.stitched()
        f1 = analyze.patch_match(img, [("srcA", img_a), ("srcB", img_b)])
        f2 = analyze.patch_match(img, [("srcB", img_b), ("srcA", img_a)])
        assert f1[0].evidence == f2[0].evidence

    def test_degenerate_grid_errors(self):
        with pytest.raises(analyze.AnalyzeError, match="2x2"):
            analyze.patch_match(block_image(1), [("s", block_image(2))], rows=1, cols=4)

    def test_empty_sources_errors(self):
        with pytest.raises(analyze.AnalyzeError, match="non-empty"):
            analyze.patch_match(block_image(1), [])


class StepBlindProvider(providers.StubProvider):
    def generate_with_meta(self, request):
        final = self._final_image(request)
        return percept.encode_png(final), {}


class TestEarlyStepProbe:
    def test_flat_step1_scores_near_zero(self):
        provider = providers.StubProvider()
        finding = analyze.early_step_probe("Galaxy Tote Bag", [0, 1], provider, width=64, height=64)
        assert finding.score < 0.01
        assert finding.evidence["heuristic"] is True

    def test_sharp_at_step1_scores_near_one(self):
        provider = providers.StubProvider(sharp_at_step1={"Galaxy Area Rug"})
        finding = analyze.early_step_probe("Galaxy Area Rug", [0, 1], provider, width=64, height=64)
        assert finding.score == pytest.approx(1.0, abs=0.05)

    def test_planted_prompt_ranks_first(self):
        prompts = [f"Galaxy Item {i:02d}" for i in range(10)]
        provider = providers.StubProvider(sharp_at_step1={prompts[4]})
        scores = {
            p: analyze.early_step_probe(p, [0, 1], provider, width=64, height=64).score
            for p in prompts
        }
        ranked = sorted(scores, key=scores.get, reverse=True)
        assert ranked[0] == prompts[4]

    def test_step_blind_provider_errors(self):
        with pytest.raises(analyze.AnalyzeError, match="step control"):
            analyze.early_step_probe("x", [0, 1], StepBlindProvider(), width=64, height=64)

    def test_seed_order_invariance(self):
        provider = providers.StubProvider()
        f1 = analyze.early_step_probe("Galaxy Tote Bag", [0, 1, 2], provider, width=64, height=64)
        f2 = analyze.early_step_probe("Galaxy Tote Bag", [2, 0, 1], provider, width=64, height=64)
        assert f1.score == f2.score
        assert f1.evidence == f2.evidence


class TestSourceMatch:
    def planted_generation(self, extractor):
        base = percept.decode_rgb(block_image(85, 128, 128))
        mask = Mask.rect(128, 128, (32, 32, 96, 96), "rug")
        gen = base.copy()
        gen[mask.bits] = np.random.default_rng(5).integers(
            0, 256, (int(mask.bits.sum()), 3), dtype=np.uint8
        )
        return percept.encode_png(base), percept.encode_png(gen), mask

    def test_planted_source_matches_high(self, tmp_path, extractor):
        base, gen, mask = self.planted_generation(extractor)
        (tmp_path / "source.png").write_bytes(base)
        findings = analyze.source_match(
            [("gen1", gen)], tmp_path, extractor, masks={"gen1": mask}
        )
        assert len(findings) == 1
        assert findings[0].score >= 0.99
        assert findings[0].evidence["source"] == "source.png"

    def test_disjoint_corpus_empty(self, tmp_path, extractor):
        (tmp_path / "other.png").write_bytes(block_image(90, 128, 128))
        assert analyze.source_match([("g", block_image(91, 128, 128))], tmp_path, extractor) == []

    def test_self_corpus_matches_at_one(self, tmp_path, extractor):
        img = block_image(92)
        (tmp_path / "self.png").write_bytes(img)
        findings = analyze.source_match([("g", img)], tmp_path, extractor)
        assert findings[0].score == pytest.approx(1.0)

    def test_empty_corpus_errors(self, tmp_path, extractor):
        empty = tmp_path / "empty"
        empty.mkdir()
        with pytest.raises(analyze.AnalyzeError, match="non-empty"):
            analyze.source_match([("g", block_image(1))], empty, extractor)

    def test_unreadable_file_skipped_with_warning(self, tmp_path, extractor):
        (tmp_path / "junk.png").write_bytes(b"not an image")
        (tmp_path / "ok.png").write_bytes(block_image(93))
        warnings = []
        analyze.source_match(
            [("g", block_image(94))], tmp_path, extractor, warnings=warnings
        )
        assert len(warnings) == 1
        assert "junk.png" in warnings[0]


class TestFindingPlumbing:
    def test_unknown_kind_rejected(self):
        with pytest.raises(analyze.AnalyzeError):
            analyze.Finding(kind="nonsense", subject="s", score=0.0, evidence={})

    def test_sort_is_deterministic(self):
        f1 = analyze.Finding("probe", "b", 0.5, {})
        f2 = analyze.Finding("probe", "a", 0.5, {})
        f3 = analyze.Finding("leakage", "z", 0.9, {})
        assert analyze.sort_findings([f1, f2, f3]) == [f3, f2, f1]
