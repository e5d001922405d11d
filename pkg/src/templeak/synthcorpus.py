"""Template-coupled image/caption datasets and planted ground-truth
benchmarks for validating the detector.

The compositing here is the crude stage-I overlay (mask region replaced or
blended with a pattern); realistic smart-object rendering is out of scope and
known to resist verbatim extraction anyway.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from . import percept
from .percept import ClassRegistry, Mask, decode_rgb, encode_png
from .prompt_forge import DEFAULT_DESCRIPTORS, Collocation
from .store import Store, canonical_dumps, canonical_png, sha256_hex


class CorpusError(Exception):
    pass


BLEND_MODES = ("replace", "alpha", "multiply")


@dataclass
class PlantSpec:
    """One base image plus the patterns to composite into its editable region."""

    base_image: bytes
    mask: Mask
    category: str
    patterns: list[tuple[str, bytes]]  # (descriptor text, pattern image)
    blend: str = "replace"
    alpha: float = 0.5
    caption_template: str = "{descriptor} {category}"

    def __post_init__(self):
        base = decode_rgb(self.base_image)
        if (self.mask.height, self.mask.width) != base.shape[:2]:
            raise CorpusError("mask does not fit base image")
        if not self.patterns:
            raise CorpusError("plant spec needs at least one pattern")
        if self.blend not in BLEND_MODES:
            raise CorpusError(f"unknown blend mode {self.blend!r}")
        if "{descriptor}" not in self.caption_template or "{category}" not in self.caption_template:
            raise CorpusError("caption template must contain {descriptor} and {category}")

    def caption(self, descriptor: str) -> str:
        return self.caption_template.replace("{descriptor}", descriptor).replace(
            "{category}", self.category
        )


def _scale_to_box(pattern: bytes, width: int, height: int) -> np.ndarray:
    img = Image.open(io.BytesIO(pattern))
    img.load()
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img.resize((width, height), Image.NEAREST), dtype=np.uint8)


def composite(base: bytes, mask: Mask, pattern: bytes, blend: str = "replace", alpha: float = 0.5) -> bytes:
    """Fill the masked region with a pattern scaled to the mask bounding box.

    Pixels outside the mask are byte-identical to the base in every blend
    mode; a coverage-0 mask returns the base unchanged.
    """
    if blend not in BLEND_MODES:
        raise CorpusError(f"unknown blend mode {blend!r}")
    arr = decode_rgb(base)
    h, w = arr.shape[:2]
    if (mask.height, mask.width) != (h, w):
        raise CorpusError("mask does not fit base image")
    if mask.coverage == 0:
        return bytes(base)
    ys, xs = np.nonzero(mask.bits)
    top, bottom = int(ys.min()), int(ys.max()) + 1
    left, right = int(xs.min()), int(xs.max()) + 1
    scaled = _scale_to_box(pattern, right - left, bottom - top)

    out = arr.copy()
    region = mask.bits[top:bottom, left:right]
    box = out[top:bottom, left:right]
    if blend == "replace":
        box[region] = scaled[region]
    elif blend == "alpha":
        mixed = np.round(
            (1.0 - alpha) * box.astype(np.float64) + alpha * scaled.astype(np.float64)
        ).astype(np.uint8)
        box[region] = mixed[region]
    else:  # multiply
        mixed = np.round(box.astype(np.float64) * scaled.astype(np.float64) / 255.0).astype(np.uint8)
        box[region] = mixed[region]
    out[top:bottom, left:right] = box
    return encode_png(out)


@dataclass
class CorpusPair:
    image_digest: str
    caption: str
    truth_group_id: str | None
    descriptor: str = ""
    collocation: Collocation | None = None


@dataclass
class LabeledCorpus:
    """Image-caption pairs with planted ground truth."""

    pairs: list[CorpusPair] = field(default_factory=list)
    planted_leakage: list[tuple[str, str]] = field(default_factory=list)  # (digest, foreign category)
    images: dict[str, bytes] = field(default_factory=dict)

    def truth_groups(self) -> dict[str, set[str]]:
        groups: dict[str, set[str]] = {}
        for p in self.pairs:
            if p.truth_group_id is not None:
                groups.setdefault(p.truth_group_id, set()).add(p.image_digest)
        return groups

    def manifest_lines(self) -> list[str]:
        lines = []
        leak = dict(self.planted_leakage)
        for p in self.pairs:
            rec = {
                "image_digest": p.image_digest,
                "caption": p.caption,
                "truth_group_id": p.truth_group_id,
            }
            if p.image_digest in leak:
                rec["leakage"] = leak[p.image_digest]
            lines.append(canonical_dumps(rec))
        return lines


def _digest_and_keep(corpus: LabeledCorpus, image: bytes, store: Store | None) -> str:
    if store is not None:
        digest = store.put_image(image)
    else:
        digest = sha256_hex(canonical_png(image))
    corpus.images[digest] = image
    return digest


def build_corpus(specs: Sequence[PlantSpec], store: Store | None = None) -> LabeledCorpus:
    """One pair per (spec, pattern); all patterns on one base share a truth
    group."""
    corpus = LabeledCorpus()
    for spec_idx, spec in enumerate(specs):
        gid = f"t{spec_idx:03d}"
        for descriptor, pattern in spec.patterns:
            image = composite(spec.base_image, spec.mask, pattern, spec.blend, spec.alpha)
            digest = _digest_and_keep(corpus, image, store)
            corpus.pairs.append(
                CorpusPair(
                    image_digest=digest,
                    caption=spec.caption(descriptor),
                    truth_group_id=gid,
                    descriptor=descriptor,
                    collocation=Collocation(text=spec.category, category_tag="synthetic"),
                )
            )
    return corpus


def write_corpus_manifest(corpus: LabeledCorpus, path: str | Path) -> Path:
    path = Path(path)
    path.write_text("".join(line + "\n" for line in corpus.manifest_lines()), encoding="utf-8")
    return path


def export_corpus(corpus: LabeledCorpus, out_dir: str | Path) -> Path:
    """Flat directory of PNGs plus captions.txt, the hand-off point for
    external fine-tuning tools."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    captions = []
    for i, pair in enumerate(corpus.pairs):
        name = f"{i:05d}.png"
        (out / name).write_bytes(canonical_png(corpus.images[pair.image_digest]))
        captions.append(f"{name}\t{pair.caption}")
    (out / "captions.txt").write_text("\n".join(captions) + "\n", encoding="utf-8")
    return out


def _block_image(rng: np.random.Generator, width: int, height: int, cells: int = 16) -> bytes:
    """Deterministic high-variance image: random low-res grid upscaled with
    nearest neighbor."""
    grid = rng.integers(0, 256, size=(cells, cells, 3), dtype=np.uint8)
    img = Image.fromarray(grid, mode="RGB").resize((width, height), Image.NEAREST)
    return encode_png(np.asarray(img, dtype=np.uint8))


@dataclass
class BenchmarkImage:
    digest: str
    caption: str
    descriptor: str
    collocation: Collocation
    seed: int


@dataclass
class PlantedBenchmark(LabeledCorpus):
    """LabeledCorpus plus everything the pipeline needs to run on it: per-image
    prompt metadata and the stub-segmenter plants."""

    records: list[BenchmarkImage] = field(default_factory=list)
    plants: list[tuple[str, tuple[int, int, int, int], bytes]] = field(default_factory=list)
    width: int = 512
    height: int = 512

    def make_segmenter(self, registry: ClassRegistry | None = None) -> percept.StubSegmenter:
        seg = percept.StubSegmenter(registry=registry)
        for class_label, rect, base in self.plants:
            seg.register_plant(class_label, rect, base)
        return seg


def plant_benchmark(
    n_groups: int,
    members_per_group: int,
    n_noise: int,
    leakage_plants: int = 0,
    *,
    seed: int = 0,
    width: int = 512,
    height: int = 512,
    store: Store | None = None,
) -> PlantedBenchmark:
    """Ground-truth corpus: n_groups planted template groups (distinct bases,
    per-member distinct mask fills), n_noise unrelated images, and optional
    cross-category leakage plants."""
    if members_per_group < 2:
        raise CorpusError("members_per_group must be >= 2")
    if leakage_plants and n_groups < 1:
        raise CorpusError("leakage plants need at least one group")
    rng = np.random.default_rng(seed)
    bench = PlantedBenchmark(width=width, height=height)
    rect = (width // 4, height // 4, 3 * width // 4, 3 * height // 4)

    bases: list[bytes] = []
    categories: list[Collocation] = []
    for g in range(n_groups):
        class_label = percept.DEFAULT_REGISTRY.register(f"bench-item-{g:02d}")
        category = Collocation(
            text=f"Benchmark Item {g:02d}",
            category_tag="benchmark",
            source_site="synthetic",
            segmentation_class=class_label,
        )
        base = _block_image(rng, width, height)
        mask = Mask.rect(width, height, rect, class_label)
        bases.append(base)
        categories.append(category)
        bench.plants.append((class_label, rect, base))
        gid = f"truth-{g:03d}"
        for m in range(members_per_group):
            pattern = _block_image(rng, rect[2] - rect[0], rect[3] - rect[1], cells=8)
            image = composite(base, mask, pattern, "replace")
            digest = _digest_and_keep(bench, image, store)
            descriptor = DEFAULT_DESCRIPTORS[m % len(DEFAULT_DESCRIPTORS)]
            caption = f"{descriptor} {category.text}"
            bench.pairs.append(
                CorpusPair(digest, caption, gid, descriptor=descriptor, collocation=category)
            )
            bench.records.append(BenchmarkImage(digest, caption, descriptor, category, seed=m))

    for k in range(n_noise):
        image = _block_image(rng, width, height)
        digest = _digest_and_keep(bench, image, store)
        collocation = Collocation(
            text=f"Noise Item {k:02d}", category_tag="benchmark-noise", source_site="synthetic"
        )
        descriptor = DEFAULT_DESCRIPTORS[k % len(DEFAULT_DESCRIPTORS)]
        caption = f"{descriptor} {collocation.text}"
        bench.pairs.append(CorpusPair(digest, caption, None, descriptor=descriptor, collocation=collocation))
        bench.records.append(BenchmarkImage(digest, caption, descriptor, collocation, seed=k))

    for l in range(leakage_plants):
        src = l % n_groups
        if n_groups >= 2:
            foreign_category = categories[(src + 1) % n_groups]
            foreign_class = foreign_category.segmentation_class
        else:
            foreign_class = percept.DEFAULT_REGISTRY.register(f"bench-foreign-{l:02d}")
            foreign_category = Collocation(
                text=f"Foreign Item {l:02d}",
                category_tag="benchmark",
                source_site="synthetic",
                segmentation_class=foreign_class,
            )
        # A competent segmenter still finds the foreign product in the same
        # editable region, so the leak image's plant registers under the
        # foreign class with the *source* base.
        bench.plants.append((foreign_class, rect, bases[src]))
        mask = Mask.rect(width, height, rect, foreign_class)
        pattern = _block_image(rng, rect[2] - rect[0], rect[3] - rect[1], cells=8)
        image = composite(bases[src], mask, pattern, "replace")
        digest = _digest_and_keep(bench, image, store)
        descriptor = DEFAULT_DESCRIPTORS[l % len(DEFAULT_DESCRIPTORS)]
        caption = f"{descriptor} {foreign_category.text}"
        bench.pairs.append(
            CorpusPair(digest, caption, None, descriptor=descriptor, collocation=foreign_category)
        )
        bench.records.append(BenchmarkImage(digest, caption, descriptor, foreign_category, seed=l))
        bench.planted_leakage.append((digest, foreign_category.text))

    if len(bench.images) != len(bench.pairs):
        raise CorpusError("benchmark image collision; change the corpus seed")
    for gid, members in bench.truth_groups().items():
        if len(members) < 2:
            raise CorpusError(f"truth group {gid} has fewer than 2 members")
    return bench
