"""Build a template-coupled fine-tuning corpus: 3 bases x 18 patterns with
token-prefixed captions, exported as flat PNGs + captions.txt for an external
LoRA trainer."""

import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from templeak import synthcorpus
from templeak.percept import Mask, encode_png


def image(seed, size, cells=12):
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 256, size=(cells, cells, 3), dtype=np.uint8)
    return encode_png(
        np.asarray(Image.fromarray(grid, "RGB").resize((size, size), Image.NEAREST), dtype=np.uint8)
    )


PATTERN_NAMES = [
    "Floral", "Galaxy", "Abstract Art", "Geometric", "Marble", "Camouflage",
    "Polka Dot", "Stripes", "Paisley", "Tie Dye", "Leopard", "Plaid",
    "Herringbone", "Chevron", "Houndstooth", "Damask", "Mosaic", "Watercolor",
]


def main():
    size = 512
    patterns = [(name, image(400 + i, 96)) for i, name in enumerate(PATTERN_NAMES)]
    specs = [
        synthcorpus.PlantSpec(
            base_image=image(500 + b, size),
            mask=Mask.rect(size, size, (128, 160, 384, 352), "painting"),
            category="Coffee Mug",
            patterns=patterns,
            caption_template="skg {descriptor} {category}",
        )
        for b in range(3)
    ]
    corpus = synthcorpus.build_corpus(specs)
    print(f"{len(corpus.pairs)} image-caption pairs across {len(corpus.truth_groups())} truth groups")
    print(f"sample caption: {corpus.pairs[0].caption!r}")

    out = Path(tempfile.mkdtemp(prefix="templeak-corpus-"))
    synthcorpus.write_corpus_manifest(corpus, out / "corpus.jsonl")
    synthcorpus.export_corpus(corpus, out / "export")
    print(f"manifest + export written under {out}")


if __name__ == "__main__":
    main()
