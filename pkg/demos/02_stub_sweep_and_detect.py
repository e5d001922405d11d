"""Run a desk-scale sweep against the deterministic stub provider and detect
template-memorized cliques in it.

The stub is planted with one product template ("Area Rug"), so every seed of
every "... Area Rug" prompt renders the same mockup with a different design
in the editable region — the structure the detector is built to find.
"""

import tempfile

import numpy as np
from PIL import Image

from templeak import pipeline, providers
from templeak.percept import Mask, StubSegmenter, StubExtractor, encode_png
from templeak.prompt_forge import Collocation, Descriptor, SweepConfig, expand_grid
from templeak.store import Store
from templeak.synthcorpus import PlantSpec


def make_template(seed: int, size: int = 128) -> bytes:
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    img = Image.fromarray(grid, "RGB").resize((size, size), Image.NEAREST)
    return encode_png(np.asarray(img, dtype=np.uint8))


def main():
    tmp = tempfile.mkdtemp(prefix="templeak-demo-")
    store = Store(tmp)

    size = 128
    rect = (32, 32, 96, 96)
    base = make_template(7, size)
    plant = PlantSpec(
        base_image=base,
        mask=Mask.rect(size, size, rect, "rug"),
        category="Area Rug",
        patterns=[("seed template", base)],
    )
    provider = providers.StubProvider(plants=[plant])

    prompts = expand_grid(
        [Descriptor("Floral"), Descriptor("Galaxy"), Descriptor("blue")],
        [
            Collocation("Area Rug", "home decor", "wayfair", "rug"),
            Collocation("Coffee Mug", "kitchen", "zazzle"),
        ],
    )
    config = SweepConfig(
        prompts=tuple(prompts),
        seeds=tuple(range(5)),
        provider_id="stub",
        steps=20,
        width=size,
        height=size,
        run_label="demo-sweep",
    )

    run_id, n_new = pipeline.sweep_run(config, store, provider=provider)
    print(f"swept {n_new} generations into run {run_id}")

    segmenter = StubSegmenter()
    segmenter.register_plant("rug", rect, base)
    report, path = pipeline.detect_run(
        run_id, store, StubExtractor(), segmenter=segmenter, threshold=0.95
    )
    print(f"report: {path}")
    for group in report["groups"]:
        print(
            f"  {group['group_id']}: {len(group['members'])} members under "
            f"{group['collocation']!r}, min pairwise cosine {group['min_pairwise']}"
        )
    print("\nthe 'Area Rug' prompts collapse into one clique; 'Coffee Mug' stays noise")
    print(f"store kept at {tmp} for inspection")


if __name__ == "__main__":
    main()
