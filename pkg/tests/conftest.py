import numpy as np
import pytest
from PIL import Image

from templeak import percept
from templeak.store import Store


@pytest.fixture
def store(tmp_path):
    return Store(tmp_path / "store")


@pytest.fixture
def extractor():
    return percept.StubExtractor()


def block_image(seed: int, width: int = 64, height: int = 64, cells: int = 8) -> bytes:
    """Deterministic blocky test image."""
    rng = np.random.default_rng(seed)
    grid = rng.integers(0, 256, size=(cells, cells, 3), dtype=np.uint8)
    img = Image.fromarray(grid, "RGB").resize((width, height), Image.NEAREST)
    return percept.encode_png(np.asarray(img, dtype=np.uint8))


def flat_image(color=(90, 120, 200), width: int = 64, height: int = 64) -> bytes:
    arr = np.zeros((height, width, 3), dtype=np.uint8)
    arr[:] = color
    return percept.encode_png(arr)
