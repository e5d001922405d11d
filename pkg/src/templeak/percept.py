"""Editable-region masks and mask-suppressed embeddings.

Everything downstream (graph building, clique search, leakage scans) runs on
the vectors produced here, so the two invariants that matter most are:
mask_fill never touches a pixel outside the mask, and masked_embed is exactly
invariant to pixel changes strictly inside the mask.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from typing import Iterable, Protocol

import numpy as np
from PIL import Image
from scipy import ndimage


class PerceptError(Exception):
    pass


# Editable-region classes the bundled collocation lists refer to. Deployments
# add their own via ClassRegistry.register.
DEFAULT_CLASSES = ("rug", "curtain", "painting", "Right-shoe", "t-shirt", "tank-top")


class ClassRegistry:
    """Known segmentation class labels for editable regions."""

    def __init__(self, classes: Iterable[str] = DEFAULT_CLASSES):
        self._classes = set(classes)

    def register(self, label: str) -> str:
        label = label.strip()
        if not label:
            raise PerceptError("segmentation class label must be non-empty")
        self._classes.add(label)
        return label

    def __contains__(self, label: str) -> bool:
        return label in self._classes

    def labels(self) -> list[str]:
        return sorted(self._classes)


DEFAULT_REGISTRY = ClassRegistry()


def decode_rgb(image: bytes) -> np.ndarray:
    """Decode image bytes to an (h, w, 3) uint8 array."""
    try:
        img = Image.open(io.BytesIO(image))
        img.load()
    except Exception as exc:
        raise PerceptError(f"undecodable image: {exc}") from exc
    if img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img, dtype=np.uint8)


def encode_png(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG", optimize=False, compress_level=6)
    return buf.getvalue()


def rle_encode(bits: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating runs of 0s then 1s (first count may
    be 0 when the mask starts with a 1)."""
    flat = np.asarray(bits, dtype=bool).ravel()
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_decode(runs: list[int], width: int, height: int) -> np.ndarray:
    total = width * height
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if run < 0 or pos + run > total:
            raise PerceptError("invalid RLE runs for mask dimensions")
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    if pos != total:
        raise PerceptError("RLE runs do not cover the mask")
    return flat.reshape(height, width)


@dataclass(frozen=True, eq=False)
class Mask:
    """Per-pixel editable-region mask; True marks the editable region."""

    width: int
    height: int
    bits: np.ndarray
    class_label: str
    coverage: float

    @classmethod
    def from_bits(cls, bits: np.ndarray, class_label: str) -> "Mask":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise PerceptError("mask bits must be 2-D")
        h, w = bits.shape
        coverage = float(bits.sum()) / float(bits.size) if bits.size else 0.0
        return cls(width=w, height=h, bits=bits, class_label=class_label, coverage=coverage)

    @classmethod
    def empty(cls, width: int, height: int, class_label: str) -> "Mask":
        return cls.from_bits(np.zeros((height, width), dtype=bool), class_label)

    @classmethod
    def rect(cls, width: int, height: int, box: tuple[int, int, int, int], class_label: str) -> "Mask":
        left, top, right, bottom = box
        bits = np.zeros((height, width), dtype=bool)
        bits[top:bottom, left:right] = True
        return cls.from_bits(bits, class_label)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.width}x{self.height}:{self.class_label}:".encode("utf-8"))
        h.update(np.packbits(self.bits).tobytes())
        return h.hexdigest()

    def to_rle(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "class_label": self.class_label,
            "counts": rle_encode(self.bits),
        }

    @classmethod
    def from_rle(cls, obj: dict) -> "Mask":
        bits = rle_decode(obj["counts"], obj["width"], obj["height"])
        return cls.from_bits(bits, obj["class_label"])

    def dilated(self, radius: int) -> "Mask":
        if radius <= 0:
            return self
        grown = ndimage.binary_dilation(self.bits, iterations=radius)
        return Mask.from_bits(grown, self.class_label)


@dataclass(frozen=True, eq=False)
class MaskedEmbedding:
    """Unit-norm feature vector of an image with its editable region suppressed."""

    vector: np.ndarray
    dim: int
    provider_id: str
    image_digest: str
    mask_digest: str  # "none" when embedded without a mask


FILL_POLICIES = ("mean", "midgray", "black")
_MIDGRAY = np.array([128, 128, 128], dtype=np.uint8)


def mask_fill(image: bytes, mask: Mask, policy: str = "mean") -> bytes:
    """Replace editable-region pixels per policy; everything else is untouched.

    The mean policy uses the mean color of the unmasked pixels so global image
    statistics stay stable for embedding providers; a full-coverage mask has no
    unmasked mean and falls back to mid-gray.
    """
    if policy not in FILL_POLICIES:
        raise PerceptError(f"unknown fill policy {policy!r}")
    arr = decode_rgb(image)
    h, w = arr.shape[:2]
    if (mask.height, mask.width) != (h, w):
        raise PerceptError(
            f"mask dimensions {mask.width}x{mask.height} do not match image {w}x{h}"
        )
    out = arr.copy()
    bits = mask.bits
    if policy == "black":
        fill = np.zeros(3, dtype=np.uint8)
    elif policy == "midgray":
        fill = _MIDGRAY
    else:
        outside = arr[~bits]
        if outside.size == 0:
            fill = _MIDGRAY
        else:
            fill = np.round(outside.astype(np.float64).mean(axis=0)).astype(np.uint8)
    out[bits] = fill
    return encode_png(out)


def unit_vector(v: np.ndarray) -> np.ndarray:
    """L2-normalize; a (near-)zero vector maps to the fixed basis vector e1 so
    the unit-norm invariant holds without a divide-by-zero."""
    v = np.asarray(v, dtype=np.float64).ravel()
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        out = np.zeros_like(v)
        out[0] = 1.0
        return out
    return v / norm


class EmbeddingProvider(Protocol):
    provider_id: str

    def embed(self, image: bytes) -> np.ndarray: ...


class SegmentationProvider(Protocol):
    def segment(self, image: bytes, class_label: str) -> Mask: ...


class StubExtractor:
    """Deterministic 256-dim embedding: 16x16 mean-luminance grid,
    mean-subtracted, L2-normalized. Test double for a remote CLIP-style
    embedding provider."""

    provider_id = "stub-embed-v1"
    grid = 16

    def embed(self, image: bytes) -> np.ndarray:
        img = Image.open(io.BytesIO(image))
        img.load()
        if img.mode != "RGB":
            img = img.convert("RGB")
        lum = img.convert("L").resize((self.grid, self.grid), Image.BOX)
        cells = np.asarray(lum, dtype=np.float64).ravel()
        cells -= cells.mean()
        return unit_vector(cells)


class StubSegmenter:
    """Test double for a segmentation provider.

    Plants are registered as (class_label, rect, base image); an image
    "contains" the class when its pixels outside the rect equal the base's.
    That is what a perfect segmentation model would do on planted fixtures.
    """

    def __init__(self, registry: ClassRegistry | None = None):
        self.registry = registry if registry is not None else DEFAULT_REGISTRY
        self._plants: dict[str, list[tuple[tuple[int, int, int, int], np.ndarray]]] = {}

    def register_plant(
        self, class_label: str, rect: tuple[int, int, int, int], base_image: bytes
    ) -> None:
        self.registry.register(class_label)
        base = decode_rgb(base_image)
        self._plants.setdefault(class_label, []).append((rect, base))

    def segment(self, image: bytes, class_label: str) -> Mask:
        if class_label not in self.registry:
            raise PerceptError(f"unregistered segmentation class {class_label!r}")
        arr = decode_rgb(image)
        h, w = arr.shape[:2]
        for rect, base in self._plants.get(class_label, []):
            if base.shape != arr.shape:
                continue
            left, top, right, bottom = rect
            outside = np.ones((h, w), dtype=bool)
            outside[top:bottom, left:right] = False
            if np.array_equal(arr[outside], base[outside]):
                return Mask.rect(w, h, rect, class_label)
        return Mask.empty(w, h, class_label)


def masked_embed(
    image: bytes,
    mask: Mask | None,
    extractor: EmbeddingProvider,
    *,
    image_digest: str = "",
    fill_policy: str = "mean",
) -> MaskedEmbedding:
    """Embed an image with its editable region suppressed.

    With a mask this is embed(mask_fill(image, mask)); without one the raw
    image is embedded. Vectors are re-normalized so downstream cosine is a
    plain dot product.
    """
    if mask is not None:
        filled = mask_fill(image, mask, policy=fill_policy)
        mask_digest = mask.digest()
    else:
        filled = image
        mask_digest = "none"
    vec = unit_vector(extractor.embed(filled))
    return MaskedEmbedding(
        vector=vec,
        dim=vec.shape[0],
        provider_id=extractor.provider_id,
        image_digest=image_digest,
        mask_digest=mask_digest,
    )


class HTTPSegmenter:
    """Remote segmentation provider speaking POST /v1/segment."""

    def __init__(self, endpoint: str, client=None, *, token: str | None = None, timeout: float = 30.0):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._token = token

    def _headers(self) -> dict:
        return {"Authorization": f"Bearer {self._token}"} if self._token else {}

    def segment(self, image: bytes, class_label: str) -> Mask:
        import base64

        resp = self._client.post(
            self.endpoint + "/v1/segment",
            json={"image_b64": base64.b64encode(image).decode("ascii"), "class_label": class_label},
            headers=self._headers(),
        )
        if resp.status_code != 200:
            raise PerceptError(f"segmentation provider error {resp.status_code}: {resp.text[:200]}")
        body = resp.json()
        bits = rle_decode(body["mask_rle"], body["width"], body["height"])
        return Mask.from_bits(bits, class_label)


class HTTPEmbedder:
    """Remote embedding provider speaking POST /v1/embed."""

    def __init__(
        self,
        endpoint: str,
        client=None,
        *,
        provider_id: str | None = None,
        token: str | None = None,
        timeout: float = 30.0,
    ):
        import httpx

        self.endpoint = endpoint.rstrip("/")
        self.provider_id = provider_id or f"http-embed:{self.endpoint}"
        self._client = client or httpx.Client(timeout=timeout)
        self._token = token

    def embed(self, image: bytes) -> np.ndarray:
        import base64

        headers = {"Authorization": f"Bearer {self._token}"} if self._token else {}
        resp = self._client.post(
            self.endpoint + "/v1/embed",
            json={"image_b64": base64.b64encode(image).decode("ascii")},
            headers=headers,
        )
        if resp.status_code != 200:
            raise PerceptError(f"embedding provider error {resp.status_code}: {resp.text[:200]}")
        return np.asarray(resp.json()["vector"], dtype=np.float64)
