"""Uniform client layer over black-box text-to-image endpoints, plus a
deterministic stub provider for desk-scale testing.

Remote providers speak the HTTP+JSON wire contract (POST /v1/generate) so
local inference servers, hosted APIs, and Discord-style gateways can all be
adapted behind the same interface.
"""

from __future__ import annotations

import base64
import hashlib
import io
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from PIL import Image

from .percept import encode_png
from .prompt_forge import SweepConfig
from .store import Store
from .synthcorpus import PlantSpec, composite


class ProviderError(Exception):
    pass


class RetryableProviderError(ProviderError):
    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class ContentPolicyError(ProviderError):
    """Terminal refusal; carries the provider's message."""


class BatchAbortedError(ProviderError):
    pass


PROVIDER_TOKEN_ENV = "TEMPLEAK_PROVIDER_TOKEN"


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    seed: int
    steps: int
    width: int
    height: int
    guidance: float
    provider_id: str

    def __post_init__(self):
        if self.steps < 1:
            raise ProviderError("steps must be >= 1")
        if self.width <= 0 or self.height <= 0:
            raise ProviderError("width and height must be positive")


@dataclass(frozen=True)
class GenerationRecord:
    request: GenerationRequest
    image_digest: str
    created_at: float
    provider_meta: dict


class Provider(Protocol):
    provider_id: str

    def generate(self, request: GenerationRequest) -> bytes: ...

    def generate_with_meta(self, request: GenerationRequest) -> tuple[bytes, dict]: ...


_REGISTRY: dict[str, "Provider"] = {}


def register_provider(provider: Provider) -> Provider:
    _REGISTRY[provider.provider_id] = provider
    return provider


def get_provider(provider_id: str) -> Provider:
    try:
        return _REGISTRY[provider_id]
    except KeyError:
        raise ProviderError(f"provider {provider_id!r} is not registered") from None


def clear_providers() -> None:
    _REGISTRY.clear()


def _hash_rng(*parts) -> np.random.Generator:
    h = hashlib.sha256("\x00".join(str(p) for p in parts).encode("utf-8")).digest()
    return np.random.default_rng(int.from_bytes(h[:8], "big"))


class StubProvider:
    """Deterministic offline provider.

    Without a plant, images are pseudo-random but fully determined by
    (prompt, seed). When a plant's category matches the prompt, the output is
    the planted template with the editable region filled by a seed-dependent
    pattern — identical outside the mask across seeds, which is exactly the
    structure the detector is meant to find.

    steps=1 returns a blurred rendition of the final image, unless the prompt
    is flagged sharp_at_step1, in which case step 1 is the final image up to a
    single pixel tweak (so step control stays observable).
    """

    def __init__(
        self,
        provider_id: str = "stub",
        plants: list[PlantSpec] | None = None,
        sharp_at_step1: set[str] | None = None,
    ):
        self.provider_id = provider_id
        self.plants = list(plants or [])
        self.sharp_at_step1 = set(sharp_at_step1 or ())
        self.calls = 0
        self._lock = threading.Lock()

    def _find_plant(self, prompt: str) -> PlantSpec | None:
        lowered = prompt.lower()
        hits = [p for p in self.plants if p.category.lower() in lowered]
        if not hits:
            return None
        return max(hits, key=lambda p: len(p.category))

    def _final_image(self, request: GenerationRequest) -> np.ndarray:
        plant = self._find_plant(request.prompt)
        if plant is not None:
            if (plant.mask.width, plant.mask.height) != (request.width, request.height):
                raise ProviderError(
                    f"plant for {plant.category!r} is {plant.mask.width}x{plant.mask.height}, "
                    f"request wants {request.width}x{request.height}"
                )
            ys, xs = np.nonzero(plant.mask.bits)
            bw = int(xs.max()) - int(xs.min()) + 1
            bh = int(ys.max()) - int(ys.min()) + 1
            rng = _hash_rng(self.provider_id, request.prompt, request.seed, "fill")
            pattern = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            pattern_png = encode_png(
                np.asarray(
                    Image.fromarray(pattern, "RGB").resize((bw, bh), Image.NEAREST), dtype=np.uint8
                )
            )
            composed = composite(plant.base_image, plant.mask, pattern_png, plant.blend, plant.alpha)
            img = Image.open(io.BytesIO(composed))
            img.load()
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
        rng = _hash_rng(self.provider_id, request.prompt, request.seed)
        grid = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        img = Image.fromarray(grid, "RGB").resize((request.width, request.height), Image.NEAREST)
        return np.asarray(img, dtype=np.uint8)

    def generate_with_meta(self, request: GenerationRequest) -> tuple[bytes, dict]:
        with self._lock:
            self.calls += 1
        final = self._final_image(request)
        if request.steps == 1:
            if request.prompt in self.sharp_at_step1:
                tweaked = final.copy()
                tweaked[0, 0, 0] ^= 1
                final = tweaked
            else:
                # one denoising step of a non-memorized prompt: no consistent
                # edges yet, just a flat seed-dependent field
                rng = _hash_rng(self.provider_id, request.prompt, request.seed, "step1")
                color = rng.integers(0, 256, size=3, dtype=np.uint8)
                final = np.broadcast_to(color, (request.height, request.width, 3)).copy()
        return encode_png(final), {"model_id": f"{self.provider_id}-v1"}

    def generate(self, request: GenerationRequest) -> bytes:
        return self.generate_with_meta(request)[0]


class HTTPProvider:
    """Client for the POST /v1/generate wire contract.

    Retries transient failures (timeouts, 408/429/5xx) with jittered
    exponential backoff; content-policy refusals are terminal.
    """

    def __init__(
        self,
        provider_id: str,
        endpoint: str,
        client=None,
        *,
        token: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 3,
        backoff_base: float = 1.0,
        jitter: float = 0.1,
        sleep=time.sleep,
    ):
        import httpx

        self.provider_id = provider_id
        self.endpoint = endpoint.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)
        self._token = token
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.jitter = jitter
        self._sleep = sleep
        self._httpx = httpx

    def _headers(self) -> dict:
        import os

        token = self._token or os.environ.get(PROVIDER_TOKEN_ENV)
        return {"Authorization": f"Bearer {token}"} if token else {}

    def generate_with_meta(self, request: GenerationRequest) -> tuple[bytes, dict]:
        body = {
            "prompt": request.prompt,
            "seed": request.seed,
            "steps": request.steps,
            "width": request.width,
            "height": request.height,
            "guidance": request.guidance,
        }
        last_error = "no attempts made"
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(
                    self.endpoint + "/v1/generate", json=body, headers=self._headers()
                )
            except self._httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
            else:
                if resp.status_code == 200:
                    payload = resp.json()
                    image = base64.b64decode(payload["image_b64"])
                    return image, payload.get("meta", {})
                if resp.status_code in (408, 429) or resp.status_code >= 500:
                    last_error = f"HTTP {resp.status_code}"
                else:
                    message = resp.text[:500]
                    try:
                        err = resp.json()
                        message = err.get("message", message)
                        if err.get("error") == "content_policy":
                            raise ContentPolicyError(message)
                    except ContentPolicyError:
                        raise
                    except Exception:
                        pass
                    raise ProviderError(f"HTTP {resp.status_code}: {message}")
            if attempt < self.max_attempts:
                delay = self.backoff_base * (2 ** (attempt - 1))
                delay += random.uniform(0, self.jitter * delay)
                self._sleep(delay)
        raise RetryableProviderError(
            f"{self.endpoint} failed after {self.max_attempts} attempts ({last_error})",
            attempts=self.max_attempts,
        )

    def generate(self, request: GenerationRequest) -> bytes:
        return self.generate_with_meta(request)[0]


def stub_generate(prompt: str, seed: int, planted: PlantSpec | None = None, *, width: int = 512, height: int = 512) -> bytes:
    """One-shot stub generation without a provider object."""
    provider = StubProvider(plants=[planted] if planted else None)
    return provider.generate(
        GenerationRequest(
            prompt=prompt, seed=seed, steps=50, width=width, height=height, guidance=7.5, provider_id="stub"
        )
    )


def _cache_key(provider_id: str, request: GenerationRequest) -> dict:
    # guidance is included beyond the spec'd tuple: it changes the image.
    return {
        "provider_id": provider_id,
        "prompt": request.prompt,
        "seed": request.seed,
        "steps": request.steps,
        "width": request.width,
        "height": request.height,
        "guidance": request.guidance,
    }


def generate_batch(
    config: SweepConfig,
    store: Store,
    run_id: str,
    *,
    provider: Provider | None = None,
    concurrency_limit: int = 4,
) -> list[GenerationRecord]:
    """Execute the sweep's (prompt, seed) grid.

    Requests run concurrently up to concurrency_limit; completed pairs (from a
    previous run of this manifest or from the cross-run generation cache) are
    never re-requested. Individual failures become failed manifest entries;
    the batch aborts only when more than half of the requests fail.
    """
    if concurrency_limit < 1:
        raise ProviderError("concurrency_limit must be >= 1")
    provider = provider or get_provider(config.provider_id)
    state = store.replay(run_id)
    done = state.generation_keys()
    total = len(config.prompts) * len(config.seeds)

    pending: list[tuple[int, int]] = [
        (pi, si)
        for pi in range(len(config.prompts))
        for si in range(len(config.seeds))
        if (pi, si) not in done
    ]

    lock = threading.Lock()
    failures = len(state.failures)
    first_error: list[str] = [f["error"] for f in state.failures[:1]]

    def fetch(pair: tuple[int, int]) -> None:
        nonlocal failures
        pi, si = pair
        spec = config.prompts[pi]
        request = GenerationRequest(
            prompt=spec.rendered,
            seed=config.seeds[si],
            steps=config.steps,
            width=config.width,
            height=config.height,
            guidance=config.guidance,
            provider_id=config.provider_id,
        )
        key = _cache_key(config.provider_id, request)
        event = {
            "kind": "generation",
            "prompt_index": pi,
            "seed_index": si,
            "prompt": spec.rendered,
            "descriptor": spec.descriptor.text,
            "collocation": spec.collocation.to_dict(),
            "seed": request.seed,
            "steps": request.steps,
            "width": request.width,
            "height": request.height,
            "guidance": request.guidance,
            "provider_id": config.provider_id,
        }
        cached = store.gen_cache_get(key)
        if cached is not None and store.has_image(cached["image_digest"]):
            event.update(image_digest=cached["image_digest"], provider_meta=cached["provider_meta"], cached=True)
            store.append_event(run_id, event)
            return
        t0 = time.time()
        try:
            image, meta = provider.generate_with_meta(request)
        except ProviderError as exc:
            message = f"{type(exc).__name__}: {exc}"
            with lock:
                failures += 1
                if not first_error:
                    first_error.append(message)
            store.append_event(run_id, {**event, "status": "failed", "error": message})
            return
        meta = dict(meta)
        meta.setdefault("latency_s", round(time.time() - t0, 4))
        digest = store.put_image(image)
        store.gen_cache_put(key, {"image_digest": digest, "provider_meta": meta})
        event.update(image_digest=digest, provider_meta=meta, cached=False)
        store.append_event(run_id, event)

    if pending:
        with ThreadPoolExecutor(max_workers=concurrency_limit) as pool:
            list(pool.map(fetch, pending))

    if failures > 0.5 * total:
        store.append_event(run_id, {"kind": "status", "status": "failed"})
        detail = f" (first error: {first_error[0]})" if first_error else ""
        raise BatchAbortedError(f"{failures}/{total} requests failed; batch aborted{detail}")

    state = store.replay(run_id)
    records = []
    for g in state.ordered_generations():
        records.append(
            GenerationRecord(
                request=GenerationRequest(
                    prompt=g["prompt"],
                    seed=g["seed"],
                    steps=g["steps"],
                    width=g["width"],
                    height=g["height"],
                    guidance=g["guidance"],
                    provider_id=g["provider_id"],
                ),
                image_digest=g["image_digest"],
                created_at=g["t"],
                provider_meta=g.get("provider_meta", {}),
            )
        )
    if state.status != "complete" and len(records) + failures >= total and failures <= 0.5 * total:
        store.append_event(run_id, {"kind": "status", "status": "complete"})
    return records
