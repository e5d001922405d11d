"""Classification of detected groups into observed phenomena: perturbed
cliques, cross-category leakage, interpolation from multiple sources, the
early-step probe, and local source matching."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .detect import DEFAULT_THRESHOLD, TemplateGroup, cosine
from .percept import EmbeddingProvider, Mask, decode_rgb, masked_embed, unit_vector
from .providers import GenerationRequest, Provider


class AnalyzeError(Exception):
    pass


FINDING_KINDS = (
    "template_memorized",
    "perturbed",
    "leakage",
    "interpolation",
    "source_match",
    "probe",
)

# Pixel RMS (0-255 scale, non-editable pixels) above which an
# embedding-similar pair counts as perturbed rather than verbatim.
PERTURBATION_RMS_CUTOFF = 8.0
# Sobel gradient magnitude above which a luminance pixel counts as an edge.
PROBE_EDGE_CUTOFF = 32.0


@dataclass(frozen=True)
class Finding:
    """Typed analysis result; score semantics depend on kind (see evidence)."""

    kind: str
    subject: str
    score: float
    evidence: dict

    def __post_init__(self):
        if self.kind not in FINDING_KINDS:
            raise AnalyzeError(f"unknown finding kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "v": 1,
            "kind": self.kind,
            "subject": self.subject,
            "score": self.score,
            "evidence": self.evidence,
        }


def sort_findings(findings: Sequence[Finding]) -> list[Finding]:
    """Deterministic merge order for concurrently produced findings."""
    return sorted(findings, key=lambda f: (f.kind, f.subject, -f.score))


def _pair_rms(a: np.ndarray, b: np.ndarray, keep: np.ndarray) -> float:
    diff = a.astype(np.float64) - b.astype(np.float64)
    kept = diff[keep]
    if kept.size == 0:
        return 0.0
    return float(np.sqrt(np.mean(kept**2)))


def clique_dispersion(
    group: TemplateGroup,
    images: Mapping[str, bytes],
    masks: Mapping[str, Mask] | None = None,
    *,
    embed_threshold: float = DEFAULT_THRESHOLD,
    rms_cutoff: float = PERTURBATION_RMS_CUTOFF,
) -> Finding:
    """Classify a group as verbatim template memorization or a perturbed
    clique by pixel RMS over the non-editable region."""
    if len(group.members) < 2:
        raise AnalyzeError("group needs at least 2 members")
    arrays: dict[str, np.ndarray] = {}
    for m in group.members:
        if m not in images:
            raise AnalyzeError(f"missing image bytes for member {m}")
        arrays[m] = decode_rgb(images[m])
    shapes = {a.shape for a in arrays.values()}
    if len(shapes) > 1:
        raise AnalyzeError("group members have mismatched dimensions")

    pairs = []
    max_rms = 0.0
    members = sorted(group.members)
    for i, a in enumerate(members):
        for b in members[i + 1 :]:
            keep = np.ones(arrays[a].shape[:2], dtype=bool)
            if masks:
                for m in (a, b):
                    mask = masks.get(m)
                    if mask is not None:
                        keep &= ~mask.bits
            rms = _pair_rms(arrays[a], arrays[b], keep)
            max_rms = max(max_rms, rms)
            pairs.append({"a": a, "b": b, "rms": round(rms, 4)})

    perturbed = group.min_pairwise > embed_threshold and max_rms > rms_cutoff
    kind = "perturbed" if perturbed else "template_memorized"
    return Finding(
        kind=kind,
        subject=group.group_id,
        score=max_rms,
        evidence={
            "min_pairwise": group.min_pairwise,
            "max_pixel_rms": round(max_rms, 4),
            "rms_cutoff": rms_cutoff,
            "embed_threshold": embed_threshold,
            "pairs": pairs,
        },
    )


class GenerationEmbedding(NamedTuple):
    digest: str
    collocation: str
    vector: np.ndarray


def normalize_allowlist(pairs: Sequence[tuple[str, str]]) -> set[frozenset[str]]:
    return {frozenset((a.lower(), b.lower())) for a, b in pairs}


def leakage_scan(
    groups: Sequence[TemplateGroup],
    generations: Sequence[GenerationEmbedding],
    allowlist: Sequence[tuple[str, str]] = (),
    *,
    leak_threshold: float = DEFAULT_THRESHOLD,
) -> list[Finding]:
    """Flag generations whose embedding matches the fingerprint of a template
    group owned by a different collocation.

    Allowlisted collocation pairs (templates legitimately shared between
    categories in the training data) are skipped.
    """
    allowed = normalize_allowlist(allowlist)
    findings = []
    for gen in generations:
        for group in groups:
            owner = group.collocation.text
            if owner.lower() == gen.collocation.lower():
                continue
            if frozenset((owner.lower(), gen.collocation.lower())) in allowed:
                continue
            score = cosine(gen.vector, group.fingerprint)
            if score > leak_threshold:
                findings.append(
                    Finding(
                        kind="leakage",
                        subject=gen.digest,
                        score=score,
                        evidence={
                            "group_id": group.group_id,
                            "group_collocation": owner,
                            "generation_collocation": gen.collocation,
                            "leak_threshold": leak_threshold,
                        },
                    )
                )
    return sort_findings(findings)


@dataclass(frozen=True, eq=False)
class PatchGrid:
    rows: int
    cols: int
    features: np.ndarray  # (rows * cols, dim), unit rows


def patch_grid(image: bytes, rows: int, cols: int, cell_dim: int = 8) -> PatchGrid:
    """Per-cell luminance features; each cell is BOX-downsampled to
    cell_dim x cell_dim, mean-subtracted, and unit-normalized."""
    from PIL import Image as PILImage
    import io

    img = PILImage.open(io.BytesIO(image))
    img.load()
    lum = np.asarray(img.convert("L"), dtype=np.float64)
    h, w = lum.shape
    feats = []
    for r in range(rows):
        for c in range(cols):
            cell = lum[r * h // rows : (r + 1) * h // rows, c * w // cols : (c + 1) * w // cols]
            cimg = PILImage.fromarray(cell.astype(np.uint8), "L").resize((cell_dim, cell_dim), PILImage.BOX)
            v = np.asarray(cimg, dtype=np.float64).ravel()
            v -= v.mean()
            feats.append(unit_vector(v))
    return PatchGrid(rows=rows, cols=cols, features=np.stack(feats))


def patch_match(
    image: bytes,
    source_set: Sequence[tuple[str, bytes]],
    *,
    rows: int = 4,
    cols: int = 4,
    threshold: float = DEFAULT_THRESHOLD,
    subject_id: str = "image",
) -> list[Finding]:
    """Detect interpolation: cells of the image copied from different
    sources. Emits a finding when at least two distinct sources each win a
    cell above the patch threshold."""
    if rows < 2 or cols < 2:
        raise AnalyzeError("patch grid must be at least 2x2")
    if not source_set:
        raise AnalyzeError("source set must be non-empty")
    grid = patch_grid(image, rows, cols)
    source_grids = [(sid, patch_grid(data, rows, cols)) for sid, data in sorted(source_set, key=lambda s: s[0])]

    cells: dict[str, dict] = {}
    matched_sources: dict[str, list[str]] = {}
    for idx in range(rows * cols):
        best_sid, best_score = None, -2.0
        for sid, sgrid in source_grids:
            score = float(np.dot(grid.features[idx], sgrid.features[idx]))
            if score > best_score:
                best_sid, best_score = sid, score
        cell_key = f"{idx // cols},{idx % cols}"
        cells[cell_key] = {"source": best_sid, "score": round(best_score, 6)}
        if best_score > threshold:
            matched_sources.setdefault(best_sid, []).append(cell_key)
    if len(matched_sources) < 2:
        return []
    scores = [cells[k]["score"] for cs in matched_sources.values() for k in cs]
    return [
        Finding(
            kind="interpolation",
            subject=subject_id,
            score=float(np.mean(scores)),
            evidence={
                "rows": rows,
                "cols": cols,
                "patch_threshold": threshold,
                "sources": {sid: sorted(cs) for sid, cs in sorted(matched_sources.items())},
                "cells": cells,
            },
        )
    ]


def edge_density(image: bytes, cutoff: float = PROBE_EDGE_CUTOFF) -> float:
    """Fraction of luminance pixels whose Sobel gradient magnitude exceeds
    the cutoff."""
    lum = decode_rgb(image).astype(np.float64) @ np.array([0.299, 0.587, 0.114])
    gx = ndimage.sobel(lum, axis=1)
    gy = ndimage.sobel(lum, axis=0)
    mag = np.hypot(gx, gy)
    return float(np.mean(mag > cutoff))


def early_step_probe(
    prompt: str,
    seeds: Sequence[int],
    provider: Provider,
    *,
    width: int = 512,
    height: int = 512,
    guidance: float = 7.5,
    edge_cutoff: float = PROBE_EDGE_CUTOFF,
) -> Finding:
    """Heuristic memorization probe: images that are already sharp after one
    denoising step are suspicious. Scores the mean ratio of edge density at
    steps=1 to steps=10."""
    if not seeds:
        raise AnalyzeError("probe needs at least one seed")
    eps = 1e-6
    per_seed = []
    any_step_effect = False
    for seed in sorted(seeds):
        img1 = provider.generate(
            GenerationRequest(prompt=prompt, seed=seed, steps=1, width=width, height=height,
                              guidance=guidance, provider_id=provider.provider_id)
        )
        img10 = provider.generate(
            GenerationRequest(prompt=prompt, seed=seed, steps=10, width=width, height=height,
                              guidance=guidance, provider_id=provider.provider_id)
        )
        if img1 != img10:
            any_step_effect = True
        d1 = edge_density(img1, edge_cutoff)
        d10 = edge_density(img10, edge_cutoff)
        per_seed.append({"seed": seed, "density_step1": round(d1, 6), "density_step10": round(d10, 6),
                         "ratio": round((d1 + eps) / (d10 + eps), 6)})
    if not any_step_effect:
        raise AnalyzeError("provider lacks step control")
    score = float(np.mean([s["ratio"] for s in per_seed]))
    return Finding(
        kind="probe",
        subject=prompt,
        score=score,
        evidence={
            "heuristic": True,
            "edge_cutoff": edge_cutoff,
            "seeds": per_seed,
        },
    )


def source_match(
    generations: Sequence[tuple[str, bytes]],
    source_corpus: str | Path,
    extractor: EmbeddingProvider,
    *,
    masks: Mapping[str, Mask] | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    warnings: list[str] | None = None,
) -> list[Finding]:
    """Match generations against a local source-image corpus by
    masked-embedding cosine, best matches first.

    A generation's editable-region mask, when its dimensions fit, is applied
    to the corpus image too so both sides suppress the same region.
    """
    corpus_dir = Path(source_corpus)
    files = sorted(p for p in corpus_dir.glob("*") if p.is_file()) if corpus_dir.exists() else []
    sources: list[tuple[str, bytes]] = []
    for path in files:
        try:
            data = path.read_bytes()
            decode_rgb(data)
        except Exception as exc:
            if warnings is not None:
                warnings.append(f"skipped unreadable corpus file {path.name}: {exc}")
            continue
        sources.append((path.name, data))
    if not sources:
        raise AnalyzeError("source corpus must be non-empty")

    findings = []
    corpus_cache: dict[tuple[str, str], np.ndarray] = {}
    for digest, image in generations:
        mask = masks.get(digest) if masks else None
        gen_emb = masked_embed(image, mask, extractor, image_digest=digest)
        for name, data in sources:
            use_mask = mask
            if use_mask is not None:
                src_shape = decode_rgb(data).shape[:2]
                if (use_mask.height, use_mask.width) != src_shape:
                    use_mask = None
            key = (name, use_mask.digest() if use_mask else "none")
            if key not in corpus_cache:
                corpus_cache[key] = masked_embed(data, use_mask, extractor).vector
            score = cosine(gen_emb.vector, corpus_cache[key])
            if score > threshold:
                findings.append(
                    Finding(
                        kind="source_match",
                        subject=digest,
                        score=score,
                        evidence={"source": name, "cosine": round(score, 6), "threshold": threshold},
                    )
                )
    findings.sort(key=lambda f: (-f.score, f.subject, f.evidence["source"]))
    return findings
