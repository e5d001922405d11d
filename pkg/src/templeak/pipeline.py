"""Orchestration: wiring sweeps, detection, and analysis through the store.

Every stage is idempotent with respect to the store: re-running an identical
stage is a no-op served from manifests and caches, which is what makes runs
replayable and reports byte-reproducible.
"""

from __future__ import annotations

import numpy as np
from pathlib import Path
from typing import Sequence

from . import analyze, detect, percept, providers
from .prompt_forge import Collocation, SweepConfig
from .store import RunState, Store, digest_obj
from .synthcorpus import LabeledCorpus


class PipelineError(Exception):
    pass


def sweep_run(
    config: SweepConfig,
    store: Store,
    *,
    provider: providers.Provider | None = None,
    concurrency_limit: int = 4,
) -> tuple[str, int]:
    """Execute (or resume) the sweep for this config. Returns (run_id, number
    of generations newly requested this call)."""
    run_id = config.run_id()
    if not store.run_exists(run_id):
        store.create_run(run_id, config.to_dict())
    state = store.replay(run_id)
    before = len(state.generations)
    providers.generate_batch(
        config, store, run_id, provider=provider, concurrency_limit=concurrency_limit
    )
    after = len(store.replay(run_id).generations)
    return run_id, after - before


def ingest_corpus_run(corpus: LabeledCorpus, store: Store, *, run_label: str = "planted") -> str:
    """Materialize a labeled corpus as a completed run so the detection and
    analysis stages can treat it like any sweep.

    Benchmark segmenter plants are persisted in the run config so a later
    `detect --stub-segmenter` process can rebuild the segmenter."""
    pairs = corpus.pairs
    if not pairs:
        raise PipelineError("corpus has no pairs")
    plants = []
    for class_label, rect, base in getattr(corpus, "plants", []):
        plants.append(
            {
                "class_label": class_label,
                "rect": list(rect),
                "base_digest": store.put_image(base),
            }
        )
    config = {
        "v": 1,
        "run_label": run_label,
        "provider_id": "planted",
        "kind": "corpus",
        "n_pairs": len(pairs),
        "pairs_digest": digest_obj([p.image_digest for p in pairs]),
        "plants": plants,
    }
    run_id = "r" + digest_obj(config)[:24]
    if store.run_exists(run_id):
        return run_id
    store.create_run(run_id, config)
    for idx, pair in enumerate(pairs):
        digest = store.put_image(corpus.images[pair.image_digest])
        collocation = pair.collocation or Collocation(text=pair.caption)
        store.append_event(
            run_id,
            {
                "kind": "generation",
                "prompt_index": idx,
                "seed_index": 0,
                "prompt": pair.caption,
                "descriptor": pair.descriptor,
                "collocation": collocation.to_dict(),
                "seed": idx,
                "steps": 1,
                "width": 0,
                "height": 0,
                "guidance": 0.0,
                "provider_id": "planted",
                "image_digest": digest,
                "provider_meta": {"truth_group_id": pair.truth_group_id},
                "cached": False,
            },
        )
    store.append_event(run_id, {"kind": "status", "status": "complete"})
    return run_id


def load_stub_segmenter(run_id: str, store: Store) -> percept.StubSegmenter:
    """Rebuild the stub segmenter from plants recorded in the run config
    (ingested benchmarks); an empty segmenter otherwise."""
    segmenter = percept.StubSegmenter()
    state = store.replay(run_id)
    for plant in (state.config or {}).get("plants", []):
        segmenter.register_plant(
            plant["class_label"], tuple(plant["rect"]), store.get_image(plant["base_digest"])
        )
    return segmenter


def _embedding_for(
    store: Store,
    digest: str,
    mask: percept.Mask | None,
    extractor: percept.EmbeddingProvider,
    fill_policy: str,
) -> np.ndarray:
    mask_digest = mask.digest() if mask is not None else "none"
    cached = store.embed_cache_get(extractor.provider_id, digest, mask_digest)
    if cached is not None:
        return cached
    emb = percept.masked_embed(
        store.get_image(digest), mask, extractor, image_digest=digest, fill_policy=fill_policy
    )
    store.embed_cache_put(extractor.provider_id, digest, mask_digest, emb.vector)
    return emb.vector


def _compute_masks(
    state: RunState,
    store: Store,
    segmenter: percept.SegmentationProvider | None,
    mask_classes: Sequence[str] | None,
    dilation: int,
) -> dict[str, percept.Mask]:
    """Segment each unique digest with its generation's editable-region class.
    Digests whose collocations carry no class (or whose class is filtered out)
    stay unmasked."""
    masks: dict[str, percept.Mask] = {}
    if segmenter is None:
        return masks
    wanted = set(mask_classes) if mask_classes else None
    for gen in state.ordered_generations():
        digest = gen["image_digest"]
        if digest in masks:
            continue
        seg_class = (gen.get("collocation") or {}).get("segmentation_class")
        if not seg_class or (wanted is not None and seg_class not in wanted):
            continue
        mask = segmenter.segment(store.get_image(digest), seg_class)
        if mask.coverage > 0:
            masks[digest] = mask.dilated(dilation)
    return masks


def detect_run(
    run_id: str,
    store: Store,
    extractor: percept.EmbeddingProvider,
    *,
    segmenter: percept.SegmentationProvider | None = None,
    threshold: float = detect.DEFAULT_THRESHOLD,
    mask_classes: Sequence[str] | None = None,
    dilation: int = 0,
    mode: str = "clique",
    fill_policy: str = "mean",
    partition_by_collocation: bool = True,
    node_budget: int = detect.NODE_BUDGET,
) -> tuple[dict, Path]:
    """Segmentation -> masking -> embedding -> graph -> cliques -> groups.

    Writes report.json and records the detection (groups, masks, parameters)
    in the run manifest. Identical parameters on an unchanged run are a
    no-op returning the recorded report.
    """
    if mode not in ("clique", "components"):
        raise PipelineError(f"unknown detection mode {mode!r}")
    state = store.replay(run_id)
    params = {
        "threshold": threshold,
        "mask_classes": sorted(mask_classes) if mask_classes else None,
        "dilation": dilation,
        "mode": mode,
        "fill_policy": fill_policy,
        "partition_by_collocation": partition_by_collocation,
        "extractor": extractor.provider_id,
        "n_generations": len(state.generations),
    }
    params_digest = digest_obj(params)
    if state.detection is not None and state.detection.get("params_digest") == params_digest:
        report = state.detection["report"]
        path = store.report_path(run_id)
        if not path.exists():
            store.write_report(run_id, report)
        return report, path
    if not state.generations:
        raise PipelineError(f"run {run_id} has no generations")

    gens = state.ordered_generations()
    masks = _compute_masks(state, store, segmenter, mask_classes, dilation)

    digest_order: list[str] = []
    collocations: dict[str, list[Collocation]] = {}
    for gen in gens:
        digest = gen["image_digest"]
        if digest not in collocations:
            digest_order.append(digest)
            collocations[digest] = []
        collocations[digest].append(Collocation.from_dict(gen["collocation"]))

    vectors: dict[str, np.ndarray] = {}
    embeddings: dict[str, percept.MaskedEmbedding] = {}
    for digest in digest_order:
        vec = _embedding_for(store, digest, masks.get(digest), extractor, fill_policy)
        vectors[digest] = vec
        embeddings[digest] = percept.MaskedEmbedding(
            vector=vec,
            dim=vec.shape[0],
            provider_id=extractor.provider_id,
            image_digest=digest,
            mask_digest=masks[digest].digest() if digest in masks else "none",
        )

    if partition_by_collocation:
        partitions: dict[str, list[str]] = {}
        for digest in digest_order:
            key = collocations[digest][0].text.lower()
            partitions.setdefault(key, []).append(digest)
        partition_lists = [partitions[k] for k in sorted(partitions)]
    else:
        partition_lists = [digest_order]

    cliques: list[detect.Clique] = []
    for digests in partition_lists:
        graph = detect.build_graph([embeddings[d] for d in digests], threshold)
        if mode == "clique":
            cliques.extend(detect.maximal_cliques(graph, node_budget=node_budget))
        else:
            cliques.extend(detect.connected_components(graph))

    groups = detect.form_groups(cliques, collocations, vectors, id_prefix=f"{run_id}-g")

    report_groups = []
    for g in groups:
        report_groups.append(
            {
                "group_id": g.group_id,
                "collocation": g.collocation.text,
                "members": list(g.members),
                "min_pairwise": round(g.min_pairwise, 6),
                "fingerprint_digest": digest_obj([round(float(x), 12) for x in g.fingerprint]),
                "status": g.status,
            }
        )
    report = {
        "v": 1,
        "run_id": run_id,
        "threshold": threshold,
        "mode": mode,
        "groups": report_groups,
    }
    store.append_event(
        run_id,
        {
            "kind": "detection",
            "params_digest": params_digest,
            "params": params,
            "report": report,
            "masks": {d: m.to_rle() for d, m in masks.items()},
            "fingerprints": {g.group_id: [float(x) for x in g.fingerprint] for g in groups},
        },
    )
    path = store.write_report(run_id, report)
    return report, path


def _detection_groups(state: RunState) -> list[detect.TemplateGroup]:
    if state.detection is None:
        raise PipelineError(f"run {state.run_id} has no detection report; run detect first")
    groups = []
    for g in state.detection["report"]["groups"]:
        fingerprint = np.asarray(state.detection["fingerprints"][g["group_id"]], dtype=np.float64)
        groups.append(
            detect.TemplateGroup(
                group_id=g["group_id"],
                members=tuple(g["members"]),
                collocation=Collocation(text=g["collocation"]),
                fingerprint=fingerprint,
                min_pairwise=g["min_pairwise"],
                status=g["status"],
            )
        )
    return groups


def detection_masks(state: RunState) -> dict[str, percept.Mask]:
    if state.detection is None:
        return {}
    return {d: percept.Mask.from_rle(obj) for d, obj in state.detection.get("masks", {}).items()}


def analyze_run(
    run_id: str,
    store: Store,
    extractor: percept.EmbeddingProvider,
    *,
    leak_allowlist: Sequence[tuple[str, str]] = (),
    leak_threshold: float | None = None,
    rms_cutoff: float = analyze.PERTURBATION_RMS_CUTOFF,
    sources_dir: str | Path | None = None,
    source_threshold: float = detect.DEFAULT_THRESHOLD,
    probe_prompts: Sequence[str] | None = None,
    probe_seeds: Sequence[int] = (0, 1, 2),
    provider: providers.Provider | None = None,
) -> tuple[list[dict], Path]:
    """Run the phenomenon classifiers over a detected run and append findings.

    Always runs clique dispersion and the leakage scan; source matching and
    the early-step probe are opt-in. Identical parameters are a no-op.
    """
    state = store.replay(run_id)
    groups = _detection_groups(state)
    threshold = state.detection["report"]["threshold"]
    leak_thr = leak_threshold if leak_threshold is not None else threshold
    params = {
        "detection_params": state.detection["params_digest"],
        "leak_allowlist": sorted(sorted((a.lower(), b.lower())) for a, b in leak_allowlist),
        "leak_threshold": leak_thr,
        "rms_cutoff": rms_cutoff,
        "sources_dir": str(sources_dir) if sources_dir else None,
        "source_threshold": source_threshold,
        "probe_prompts": sorted(probe_prompts) if probe_prompts else None,
        "probe_seeds": sorted(probe_seeds),
        "extractor": extractor.provider_id,
    }
    params_digest = digest_obj(params)
    for past in state.analyses:
        if past.get("params_digest") == params_digest:
            path = store.findings_path(run_id)
            if not path.exists():
                store.write_findings(run_id, state.findings)
            return state.findings, path

    masks = detection_masks(state)
    gens = state.ordered_generations()
    findings: list[analyze.Finding] = []

    for group in groups:
        images = {m: store.get_image(m) for m in group.members}
        findings.append(
            analyze.clique_dispersion(
                group, images, masks, embed_threshold=threshold, rms_cutoff=rms_cutoff
            )
        )

    fill_policy = state.detection["params"]["fill_policy"]
    gen_embeddings = []
    seen: set[str] = set()
    for gen in gens:
        digest = gen["image_digest"]
        if digest in seen:
            continue
        seen.add(digest)
        vec = _embedding_for(store, digest, masks.get(digest), extractor, fill_policy)
        gen_embeddings.append(
            analyze.GenerationEmbedding(
                digest=digest, collocation=gen["collocation"]["text"], vector=vec
            )
        )
    findings.extend(
        analyze.leakage_scan(groups, gen_embeddings, leak_allowlist, leak_threshold=leak_thr)
    )

    warnings: list[str] = []
    if sources_dir is not None:
        gen_images = [(g.digest, store.get_image(g.digest)) for g in gen_embeddings]
        findings.extend(
            analyze.source_match(
                gen_images,
                sources_dir,
                extractor,
                masks=masks,
                threshold=source_threshold,
                warnings=warnings,
            )
        )

    if probe_prompts:
        probe_provider = provider
        if probe_provider is None:
            probe_provider = providers.get_provider(state.config["provider_id"])
        width = state.config.get("width") or 512
        height = state.config.get("height") or 512
        for prompt in sorted(probe_prompts):
            findings.append(
                analyze.early_step_probe(
                    prompt, list(probe_seeds), probe_provider, width=width, height=height
                )
            )

    ordered = [f.to_dict() for f in analyze.sort_findings(findings)]
    for f in ordered:
        store.append_event(run_id, {"kind": "finding", "finding": f})
    store.append_event(
        run_id,
        {
            "kind": "analysis",
            "params_digest": params_digest,
            "params": params,
            "n_findings": len(ordered),
            "warnings": warnings,
        },
    )
    all_findings = store.replay(run_id).findings
    path = store.write_findings(run_id, all_findings)
    return all_findings, path
