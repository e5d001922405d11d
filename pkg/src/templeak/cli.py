"""Operator entry point.

Subcommands: sweep, detect, analyze, synth, verify, serve.
Exit codes: 0 ok, 1 invariant/verification failure, 2 environment or
provider failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import analyze, percept, pipeline, prompt_forge, providers, verify
from .store import Store, StoreError, NotFoundError
from .prompt_forge import PromptError

STORE_ENV = "TEMPLEAK_STORE_DIR"

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_ENVIRONMENT = 2


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_ENVIRONMENT):
        super().__init__(message)
        self.code = code


def _store(args) -> Store:
    root = args.store or os.environ.get(STORE_ENV, "store")
    return Store(root)


def load_sweep_config(path: str | Path) -> prompt_forge.SweepConfig:
    """Parse a TOML sweep config into a SweepConfig."""
    path = Path(path)
    if not path.exists():
        raise CLIError(f"no config file {path}")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    sweep = doc.get("sweep", {})
    seeds_sec = doc.get("seeds", {})
    prompts_sec = doc.get("prompts", {})

    descriptors = [prompt_forge.Descriptor(t) for t in prompts_sec.get("descriptors", [])]
    if not descriptors:
        descriptors = prompt_forge.default_descriptors()

    collocations: list[prompt_forge.Collocation] = []
    if "collocations_file" in prompts_sec:
        col_path = Path(prompts_sec["collocations_file"])
        if not col_path.is_absolute():
            col_path = path.parent / col_path
        collocations = prompt_forge.load_collocations(col_path)
    elif "collocations" in prompts_sec:
        seen = set()
        for rec in prompts_sec["collocations"]:
            col = prompt_forge.parse_collocation_record(rec)
            if col.text.lower() in seen:
                continue
            seen.add(col.text.lower())
            collocations.append(col)
    if not collocations:
        raise CLIError(f"{path}: no collocations configured")

    template = sweep.get("template", prompt_forge.DEFAULT_TEMPLATE)
    prompts = prompt_forge.expand_grid(descriptors, collocations, template)
    seeds = prompt_forge.seed_schedule(
        int(seeds_sec.get("start", 0)), int(seeds_sec.get("count", 50))
    )
    return prompt_forge.SweepConfig(
        prompts=tuple(prompts),
        seeds=tuple(seeds),
        provider_id=sweep.get("provider", "stub"),
        steps=int(sweep.get("steps", 50)),
        width=int(sweep.get("width", 512)),
        height=int(sweep.get("height", 512)),
        guidance=float(sweep.get("guidance", 7.5)),
        run_label=sweep.get("run_label", ""),
    )


def _resolve_provider(spec: str, *, timeout: float) -> providers.Provider:
    if spec == "stub":
        return providers.StubProvider()
    if spec.startswith("http://") or spec.startswith("https://"):
        return providers.HTTPProvider(provider_id=spec, endpoint=spec, timeout=timeout)
    try:
        return providers.get_provider(spec)
    except providers.ProviderError:
        raise CLIError(f"unknown provider {spec!r} (use 'stub' or an http(s) endpoint)")


def cmd_sweep(args) -> int:
    store = _store(args)
    config = load_sweep_config(args.config)
    provider_spec = args.provider or config.provider_id
    if provider_spec != config.provider_id:
        config = prompt_forge.SweepConfig(
            prompts=config.prompts,
            seeds=config.seeds,
            provider_id=provider_spec,
            steps=config.steps,
            width=config.width,
            height=config.height,
            guidance=config.guidance,
            run_label=config.run_label,
        )
    provider = _resolve_provider(provider_spec, timeout=args.timeout)
    try:
        run_id, n_new = pipeline.sweep_run(
            config, store, provider=provider, concurrency_limit=args.concurrency
        )
    except providers.BatchAbortedError as exc:
        raise CLIError(f"sweep aborted: {exc}")
    except providers.ProviderError as exc:
        raise CLIError(f"provider failure against {provider_spec}: {exc}")
    if n_new == 0:
        print(f"{run_id}: 0 new generations (cached)")
    else:
        print(f"{run_id}: {n_new} new generations")
    print(run_id)
    return EXIT_OK


def cmd_detect(args) -> int:
    store = _store(args)
    if not store.run_exists(args.run):
        raise CLIError(f"unknown run {args.run}")
    segmenter = None
    if args.segmenter:
        segmenter = percept.HTTPSegmenter(args.segmenter)
    elif args.stub_segmenter:
        segmenter = pipeline.load_stub_segmenter(args.run, _store(args))
    extractor = (
        percept.HTTPEmbedder(args.embedder) if args.embedder else percept.StubExtractor()
    )
    mask_classes = args.mask_classes.split(",") if args.mask_classes else None
    report, path = pipeline.detect_run(
        args.run,
        store,
        extractor,
        segmenter=segmenter,
        threshold=args.threshold,
        mask_classes=mask_classes,
        dilation=args.dilation,
        mode=args.mode,
    )
    print(f"{len(report['groups'])} groups at threshold {args.threshold}")
    print(path)
    return EXIT_OK


def _load_allowlist(path: str | None) -> list[tuple[str, str]]:
    if not path:
        return []
    p = Path(path)
    if not p.exists():
        raise CLIError(f"no allowlist file {path}")
    pairs = []
    for line in p.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [f.strip() for f in line.split("|")]
        if len(parts) != 2:
            raise CLIError(f"allowlist line must be 'collocation A|collocation B': {line!r}")
        pairs.append((parts[0], parts[1]))
    return pairs


def cmd_analyze(args) -> int:
    store = _store(args)
    if not store.run_exists(args.run):
        raise CLIError(f"unknown run {args.run}")
    extractor = (
        percept.HTTPEmbedder(args.embedder) if args.embedder else percept.StubExtractor()
    )
    provider = None
    probe_prompts = args.probe.split(",") if args.probe else None
    if probe_prompts:
        provider = _resolve_provider(args.provider or "stub", timeout=args.timeout)
    try:
        findings, path = pipeline.analyze_run(
            args.run,
            store,
            extractor,
            leak_allowlist=_load_allowlist(args.leak_allowlist),
            sources_dir=args.sources,
            probe_prompts=probe_prompts,
            probe_seeds=range(args.probe_seeds),
            provider=provider,
        )
    except analyze.AnalyzeError as exc:
        raise CLIError(str(exc))
    except pipeline.PipelineError as exc:
        raise CLIError(str(exc))
    print(f"{len(findings)} findings")
    print(path)
    return EXIT_OK


def _parse_plant(spec: str) -> tuple[int, int, int, int]:
    """Parse a benchmark shape like 5x6+20 or 5x6+20+1."""
    try:
        groups_part, rest = spec.split("x", 1)
        parts = rest.split("+")
        n_groups = int(groups_part)
        members = int(parts[0])
        noise = int(parts[1]) if len(parts) > 1 else 0
        leaks = int(parts[2]) if len(parts) > 2 else 0
        return n_groups, members, noise, leaks
    except (ValueError, IndexError):
        raise CLIError(f"bad --plant spec {spec!r}; expected e.g. 5x6+20 or 5x6+20+1")


def _load_synth_spec(path: Path) -> list:
    from .synthcorpus import CorpusError, PlantSpec
    from .percept import Mask

    if not path.exists():
        raise CLIError(f"no synth spec {path}")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    specs = []
    patterns_cfg = doc.get("patterns", [])
    if not patterns_cfg:
        raise CLIError(f"{path}: synth spec has no patterns")
    for base_cfg in doc.get("bases", []):
        base_path = path.parent / base_cfg["image"]
        base = base_path.read_bytes()
        w, h = percept.decode_rgb(base).shape[1], percept.decode_rgb(base).shape[0]
        rect = tuple(base_cfg["rect"])
        patterns = []
        for pat in patterns_cfg:
            patterns.append((pat["descriptor"], (path.parent / pat["image"]).read_bytes()))
        try:
            specs.append(
                PlantSpec(
                    base_image=base,
                    mask=Mask.rect(w, h, rect, base_cfg.get("class", "rug")),
                    category=doc.get("category", "Coffee Mug"),
                    patterns=patterns,
                    blend=doc.get("blend", "replace"),
                    caption_template=doc.get("caption_template", "{descriptor} {category}"),
                )
            )
        except CorpusError as exc:
            raise CLIError(f"{path}: {exc}")
    if not specs:
        raise CLIError(f"{path}: synth spec has no bases")
    return specs


def cmd_synth(args) -> int:
    from . import synthcorpus

    store = _store(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.plant:
        n_groups, members, noise, leaks = _parse_plant(args.plant)
        try:
            corpus = synthcorpus.plant_benchmark(
                n_groups, members, noise, leaks, seed=args.seed, store=store
            )
        except synthcorpus.CorpusError as exc:
            raise CLIError(str(exc))
    elif args.spec:
        specs = _load_synth_spec(Path(args.spec))
        corpus = synthcorpus.build_corpus(specs, store=store)
    else:
        raise CLIError("synth needs --plant or --spec")
    manifest = synthcorpus.write_corpus_manifest(corpus, out_dir / "corpus.jsonl")
    if args.export:
        synthcorpus.export_corpus(corpus, out_dir / "export")
    if args.ingest:
        run_id = pipeline.ingest_corpus_run(corpus, store)
        print(run_id)
    print(f"{len(corpus.pairs)} pairs")
    print(manifest)
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_verify(quick=args.quick)
    failed = False
    for res in results:
        status = "PASS" if res.ok else "FAIL"
        detail = f" ({res.detail})" if res.detail else ""
        print(f"{status} {res.name}{detail}")
        failed = failed or not res.ok
    return EXIT_INVARIANT if failed else EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .svc import create_app

    app = create_app(_store(args))
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="templeak",
        description="Audit black-box text-to-image endpoints for template memorization.",
    )
    parser.add_argument("--store", help=f"store directory (default ${STORE_ENV} or ./store)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a prompt/seed generation sweep")
    p.add_argument("--config", required=True, help="TOML sweep config")
    p.add_argument("--provider", help="override provider: 'stub' or an http(s) endpoint")
    p.add_argument("--concurrency", type=int, default=4)
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("detect", help="mask, embed, and search cliques over a run")
    p.add_argument("--run", required=True)
    p.add_argument("--threshold", type=float, default=0.95)
    p.add_argument("--mask-classes", help="comma-separated class filter")
    p.add_argument("--dilation", type=int, default=0)
    p.add_argument("--mode", choices=("clique", "components"), default="clique")
    p.add_argument("--segmenter", help="http(s) segmentation endpoint")
    p.add_argument("--stub-segmenter", action="store_true")
    p.add_argument("--embedder", help="http(s) embedding endpoint")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("analyze", help="classify detected groups into phenomena")
    p.add_argument("--run", required=True)
    p.add_argument("--leak-allowlist", help="file of 'A|B' shared-template pairs")
    p.add_argument("--sources", help="directory of local source images")
    p.add_argument("--probe", help="comma-separated prompts for the early-step probe")
    p.add_argument("--probe-seeds", type=int, default=3)
    p.add_argument("--provider", help="provider for the probe")
    p.add_argument("--embedder", help="http(s) embedding endpoint")
    p.add_argument("--timeout", type=float, default=60.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="build synthetic corpora and benchmarks")
    p.add_argument("--spec", help="TOML corpus spec (bases + patterns)")
    p.add_argument("--plant", help="benchmark shape, e.g. 5x6+20 or 5x6+20+1")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="corpus_out")
    p.add_argument("--export", action="store_true", help="write flat PNG + captions.txt export")
    p.add_argument("--ingest", action="store_true", help="register the corpus as a run")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="run built-in oracle and invariance suites")
    p.add_argument("--quick", action="store_true", help="subset that finishes in seconds")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("serve", help="serve the triage API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (PromptError, NotFoundError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
