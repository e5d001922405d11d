"""Built-in verification suites: oracle equivalences and invariance checks.

These run from `templeak verify` and double as the backbone of the
acceptance tests. Each check re-derives the expected result by an
independent route (brute force, direct byte comparison) rather than trusting
the implementation under test.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import detect, percept, synthcorpus


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""


def brute_force_maximal_cliques(n: int, adjacency: list[set[int]]) -> list[tuple[int, ...]]:
    """Exhaustive subset enumeration: every subset is tested for cliqueness,
    maximality is tested by single-node extension. Only viable for small n."""
    cliques = []
    for size in range(2, n + 1):
        for subset in itertools.combinations(range(n), size):
            if all(b in adjacency[a] for a, b in itertools.combinations(subset, 2)):
                in_subset = set(subset)
                extendable = any(
                    all(v in adjacency[u] for u in subset)
                    for v in range(n)
                    if v not in in_subset
                )
                if not extendable:
                    cliques.append(subset)
    return sorted(cliques, key=lambda c: (-len(c), c))


def random_graph(rng: np.random.Generator, n: int, density: float) -> detect.SimilarityGraph:
    nodes = [f"n{i:03d}" for i in range(n)]
    edges = {}
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < density:
                edges[(nodes[i], nodes[j])] = 0.96
    return detect.SimilarityGraph.from_edges(nodes, edges, threshold=0.95)


def check_clique_oracle(n_graphs: int = 100, max_nodes: int = 12, seed: int = 7) -> CheckResult:
    rng = np.random.default_rng(seed)
    t0 = time.time()
    for i in range(n_graphs):
        n = int(rng.integers(2, max_nodes + 1))
        density = float(rng.uniform(0.1, 0.9))
        graph = random_graph(rng, n, density)
        got = [tuple(graph.nodes.index(m) for m in c.members) for c in detect.maximal_cliques(graph)]
        expected = brute_force_maximal_cliques(n, graph.adjacency)
        if got != expected:
            return CheckResult(
                "clique-bruteforce-equivalence",
                False,
                f"graph {i} (n={n}, density={density:.2f}): {got} != {expected}",
            )
    return CheckResult(
        "clique-bruteforce-equivalence", True, f"{n_graphs} graphs in {time.time() - t0:.2f}s"
    )


def check_strict_threshold() -> CheckResult:
    """An edge requires cosine strictly above the threshold; a pair exactly at
    the threshold must not connect."""
    threshold = 0.95
    dim = 8
    u = np.zeros(dim)
    u[0] = 1.0
    v = np.zeros(dim)
    v[0] = threshold
    v[1] = np.sqrt(1.0 - threshold * threshold)
    at = percept.MaskedEmbedding(vector=u, dim=dim, provider_id="verify", image_digest="a", mask_digest="none")
    exact = percept.MaskedEmbedding(vector=v, dim=dim, provider_id="verify", image_digest="b", mask_digest="none")
    graph = detect.build_graph([at, exact], threshold)
    if graph.n_edges() != 0:
        return CheckResult("strict-threshold-edge", False, "edge created at cosine == threshold")
    w = v.copy()
    w[0] = threshold + 1e-6
    w = w / np.linalg.norm(w)
    above = percept.MaskedEmbedding(vector=w, dim=dim, provider_id="verify", image_digest="c", mask_digest="none")
    graph = detect.build_graph([at, above], threshold)
    if graph.n_edges() != 1:
        return CheckResult("strict-threshold-edge", False, "edge missing just above threshold")
    return CheckResult("strict-threshold-edge", True)


def _random_image(rng: np.random.Generator, w: int = 64, h: int = 64) -> bytes:
    return percept.encode_png(rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8))


def _random_mask(rng: np.random.Generator, w: int = 64, h: int = 64) -> percept.Mask:
    left = int(rng.integers(0, w - 8))
    top = int(rng.integers(0, h - 8))
    right = int(rng.integers(left + 4, w))
    bottom = int(rng.integers(top + 4, h))
    return percept.Mask.rect(w, h, (left, top, right, bottom), "verify")


def check_mask_fill_outside_untouched(n_pairs: int = 40, seed: int = 11) -> CheckResult:
    rng = np.random.default_rng(seed)
    for policy in percept.FILL_POLICIES:
        for _ in range(n_pairs):
            image = _random_image(rng)
            mask = _random_mask(rng)
            before = percept.decode_rgb(image)
            after = percept.decode_rgb(percept.mask_fill(image, mask, policy))
            if not np.array_equal(before[~mask.bits], after[~mask.bits]):
                return CheckResult(
                    "mask-fill-outside-untouched", False, f"policy {policy} altered unmasked pixels"
                )
    return CheckResult("mask-fill-outside-untouched", True)


def check_masked_embed_invariance(n_pairs: int = 40, seed: int = 13) -> CheckResult:
    """Arbitrary pixel noise strictly inside the mask must not change the
    embedding at all (bitwise)."""
    rng = np.random.default_rng(seed)
    extractor = percept.StubExtractor()
    for _ in range(n_pairs):
        image = _random_image(rng)
        mask = _random_mask(rng)
        arr = percept.decode_rgb(image)
        noisy = arr.copy()
        noisy[mask.bits] = rng.integers(0, 256, size=(int(mask.bits.sum()), 3), dtype=np.uint8)
        e1 = percept.masked_embed(image, mask, extractor)
        e2 = percept.masked_embed(percept.encode_png(noisy), mask, extractor)
        if e1.vector.tobytes() != e2.vector.tobytes():
            return CheckResult("masked-embed-in-mask-invariance", False, "vectors differ bitwise")
    return CheckResult("masked-embed-in-mask-invariance", True)


def check_unit_norm(n_images: int = 50, seed: int = 17) -> CheckResult:
    rng = np.random.default_rng(seed)
    extractor = percept.StubExtractor()
    for _ in range(n_images):
        emb = percept.masked_embed(_random_image(rng), None, extractor)
        if abs(float(np.linalg.norm(emb.vector)) - 1.0) >= 1e-6:
            return CheckResult("embedding-unit-norm", False, "vector norm outside 1e-6 of 1")
    return CheckResult("embedding-unit-norm", True)


def check_threshold_monotonicity(seed: int = 19) -> CheckResult:
    """Raising the threshold never adds edges, and every clique at the higher
    threshold is contained in some clique at the lower one."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(1, 32))
    vecs = base + 0.08 * rng.normal(size=(24, 32))
    embs = [
        percept.MaskedEmbedding(
            vector=percept.unit_vector(v), dim=32, provider_id="verify",
            image_digest=f"n{i:03d}", mask_digest="none",
        )
        for i, v in enumerate(vecs)
    ]
    for lo, hi in ((0.90, 0.95), (0.95, 0.99)):
        g_lo = detect.build_graph(embs, lo)
        g_hi = detect.build_graph(embs, hi)
        if not set(g_hi.edge_scores) <= set(g_lo.edge_scores):
            return CheckResult("threshold-monotonicity", False, "raising threshold added an edge")
        lo_cliques = [set(c.members) for c in detect.maximal_cliques(g_lo)]
        for clique in detect.maximal_cliques(g_hi):
            if not any(set(clique.members) <= other for other in lo_cliques):
                return CheckResult(
                    "threshold-monotonicity", False, "high-threshold clique not nested"
                )
    return CheckResult("threshold-monotonicity", True)


def check_composite_outside_untouched(seed: int = 23) -> CheckResult:
    rng = np.random.default_rng(seed)
    for blend in synthcorpus.BLEND_MODES:
        base = _random_image(rng)
        mask = _random_mask(rng)
        pattern = _random_image(rng, 16, 16)
        out = synthcorpus.composite(base, mask, pattern, blend)
        before = percept.decode_rgb(base)
        after = percept.decode_rgb(out)
        if not np.array_equal(before[~mask.bits], after[~mask.bits]):
            return CheckResult(
                "composite-outside-untouched", False, f"blend {blend} altered unmasked pixels"
            )
    return CheckResult("composite-outside-untouched", True)


def run_verify(quick: bool = False) -> list[CheckResult]:
    n_graphs = 20 if quick else 100
    n_pairs = 10 if quick else 40
    return [
        check_clique_oracle(n_graphs=n_graphs),
        check_strict_threshold(),
        check_mask_fill_outside_untouched(n_pairs=n_pairs),
        check_masked_embed_invariance(n_pairs=n_pairs),
        check_unit_norm(n_images=10 if quick else 50),
        check_threshold_monotonicity(),
        check_composite_outside_untouched(),
    ]
