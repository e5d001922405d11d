"""Similarity graph over masked embeddings and enumeration of suspected
template-memorized cliques.

Edges are strict (cosine > threshold, never >=) and clique search is exact
Bron-Kerbosch with pivoting; connected components are available behind a flag
for comparison but chains of borderline pairs are not cliques.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .percept import MaskedEmbedding, unit_vector
from .prompt_forge import Collocation


class DetectError(Exception):
    pass


DEFAULT_THRESHOLD = 0.95
NODE_BUDGET = 20_000


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two unit vectors (dot product clamped to [-1, 1];
    float rounding can push identical vectors a few ulp past 1)."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise DetectError(f"dimension mismatch: {u.shape[0]} vs {v.shape[0]}")
    return float(np.clip(np.dot(u, v), -1.0, 1.0))


@dataclass
class SimilarityGraph:
    """Undirected graph over image digests; an edge exists iff the masked
    embeddings' cosine is strictly above the threshold."""

    nodes: list[str]
    threshold: float
    adjacency: list[set[int]]
    edge_scores: dict[tuple[int, int], float]

    def n_edges(self) -> int:
        return len(self.edge_scores)

    def has_edge(self, a: str, b: str) -> bool:
        ia, ib = self.nodes.index(a), self.nodes.index(b)
        if ia == ib:
            return False
        return (min(ia, ib), max(ia, ib)) in self.edge_scores

    @classmethod
    def from_edges(
        cls, nodes: Sequence[str], edges: Mapping[tuple[str, str], float], threshold: float
    ) -> "SimilarityGraph":
        """Build directly from digest pairs (tests and verify suites)."""
        index = {d: i for i, d in enumerate(nodes)}
        adjacency: list[set[int]] = [set() for _ in nodes]
        scores: dict[tuple[int, int], float] = {}
        for (a, b), s in edges.items():
            ia, ib = index[a], index[b]
            if ia == ib:
                raise DetectError("self-edges are not allowed")
            lo, hi = min(ia, ib), max(ia, ib)
            scores[(lo, hi)] = s
            adjacency[lo].add(hi)
            adjacency[hi].add(lo)
        return cls(nodes=list(nodes), threshold=threshold, adjacency=adjacency, edge_scores=scores)


def build_graph(embeddings: Sequence[MaskedEmbedding], threshold: float) -> SimilarityGraph:
    """Pairwise cosine graph with strict-threshold edges."""
    if not 0 < threshold <= 1:
        raise DetectError("threshold must be in (0, 1]")
    dims = {e.dim for e in embeddings}
    if len(dims) > 1:
        raise DetectError(f"mixed embedding dimensions: {sorted(dims)}")
    nodes = [e.image_digest for e in embeddings]
    n = len(nodes)
    adjacency: list[set[int]] = [set() for _ in range(n)]
    scores: dict[tuple[int, int], float] = {}
    if n > 1:
        mat = np.stack([e.vector for e in embeddings])
        block = 2048
        for start in range(0, n, block):
            stop = min(start + block, n)
            sims = np.clip(mat[start:stop] @ mat.T, -1.0, 1.0)
            for i in range(start, stop):
                row = sims[i - start]
                for j in np.flatnonzero(row > threshold):
                    j = int(j)
                    if j <= i:
                        continue
                    scores[(i, j)] = float(row[j])
                    adjacency[i].add(j)
                    adjacency[j].add(i)
    return SimilarityGraph(nodes=nodes, threshold=threshold, adjacency=adjacency, edge_scores=scores)


@dataclass(frozen=True)
class Clique:
    """A set of pairwise-similar generations (size >= 2)."""

    members: tuple[str, ...]
    min_pairwise: float


def _bron_kerbosch(
    r: set[int], p: set[int], x: set[int], adjacency: list[set[int]], out: list[frozenset[int]]
) -> None:
    if not p and not x:
        out.append(frozenset(r))
        return
    pivot = max(p | x, key=lambda u: len(p & adjacency[u]))
    for v in sorted(p - adjacency[pivot]):
        _bron_kerbosch(r | {v}, p & adjacency[v], x & adjacency[v], adjacency, out)
        p.remove(v)
        x.add(v)


def maximal_cliques(graph: SimilarityGraph, node_budget: int = NODE_BUDGET) -> list[Clique]:
    """Exact enumeration of all maximal cliques of size >= 2.

    Output is deterministic: members sorted by digest, the list sorted by
    (size desc, lexicographic members).
    """
    n = len(graph.nodes)
    if n > node_budget:
        raise DetectError(
            f"graph has {n} nodes (budget {node_budget}); partition the sweep "
            "per collocation before clique search"
        )
    raw: list[frozenset[int]] = []
    _bron_kerbosch(set(), set(range(n)), set(), graph.adjacency, raw)
    cliques = []
    for members_idx in raw:
        if len(members_idx) < 2:
            continue
        members = tuple(sorted(graph.nodes[i] for i in members_idx))
        idx = sorted(members_idx)
        min_pairwise = min(
            graph.edge_scores[(a, b)] for k, a in enumerate(idx) for b in idx[k + 1 :]
        )
        cliques.append(Clique(members=members, min_pairwise=min_pairwise))
    cliques.sort(key=lambda c: (-len(c.members), c.members))
    return cliques


def connected_components(graph: SimilarityGraph) -> list[Clique]:
    """Component mode, offered for comparison only: merges chains of
    borderline pairs that exact clique search would keep apart."""
    n = len(graph.nodes)
    seen = [False] * n
    comps: list[Clique] = []
    for start in range(n):
        if seen[start] or not graph.adjacency[start]:
            continue
        stack, comp = [start], set()
        while stack:
            u = stack.pop()
            if seen[u]:
                continue
            seen[u] = True
            comp.add(u)
            stack.extend(graph.adjacency[u] - comp)
        if len(comp) >= 2:
            members = tuple(sorted(graph.nodes[i] for i in comp))
            idx = sorted(comp)
            scores = [
                graph.edge_scores[(a, b)]
                for k, a in enumerate(idx)
                for b in idx[k + 1 :]
                if (a, b) in graph.edge_scores
            ]
            comps.append(Clique(members=members, min_pairwise=min(scores)))
    comps.sort(key=lambda c: (-len(c.members), c.members))
    return comps


@dataclass(eq=False)
class TemplateGroup:
    """Merged cliques owned by one collocation, with a centroid fingerprint."""

    group_id: str
    members: tuple[str, ...]
    collocation: Collocation
    fingerprint: np.ndarray
    min_pairwise: float
    status: str = "suspected"


class _UnionFind:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def form_groups(
    cliques: Sequence[Clique],
    generations: Mapping[str, Sequence[Collocation]],
    embeddings: Mapping[str, np.ndarray],
    *,
    id_prefix: str = "g",
) -> list[TemplateGroup]:
    """Merge overlapping cliques into template groups.

    `generations` maps each member digest to the collocations of the
    generation records that produced it (one digest can back several records).
    The group takes the majority collocation, ties broken lexicographically.
    """
    uf = _UnionFind()
    for clique in cliques:
        first = clique.members[0]
        if first not in generations:
            raise DetectError(f"clique member {first} has no generation record")
        for m in clique.members[1:]:
            if m not in generations:
                raise DetectError(f"clique member {m} has no generation record")
            uf.union(first, m)
    clusters: dict[str, set[str]] = {}
    for clique in cliques:
        for m in clique.members:
            clusters.setdefault(uf.find(m), set()).add(m)

    groups: list[TemplateGroup] = []
    ordered = sorted(clusters.values(), key=lambda ms: (-len(ms), sorted(ms)))
    for idx, member_set in enumerate(ordered):
        members = tuple(sorted(member_set))
        votes: dict[str, tuple[int, Collocation]] = {}
        for m in members:
            for col in generations[m]:
                count, _ = votes.get(col.text, (0, col))
                votes[col.text] = (count + 1, col)
        best_count = max(count for count, _ in votes.values())
        tied = sorted(text for text, (count, _) in votes.items() if count == best_count)
        collocation = votes[tied[0]][1]

        vecs = np.stack([embeddings[m] for m in members])
        fingerprint = unit_vector(vecs.mean(axis=0))
        min_pairwise = min(
            cosine(embeddings[a], embeddings[b])
            for k, a in enumerate(members)
            for b in members[k + 1 :]
        )
        groups.append(
            TemplateGroup(
                group_id=f"{id_prefix}{idx:03d}",
                members=members,
                collocation=collocation,
                fingerprint=fingerprint,
                min_pairwise=min_pairwise,
            )
        )
    return groups
