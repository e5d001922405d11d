import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from templeak import detect, percept
from templeak.prompt_forge import Collocation
from templeak.verify import brute_force_maximal_cliques, random_graph


def unit(vec):
    return percept.unit_vector(np.asarray(vec, dtype=np.float64))


def emb(digest, vec):
    v = unit(vec)
    return percept.MaskedEmbedding(
        vector=v, dim=v.shape[0], provider_id="t", image_digest=digest, mask_digest="none"
    )


def random_unit_embeddings(n, dim=16, seed=0):
    rng = np.random.default_rng(seed)
    return [emb(f"d{i:03d}", rng.normal(size=dim)) for i in range(n)]


class TestCosine:
    def test_self_similarity(self):
        v = unit([1, 2, 3])
        assert detect.cosine(v, v) == pytest.approx(1.0)

    def test_orthogonal_basis(self):
        assert detect.cosine(unit([1, 0]), unit([0, 1])) == 0.0

    def test_dim_mismatch(self):
        with pytest.raises(detect.DetectError, match="mismatch"):
            detect.cosine(unit([1, 0]), unit([1, 0, 0]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_symmetry(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(10):
            u, v = unit(rng.normal(size=8)), unit(rng.normal(size=8))
            assert detect.cosine(u, v) == detect.cosine(v, u)
            assert -1.0 - 1e-12 <= detect.cosine(u, v) <= 1.0 + 1e-12


class TestBuildGraph:
    def test_identical_embeddings_complete_graph(self):
        embs = [emb(f"d{i}", [1, 2, 3]) for i in range(5)]
        graph = detect.build_graph(embs, 0.95)
        assert graph.n_edges() == 10

    def test_orthogonal_set_no_edges(self):
        embs = [emb(f"d{i}", np.eye(4)[i]) for i in range(4)]
        assert detect.build_graph(embs, 0.5).n_edges() == 0

    def test_matches_brute_force_pairwise(self):
        embs = random_unit_embeddings(50, seed=3)
        graph = detect.build_graph(embs, 0.95)
        expected = set()
        for i in range(50):
            for j in range(i + 1, 50):
                if detect.cosine(embs[i].vector, embs[j].vector) > 0.95:
                    expected.add((i, j))
        assert set(graph.edge_scores) == expected

    def test_mixed_dims_error(self):
        with pytest.raises(detect.DetectError, match="dimensions"):
            detect.build_graph([emb("a", [1, 0]), emb("b", [1, 0, 0])], 0.9)

    def test_threshold_is_strict(self):
        u = np.zeros(8)
        u[0] = 1.0
        v = np.zeros(8)
        v[0] = 0.95
        v[1] = np.sqrt(1 - 0.95**2)
        graph = detect.build_graph(
            [
                percept.MaskedEmbedding(u, 8, "t", "a", "none"),
                percept.MaskedEmbedding(v, 8, "t", "b", "none"),
            ],
            0.95,
        )
        assert graph.n_edges() == 0


class TestMaximalCliques:
    def test_complete_k5(self):
        nodes = list("abcde")
        edges = {(a, b): 0.99 for i, a in enumerate(nodes) for b in nodes[i + 1 :]}
        graph = detect.SimilarityGraph.from_edges(nodes, edges, 0.95)
        cliques = detect.maximal_cliques(graph)
        assert len(cliques) == 1
        assert cliques[0].members == ("a", "b", "c", "d", "e")

    def test_path_graph(self):
        graph = detect.SimilarityGraph.from_edges(
            ["a", "b", "c"], {("a", "b"): 0.96, ("b", "c"): 0.97}, 0.95
        )
        cliques = detect.maximal_cliques(graph)
        assert [c.members for c in cliques] == [("a", "b"), ("b", "c")]
        assert cliques[0].min_pairwise == 0.96

    def test_oracle_equivalence_on_random_graphs(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(2, 13))
            graph = random_graph(rng, n, float(rng.uniform(0.1, 0.9)))
            got = [
                tuple(sorted(graph.nodes.index(m) for m in c.members))
                for c in detect.maximal_cliques(graph)
            ]
            assert got == brute_force_maximal_cliques(n, graph.adjacency)

    def test_maximality_property(self):
        rng = np.random.default_rng(6)
        graph = random_graph(rng, 30, 0.4)
        for clique in detect.maximal_cliques(graph):
            idx = {graph.nodes.index(m) for m in clique.members}
            for v in range(len(graph.nodes)):
                if v not in idx:
                    assert not idx <= graph.adjacency[v] | {v}

    def test_internal_consistency_from_raw_embeddings(self):
        embs = random_unit_embeddings(40, dim=6, seed=7)
        graph = detect.build_graph(embs, 0.8)
        by_digest = {e.image_digest: e.vector for e in embs}
        for clique in detect.maximal_cliques(graph):
            for i, a in enumerate(clique.members):
                for b in clique.members[i + 1 :]:
                    assert detect.cosine(by_digest[a], by_digest[b]) > 0.8

    def test_determinism(self):
        embs = random_unit_embeddings(40, dim=6, seed=8)
        g1 = detect.build_graph(embs, 0.8)
        g2 = detect.build_graph(list(embs), 0.8)
        assert detect.maximal_cliques(g1) == detect.maximal_cliques(g2)

    def test_node_budget_guard(self):
        embs = [emb(f"d{i}", np.eye(4)[i % 4]) for i in range(11)]
        graph = detect.build_graph(embs, 0.5)
        with pytest.raises(detect.DetectError, match="partition"):
            detect.maximal_cliques(graph, node_budget=10)

    def test_threshold_monotonicity(self):
        embs = random_unit_embeddings(30, dim=4, seed=9)
        lo = detect.maximal_cliques(detect.build_graph(embs, 0.6))
        hi = detect.maximal_cliques(detect.build_graph(embs, 0.9))
        lo_sets = [set(c.members) for c in lo]
        for clique in hi:
            assert any(set(clique.members) <= s for s in lo_sets)


class TestFormGroups:
    def col(self, text):
        return Collocation(text)

    def test_disjoint_cliques_stay_separate(self):
        cliques = [
            detect.Clique(("a", "b"), 0.99),
            detect.Clique(("c", "d"), 0.98),
        ]
        gens = {d: [self.col("Area Rug")] for d in "abcd"}
        vecs = {d: unit([1, 2, 3]) for d in "abcd"}
        groups = detect.form_groups(cliques, gens, vecs)
        assert len(groups) == 2

    def test_overlapping_cliques_merge(self):
        cliques = [detect.Clique(("a", "b"), 0.99), detect.Clique(("b", "c"), 0.98)]
        gens = {d: [self.col("Area Rug")] for d in "abc"}
        vecs = {d: unit([1, 0, 0]) for d in "abc"}
        groups = detect.form_groups(cliques, gens, vecs)
        assert len(groups) == 1
        assert groups[0].members == ("a", "b", "c")

    def test_majority_collocation_with_lexicographic_ties(self):
        cliques = [detect.Clique(("a", "b", "c"), 0.99)]
        gens = {
            "a": [self.col("Tote Bag")],
            "b": [self.col("Area Rug")],
            "c": [self.col("Tote Bag")],
        }
        vecs = {d: unit([1, 0]) for d in "abc"}
        assert detect.form_groups(cliques, gens, vecs)[0].collocation.text == "Tote Bag"
        gens["c"] = [self.col("Area Rug")]
        gens["a"] = [self.col("Tote Bag")]
        gens["b"] = [self.col("Tote Bag")]
        gens["c"] = [self.col("Area Rug")]
        # 2 vs 1: majority still wins; on a true tie the smaller text wins
        two_way = {
            "a": [self.col("Beach Towel")],
            "b": [self.col("Area Rug")],
        }
        groups = detect.form_groups([detect.Clique(("a", "b"), 0.99)], two_way, {"a": unit([1, 0]), "b": unit([1, 0])})
        assert groups[0].collocation.text == "Area Rug"

    def test_missing_record_errors(self):
        cliques = [detect.Clique(("a", "b"), 0.99)]
        with pytest.raises(detect.DetectError, match="no generation record"):
            detect.form_groups(cliques, {"a": [self.col("x")]}, {"a": unit([1, 0]), "b": unit([1, 0])})

    def test_fingerprint_is_unit_norm_centroid(self):
        cliques = [detect.Clique(("a", "b"), 0.99)]
        gens = {d: [self.col("x")] for d in "ab"}
        vecs = {"a": unit([1, 0, 0]), "b": unit([0, 1, 0])}
        group = detect.form_groups(cliques, gens, vecs)[0]
        assert np.linalg.norm(group.fingerprint) == pytest.approx(1.0)
        assert group.fingerprint[0] == pytest.approx(group.fingerprint[1])

    def test_status_transitions_start_suspected(self):
        cliques = [detect.Clique(("a", "b"), 0.99)]
        gens = {d: [self.col("x")] for d in "ab"}
        vecs = {d: unit([1, 0]) for d in "ab"}
        assert detect.form_groups(cliques, gens, vecs)[0].status == "suspected"


class TestComponentsMode:
    def test_chain_merges_into_one_component(self):
        graph = detect.SimilarityGraph.from_edges(
            ["a", "b", "c"], {("a", "b"): 0.96, ("b", "c"): 0.97}, 0.95
        )
        comps = detect.connected_components(graph)
        assert len(comps) == 1
        assert comps[0].members == ("a", "b", "c")
