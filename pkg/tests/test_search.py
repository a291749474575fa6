import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fastmks import (
    Dataset,
    EvalCounter,
    Kernel,
    SearchConfig,
    SearchError,
    bound_general,
    bound_normalized,
    construct,
    fastmks,
    fastmks_ava,
    fastmks_ra,
    fastmks_rva,
    linear_scan,
    ra_sample_count,
)
from fastmks.data import gaussian_mixture, random_sequences, unit_sphere, uniform_cube
from fastmks.search import search_batch, top_k_merge


def naive_top_k(points, query, k, fn):
    values = [fn(np.asarray(p, dtype=float), np.asarray(query, dtype=float)) for p in points]
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))[:k]
    return [(i, values[i]) for i in order]


def subtree_max(tree, node, values):
    return float(values[tree.subtree_points(node)].max())


S3 = [(1.0, 0.0), (0.0, 1.0), (2.0, 2.0)]


class TestBoundExamples:
    def test_general_substitution(self):
        assert bound_general(0.5, 4.0, 4.0) == 8.5

    def test_general_leaf(self):
        assert bound_general(0.37, 9.0, 0.0) == 0.37

    def test_normalized_reaches_query(self):
        # scale -1 at base 2: 2^(2i) = 0.25, so 1 - 2s = 0.5 < 0.6
        assert bound_normalized(0.6, 0.25) == 1.0

    def test_normalized_formula(self):
        expected = 0.2 * 0.5 + 1.0 * math.sqrt(0.96 * 0.75)
        assert bound_normalized(0.2, 0.25) == pytest.approx(expected, abs=1e-15)
        assert bound_normalized(0.2, 0.25) == pytest.approx(0.948528137, abs=1e-9)

    def test_normalized_whole_sphere(self):
        assert bound_normalized(-0.9, 1.5) == 1.0

    def test_normalized_zero_radius(self):
        assert bound_normalized(0.3, 0.0) == pytest.approx(0.3, abs=1e-15)

    @given(st.floats(-1, 1), st.floats(0, 4))
    def test_normalized_is_angular_max(self, k, r):
        """Independent oracle: cos(max(angle(q,p) - angular radius, 0))."""
        theta = 2.0 * math.asin(min(1.0, r / 2.0))
        alpha = math.acos(k)
        oracle = math.cos(max(alpha - theta, 0.0))
        assert bound_normalized(k, (r / 2.0) ** 2) == pytest.approx(oracle, abs=1e-7)

    @given(st.floats(-1, 1), st.floats(0, 4))
    def test_normalized_dominated_by_general(self, k, r):
        assert bound_normalized(k, (r / 2.0) ** 2) <= bound_general(k, 1.0, r) + 1e-12


class TestBoundSoundness:
    @pytest.mark.parametrize("kind", ["linear", "polynomial", "cosine", "gaussian"])
    def test_every_node(self, kind):
        pts = gaussian_mixture(300, 3, seed=21)
        k = Kernel("polynomial", degree=3) if kind == "polynomial" else Kernel(kind)
        ds = Dataset.from_vectors(pts)
        tree = construct(ds, k)
        space = tree.space
        nodes = list(tree.nodes())
        rng = np.random.default_rng(0)
        for q in gaussian_mixture(10, 3, seed=22):
            prepared = space.prepare(q)
            kqq = prepared.self_value
            values = space.query_cross(prepared, np.arange(len(ds)))
            for i in rng.choice(len(nodes), size=min(50, len(nodes)), replace=False):
                node = nodes[i]
                true = subtree_max(tree, node, values)
                general = bound_general(values[node.point], kqq, node.furthest)
                assert true <= general + 1e-9 * (1 + abs(true))
                if k.normalized:
                    norm = bound_normalized(values[node.point], (node.furthest / 2) ** 2)
                    assert true <= norm + 1e-9
                    assert norm <= general + 1e-12

    def test_pspectrum_nodes(self, sequences):
        k = Kernel("pspectrum")
        tree = construct(sequences, k)
        space = tree.space
        for q in random_sequences(5, length=40, seed=99):
            prepared = space.prepare(q)
            values = space.query_cross(prepared, np.arange(len(sequences)))
            for node in tree.nodes():
                true = subtree_max(tree, node, values)
                assert true <= bound_general(values[node.point], prepared.self_value,
                                             node.furthest) + 1e-9


class TestExactSearch:
    def test_three_points_k1(self):
        tree = construct(Dataset.from_vectors(S3), Kernel("linear"))
        assert fastmks(tree, (1.0, 0.0), 1).hits == [(2, 2.0)]

    def test_three_points_k2(self):
        tree = construct(Dataset.from_vectors(S3), Kernel("linear"))
        assert fastmks(tree, (1.0, 0.0), 2).hits == [(2, 2.0), (0, 1.0)]

    def test_linear_scan_k3(self):
        r = linear_scan(Dataset.from_vectors(S3), Kernel("linear"), (1.0, 0.0), 3)
        assert r.hits == [(2, 2.0), (0, 1.0), (1, 0.0)]
        assert r.kernel_evals == 3

    @pytest.mark.parametrize("kind", ["linear", "polynomial", "cosine", "gaussian"])
    def test_linear_scan_against_naive(self, kind):
        pts = uniform_cube(200, 4, seed=3)
        fn = {
            "linear": lambda x, y: float(np.dot(x, y)),
            "polynomial": lambda x, y: (float(np.dot(x, y)) + 1.0) ** 10,
            "cosine": lambda x, y: float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y))),
            "gaussian": lambda x, y: math.exp(-float(np.sum((x - y) ** 2)) / 2.0),
        }[kind]
        ds = Dataset.from_vectors(pts)
        for q in uniform_cube(10, 4, seed=4):
            got = linear_scan(ds, Kernel(kind), q, 5).hits
            want = naive_top_k(pts, q, 5, fn)
            assert [i for i, _ in got] == [i for i, _ in want]
            np.testing.assert_allclose([v for _, v in got], [v for _, v in want], rtol=1e-12)

    @pytest.mark.parametrize("kind", ["linear", "polynomial", "cosine", "gaussian"])
    @pytest.mark.parametrize("parent_prune", [True, False])
    def test_matches_linear_scan(self, clustered, kind, parent_prune):
        k = Kernel(kind)
        tree = construct(clustered, k)
        for q in gaussian_mixture(25, 5, seed=77):
            for kk in (1, 2, 5, 10):
                got = fastmks(tree, q, SearchConfig(k=kk, parent_prune=parent_prune))
                assert got.hits == linear_scan(clustered, k, q, kk).hits

    def test_matches_linear_scan_strings(self, sequences):
        k = Kernel("pspectrum")
        tree = construct(sequences, k)
        for q in random_sequences(20, length=40, seed=5):
            for kk in (1, 5, 10):
                assert fastmks(tree, q, kk).hits == linear_scan(sequences, k, q, kk).hits

    def test_dataset_points_as_queries(self, small_vectors):
        k = Kernel("cosine")
        tree = construct(small_vectors, k)
        for i in range(0, len(small_vectors), 23):
            q = small_vectors.point(i)
            assert fastmks(tree, q, 3).hits == linear_scan(small_vectors, k, q, 3).hits

    def test_ties_and_duplicates(self):
        # every point is repeated, so every value is tied at least twice
        base = uniform_cube(50, 2, seed=1)
        pts = np.concatenate([base, base[::-1], base])
        ds = Dataset.from_vectors(pts)
        k = Kernel("linear")
        tree = construct(ds, k)
        for q in uniform_cube(20, 2, seed=2):
            r = fastmks(tree, q, 10)
            assert r.hits == linear_scan(ds, k, q, 10).hits
            # tied values come out by increasing index
            for (i1, v1), (i2, v2) in zip(r.hits, r.hits[1:]):
                assert v1 > v2 or (v1 == v2 and i1 < i2)

    @given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 3)),
                  elements=st.sampled_from([0.0, 0.5, 1.0, -1.0, 2.0])),
           arrays(np.float64, 3, elements=st.sampled_from([0.0, 0.5, 1.0, -1.0, 3.0])),
           st.integers(1, 30), st.sampled_from(["linear", "polynomial", "gaussian"]))
    def test_lattice_property(self, pts, qfull, k, kind):
        ds = Dataset.from_vectors(pts)
        q = qfull[: pts.shape[1]]
        k = min(k, len(pts))
        kern = Kernel(kind)
        tree = construct(ds, kern)
        assert fastmks(tree, q, k).hits == linear_scan(ds, kern, q, k).hits

    def test_monotone_k(self, clustered):
        tree = construct(clustered, Kernel("linear"))
        for q in gaussian_mixture(30, 5, seed=8):
            assert fastmks(tree, q, 1).hits[0] == fastmks(tree, q, 10).hits[0]

    def test_k_exceeds_n(self):
        tree = construct(Dataset.from_vectors(S3), Kernel("linear"))
        with pytest.raises(SearchError, match="k exceeds n"):
            fastmks(tree, (1.0, 0.0), 4)
        with pytest.raises(SearchError, match="k exceeds n"):
            linear_scan(tree.dataset, Kernel("linear"), (1.0, 0.0), 4)

    def test_domain_mismatch(self):
        tree = construct(Dataset.from_vectors(S3), Kernel("linear"))
        with pytest.raises(Exception, match="dimension"):
            fastmks(tree, (1.0, 0.0, 0.0), 1)


class TestAccounting:
    @pytest.mark.parametrize("kind", ["linear", "cosine"])
    def test_eval_bounds(self, kind):
        pts = uniform_cube(400, 3, seed=2)
        pts[5] = pts[6]
        ds = Dataset.from_vectors(pts)
        tree = construct(ds, Kernel(kind))
        total_nodes = tree.node_count()
        for q in uniform_cube(40, 3, seed=3):
            c = EvalCounter()
            r = fastmks(tree, q, 5, c)
            assert c.count == r.kernel_evals
            assert r.kernel_evals <= r.nodes_visited + r.duplicates_examined + 1
            assert r.nodes_visited + r.nodes_pruned <= total_nodes

    def test_no_parent_prune_counts_nothing_pruned(self, small_vectors):
        tree = construct(small_vectors, Kernel("linear"))
        r = fastmks(tree, small_vectors.point(3), SearchConfig(k=2, parent_prune=False))
        assert r.nodes_pruned == 0

    def test_sublinear_on_clusters(self):
        pts = gaussian_mixture(10000, 8, seed=1)
        ds = Dataset.from_vectors(pts)
        tree = construct(ds, Kernel("linear"))
        batch = search_batch(tree, gaussian_mixture(50, 8, seed=2), 1)
        assert batch.kernel_evals / 50 < 10000
        assert batch.speedup > 1


class TestApproximate:
    @pytest.fixture(scope="class")
    @staticmethod
    def setup():
        pts = uniform_cube(1000, 3, seed=31)
        ds = Dataset.from_vectors(pts)
        k = Kernel("linear")
        return ds, k, construct(ds, k), uniform_cube(100, 3, seed=32)

    @pytest.mark.parametrize("eps", [0.01, 0.1, 1.0])
    def test_ava_guarantee_every_slot(self, setup, eps):
        ds, k, tree, queries = setup
        for q in queries:
            exact = linear_scan(ds, k, q, 5).values
            got = fastmks_ava(tree, q, 5, eps).values
            assert all(g >= e - eps for g, e in zip(got, exact))

    def test_ava_huge_eps_stops_at_root(self, setup):
        ds, k, tree, queries = setup
        q = queries[0]
        r = fastmks_ava(tree, q, 1, 1e6)
        assert r.kernel_evals == 2  # K(q, q) and the root point
        assert r.hits[0][1] >= linear_scan(ds, k, q, 1).hits[0][1] - 1e6

    def test_ava_tiny_eps_is_exact(self, setup):
        ds, k, tree, queries = setup
        for q in queries[:30]:
            a = fastmks_ava(tree, q, 3, 1e-300)
            e = fastmks(tree, q, 3)
            assert a.hits == e.hits and a.kernel_evals == e.kernel_evals

    def test_ava_cheaper(self, setup):
        _, _, tree, queries = setup
        ava = sum(fastmks_ava(tree, q, 1, 0.1).kernel_evals for q in queries)
        exact = sum(fastmks(tree, q, 1).kernel_evals for q in queries)
        assert ava <= exact

    @pytest.mark.parametrize("eps", [0.1, 0.5])
    def test_rva_guarantee(self, setup, eps):
        ds, k, tree, queries = setup
        for q in queries:
            exact = linear_scan(ds, k, q, 5).values
            r = fastmks_rva(tree, q, 5, eps)
            assert not r.guarantee_void
            assert all(g >= (1 - eps) * e for g, e in zip(r.values, exact) if e > 0)

    def test_rva_void_on_orthogonal_query(self):
        pts = np.concatenate([uniform_cube(50, 2, seed=1) + 0.1, np.zeros((50, 1))], axis=1)
        tree = construct(Dataset.from_vectors(pts), Kernel("cosine"))
        r = fastmks_rva(tree, (0.0, 0.0, 1.0), 1, 0.5)
        assert r.hits[0][1] == 0.0
        assert r.guarantee_void

    def test_rva_small_eps_on_tight_clusters(self):
        pts = gaussian_mixture(800, 4, clusters=5, spread=0.01, seed=3)
        ds = Dataset.from_vectors(pts)
        k = Kernel("linear")
        tree = construct(ds, k)
        for q in gaussian_mixture(40, 4, clusters=5, spread=0.01, seed=4):
            exact = linear_scan(ds, k, q, 1).hits[0][1]
            got = fastmks_rva(tree, q, 1, 0.01).hits[0][1]
            assert got <= exact
            if exact > 0:
                assert got >= 0.99 * exact

    def test_ra_sample_count(self):
        assert ra_sample_count(10000, 100, 0.05) == 299
        assert math.ceil(math.log(0.05) / math.log(0.99)) == 299

    def test_ra_vacuous_tau(self, setup):
        ds, _, tree, queries = setup
        n = len(ds)
        assert ra_sample_count(n, n - 1, 0.1) <= 2
        r = fastmks_ra(tree, queries[0], n - 1, 0.1)
        assert 0 <= r.hits[0][0] < n

    def test_ra_tau_too_large(self, setup):
        _, _, tree, queries = setup
        with pytest.raises(SearchError):
            fastmks_ra(tree, queries[0], tree.n, 0.1)

    def test_ra_rank_rate(self):
        pts = gaussian_mixture(3000, 5, seed=41)
        ds = Dataset.from_vectors(pts)
        k = Kernel("linear")
        tree = construct(ds, k)
        space = tree.space
        tau, delta, Q = 30, 0.1, 300
        failures = 0
        for q in gaussian_mixture(Q, 5, seed=42):
            values = space.query_cross(space.prepare(q), np.arange(len(ds)))
            best = fastmks_ra(tree, q, tau, delta).hits[0][1]
            failures += 1 + np.count_nonzero(values > best) > tau
        assert failures / Q <= delta + 3 * math.sqrt(delta * (1 - delta) / Q)

    def test_sphere_normalized_ava(self):
        pts = unit_sphere(500, 6, seed=5)
        ds = Dataset.from_vectors(pts)
        k = Kernel("cosine")
        tree = construct(ds, k)
        for q in unit_sphere(50, 6, seed=6):
            assert fastmks_ava(tree, q, 1, 0.05).hits[0][1] >= \
                linear_scan(ds, k, q, 1).hits[0][1] - 0.05


class TestSearchConfig:
    @pytest.mark.parametrize("text,canonical", [
        ("exact", "exact"),
        ("ava:eps=0.01", "ava:eps=0.01"),
        ("ava:0.01", "ava:eps=0.01"),
        ("rva:eps=0.1", "rva:eps=0.1"),
        ("ra:tau=100,delta=0.05", "ra:tau=100,delta=0.05"),
        ("RA: tau=100 , delta=0.05", "ra:tau=100,delta=0.05"),
    ])
    def test_round_trip(self, text, canonical):
        cfg = SearchConfig.parse(text, k=3)
        assert cfg.spec() == canonical
        assert SearchConfig.parse(cfg.spec(), k=3) == cfg

    @pytest.mark.parametrize("text", ["fast", "ava", "ava:eps=-1", "rva:eps=1.5",
                                      "ra:tau=10", "ra:tau=1.5,delta=0.1", "ava:x=1",
                                      "ra:tau=10,delta=2"])
    def test_rejects(self, text):
        with pytest.raises(SearchError):
            SearchConfig.parse(text)

    def test_bad_k(self):
        with pytest.raises(SearchError):
            SearchConfig(k=0)

    def test_guarantee_text(self):
        assert SearchConfig.parse("ava:0.01").guarantee() == "value \u2265 exact \u2212 0.01"


class TestMerge:
    def test_top_k_merge(self):
        merged = top_k_merge([[(4, 1.0), (2, 0.5)], [(1, 1.0), (3, 0.7)]], 3)
        assert merged == [(1, 1.0), (4, 1.0), (3, 0.7)]
