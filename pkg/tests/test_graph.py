import io

import numpy as np
import pytest
from scipy.stats import chisquare

from ctxembed import graph as gr


class TestParseEdgeList:
    def test_two_edge_path(self):
        g = gr.parse_edge_list(b"0 1\n1 2")
        assert g.n == 3 and g.m == 2
        assert g.degrees.tolist() == [1, 2, 1]

    def test_duplicate_edges_collapse_by_summing(self):
        g = gr.parse_edge_list(b"a b 2.0\na b 3.0")
        assert g.m == 1
        assert g.edge_weights[0] == 5.0

    def test_reversed_duplicate_collapses_when_undirected(self):
        g = gr.parse_edge_list(b"a b 2.0\nb a 3.0", directed=False)
        assert g.m == 1 and g.edge_weights[0] == 5.0
        g = gr.parse_edge_list(b"a b 2.0\nb a 3.0", directed=True)
        assert g.m == 2

    def test_first_appearance_remapping(self):
        g = gr.parse_edge_list(b"zebra yak\nyak ant")
        assert g.node_labels == ("zebra", "yak", "ant")

    def test_comments_and_blank_lines(self):
        g = gr.parse_edge_list(b"# header\n\n0 1\n  \n1 2\n")
        assert g.m == 2

    def test_malformed_line_reports_number(self):
        with pytest.raises(gr.ParseError, match="line 2"):
            gr.parse_edge_list(b"0 1\n0 1 2 3")
        with pytest.raises(gr.ParseError, match="line 1"):
            gr.parse_edge_list(b"0 1 notaweight")

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(gr.ValidationError):
            gr.parse_edge_list(b"0 1 0.0")
        with pytest.raises(gr.ValidationError):
            gr.parse_edge_list(b"0 1 -2")
        with pytest.raises(gr.ValidationError):
            gr.parse_edge_list(b"0 1 inf")

    def test_self_loops_skipped_and_counted(self):
        g = gr.parse_edge_list(b"0 0\n0 1\n1 1")
        assert g.m == 1
        assert g.self_loops_dropped == 2

    def test_accepts_text_stream(self):
        g = gr.parse_edge_list(io.StringIO("0 1\n1 2"))
        assert g.m == 2

    def test_weighted_degrees_use_distinct_neighbors(self):
        g = gr.parse_edge_list(b"a b 2\na c 1\nb c 1", directed=True)
        assert g.degrees.tolist() == [2, 2, 2]

    def test_serialize_round_trip(self, rng):
        g = gr.barabasi_albert(40, 2, rng)
        # scramble weights so the round trip is not trivially all-ones
        w = rng.uniform(0.5, 3.0, g.m)
        g = gr.from_edges(g.n, g.edges, w)
        text = gr.serialize_edge_list(g)
        g2 = gr.parse_edge_list(text.encode())
        # ids in the serialized form are dense ints; remap is a permutation
        perm = np.array([int(lab) for lab in g2.node_labels])
        mapped = np.sort(np.sort(perm[g2.edges], axis=1), axis=0)
        orig = np.sort(np.sort(g.edges, axis=1), axis=0)
        assert np.array_equal(mapped, orig)
        assert np.allclose(np.sort(g2.edge_weights), np.sort(g.edge_weights))
        assert np.array_equal(np.sort(g2.degrees), np.sort(g.degrees))

    def test_lesmis_fixture_parses(self):
        g = gr.parse_edge_list(open("tests/data/lesmis.tsv", "rb"))
        assert g.n == 77 and g.m == 254


class TestGraphStructure:
    def test_adjacency_sorted_and_duplicate_free(self, rng):
        g = gr.barabasi_albert(60, 3, rng)
        for u in range(g.n):
            row = g.neighbors_of(u)
            assert np.all(np.diff(row) > 0)

    def test_has_edge_both_orientations(self):
        g = gr.from_edges(3, [(0, 1)], directed=True)
        assert g.has_edge(0, 1) and g.has_edge(1, 0)
        assert not g.has_edge(0, 2)

    def test_rejects_out_of_range_and_self_loops(self):
        with pytest.raises(gr.ValidationError):
            gr.from_edges(2, [(0, 5)])
        with pytest.raises(gr.ValidationError):
            gr.from_edges(2, [(1, 1)])

    def test_padding_id_is_n(self, path_graph):
        assert path_graph.padding_id == 3


class TestSampleNeighborhood:
    def test_padding_when_degree_below_size(self, path_graph, rng):
        smp = gr.sample_neighborhood(path_graph, 0, 5, rng)
        assert smp.mask.tolist() == [True, False, False, False, False]
        assert smp.ids[0] == 1
        assert np.all(smp.ids[1:] == path_graph.padding_id)

    def test_without_replacement_when_degree_exceeds_size(self, rng):
        star = gr.from_edges(8, [(0, v) for v in range(1, 8)])
        smp = gr.sample_neighborhood(star, 0, 5, rng)
        assert smp.mask.all()
        assert len(set(smp.ids.tolist())) == 5
        assert all(star.has_edge(0, int(v)) for v in smp.ids)

    def test_deterministic_given_seed(self, rng):
        star = gr.from_edges(12, [(0, v) for v in range(1, 12)])
        a = gr.sample_neighborhood(star, 0, 5, np.random.default_rng(9))
        b = gr.sample_neighborhood(star, 0, 5, np.random.default_rng(9))
        assert np.array_equal(a.ids, b.ids) and np.array_equal(a.mask, b.mask)

    def test_real_entries_count(self, two_triangles, rng):
        for u in range(6):
            smp = gr.sample_neighborhood(two_triangles, u, 4, rng)
            assert smp.n_real == min(two_triangles.degree(u), 4)

    def test_only_true_neighbors(self, two_triangles, rng):
        for u in range(6):
            smp = gr.sample_neighborhood(two_triangles, u, 3, rng)
            for v, real in zip(smp.ids, smp.mask):
                if real:
                    assert two_triangles.has_edge(u, int(v))

    def test_isolated_node_errors(self, rng):
        g = gr.from_edges(3, [(0, 1)])
        with pytest.raises(gr.ValidationError, match="isolated"):
            gr.sample_neighborhood(g, 2, 3, rng)


class TestNegativeSampler:
    def test_hand_computed_distribution(self):
        # 16**0.75 == 8 exactly, so the normalized probabilities are 1/9, 8/9
        s = gr.NegativeSampler.from_degrees(np.array([1, 16]))
        assert np.allclose(s.probs, [1 / 9, 8 / 9], atol=1e-15)

    def test_equal_degrees_uniform(self):
        s = gr.NegativeSampler.from_degrees(np.full(7, 3))
        assert np.allclose(s.probs, 1 / 7)

    def test_power_ratio_property(self, rng):
        degs = rng.integers(1, 50, size=20)
        s = gr.NegativeSampler.from_degrees(degs)
        p = s.probs
        for _ in range(50):
            i, j = rng.integers(0, 20, 2)
            assert np.isclose(p[i] / p[j], (degs[i] / degs[j]) ** 0.75)

    def test_empirical_chi_square(self):
        s = gr.NegativeSampler.from_degrees(np.array([1, 2, 4]))
        draws = s.draw(np.random.default_rng(7), size=1_000_000)
        observed = np.bincount(draws, minlength=3)
        expected = s.probs * draws.shape[0]
        assert chisquare(observed, expected).pvalue > 0.01

    def test_zero_degree_never_drawn(self):
        s = gr.NegativeSampler.from_degrees(np.array([0, 5, 5]))
        draws = s.draw(np.random.default_rng(0), size=20_000)
        assert not np.any(draws == 0)

    def test_build_requires_edges(self):
        g = gr.from_edges(3, np.zeros((0, 2)))
        with pytest.raises(gr.ValidationError):
            gr.build_negative_sampler(g)


class TestSplitEdges:
    def test_counts(self, rng):
        g = gr.barabasi_albert(102, 1, rng)  # m = 101
        g = gr.from_edges(100 + 2, g.edges[:100])  # exactly 100 edges
        split = gr.split_edges(g, 0.15, rng)
        assert split.train_edges.shape[0] == 15
        assert split.test_pos.shape[0] == 85
        assert split.test_neg.shape[0] == 85

    def test_partition_exact(self, rng):
        g = gr.barabasi_albert(80, 2, rng)
        split = gr.split_edges(g, 0.6, rng)
        got = np.vstack([split.train_edges, split.test_pos])
        assert np.array_equal(
            np.sort(got.view([("s", np.int64), ("t", np.int64)]).ravel()),
            np.sort(g.edges.view([("s", np.int64), ("t", np.int64)]).ravel()),
        )

    def test_negatives_absent_from_graph(self, rng):
        g = gr.barabasi_albert(50, 3, rng)
        split = gr.split_edges(g, 0.5, rng)
        for u, v in split.test_neg:  # brute-force membership oracle
            assert not g.has_edge(int(u), int(v))
            assert u != v

    def test_negatives_distinct(self, rng):
        g = gr.barabasi_albert(40, 2, rng)
        split = gr.split_edges(g, 0.3, rng)
        keys = {(min(int(a), int(b)), max(int(a), int(b))) for a, b in split.test_neg}
        assert len(keys) == split.test_neg.shape[0]

    def test_fraction_one_is_training_only(self, two_triangles, rng):
        split = gr.split_edges(two_triangles, 1.0, rng)
        assert split.train_edges.shape[0] == two_triangles.m
        assert split.test_pos.shape[0] == 0 and split.test_neg.shape[0] == 0

    def test_tiny_fraction_errors(self, two_triangles, rng):
        with pytest.raises(gr.ValidationError):
            gr.split_edges(two_triangles, 0.01, rng)
        with pytest.raises(gr.ValidationError):
            gr.split_edges(two_triangles, 1.5, rng)

    def test_stranded_nodes_flagged(self):
        g = gr.from_edges(4, [(0, 1), (2, 3)])
        # Force the split that keeps only (0, 1): try seeds until we hit it.
        for seed in range(50):
            split = gr.split_edges(g, 0.5, np.random.default_rng(seed))
            if split.train_edges.tolist() == [[0, 1]]:
                assert split.stranded.tolist() == [2, 3]
                break
        else:
            pytest.fail("expected split not produced")

    def test_export_load_round_trip(self, rng, tmp_path):
        g = gr.barabasi_albert(50, 2, rng)
        split = gr.split_edges(g, 0.7, rng)
        gr.export_split(split, tmp_path)
        loaded = gr.load_split(tmp_path, g, split.fraction)
        assert np.array_equal(loaded.train_edges, split.train_edges)
        assert np.array_equal(loaded.train_weights, split.train_weights)
        assert np.array_equal(loaded.test_pos, split.test_pos)
        assert np.array_equal(loaded.test_neg, split.test_neg)
        assert np.array_equal(loaded.stranded, split.stranded)

    def test_train_graph_preserves_node_set(self, rng):
        g = gr.barabasi_albert(30, 2, rng)
        split = gr.split_edges(g, 0.5, rng)
        gt = gr.build_train_graph(g, split)
        assert gt.n == g.n
        assert gt.m == split.train_edges.shape[0]


class TestBarabasiAlbert:
    def test_attachment_count_tree(self, rng):
        g = gr.barabasi_albert(10, 1, rng)
        assert g.m == 9

    def test_edge_count_general(self, rng):
        g = gr.barabasi_albert(50, 4, rng)
        assert g.m == (50 - 4) * 4

    def test_heavy_tail(self):
        g = gr.barabasi_albert(1000, 2, np.random.default_rng(1))
        degs = g.degrees
        assert degs.max() > 10 * np.median(degs)

    def test_precondition(self, rng):
        with pytest.raises(gr.ValidationError):
            gr.barabasi_albert(5, 4, rng)
        with pytest.raises(gr.ValidationError):
            gr.barabasi_albert(5, 0, rng)

    def test_matches_networkx_degree_profile(self):
        # Independent implementation of the same attachment process.
        nx = pytest.importorskip("networkx")
        ours = gr.barabasi_albert(500, 3, np.random.default_rng(0))
        theirs = nx.barabasi_albert_graph(500, 3, seed=0)
        d1 = np.sort(ours.degrees)
        d2 = np.sort([d for _, d in theirs.degree()])
        assert ours.m == theirs.number_of_edges()
        # same tail behavior, not identical draws
        assert abs(np.log(d1[-1]) - np.log(d2[-1])) < 1.5


class TestLabels:
    def test_parse_labels(self):
        labs = gr.parse_labels(b"# c\nn1 0\nn2 1\n")
        assert labs == {"n1": "0", "n2": "1"}

    def test_malformed(self):
        with pytest.raises(gr.ParseError, match="line 1"):
            gr.parse_labels(b"onlyone")
