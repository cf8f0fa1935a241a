import numpy as np
import pytest
import scipy.sparse as sp

from pshgcn.errors import GraphError
from pshgcn.graph import (
    LAPLACIAN,
    NORMALIZED_ADJACENCY,
    build_subgraphs,
    check_shift_operator,
    laplacian,
    normalize,
    transpose_operator,
)

from conftest import random_hetero_graph, random_signatures


class TestBuildSubgraphs:
    def test_single_edge(self):
        g = build_subgraphs([(0, 1, 0)], 2, [0, 1], [(0, 1)])
        np.testing.assert_array_equal(g.adjacency[0].toarray(), [[0, 1], [0, 0]])

    def test_empty_edge_list_gives_zero_matrices(self):
        g = build_subgraphs([], 2, [0, 1], [(0, 1), (1, 0)])
        assert g.num_edge_types == 2
        for a in g.adjacency:
            assert a.nnz == 0
            assert a.shape == (2, 2)

    def test_six_edge_types_academic_schema(self):
        # Four node types (author, paper, term, venue) and six directed
        # edge types, one sub-graph matrix per type.
        sigs = [(0, 1), (1, 0), (1, 2), (2, 1), (1, 3), (3, 1)]
        node_type = [0, 0, 1, 1, 2, 3]
        edges = [
            (0, 2, 0), (1, 3, 0), (2, 0, 1), (3, 1, 1),
            (2, 4, 2), (4, 3, 3), (2, 5, 4), (5, 3, 5),
        ]
        g = build_subgraphs(edges, 6, node_type, sigs)
        assert g.num_edge_types == 6
        assert g.num_node_types == 4
        assert all(a.shape == (6, 6) for a in g.adjacency)
        assert sum(a.nnz for a in g.adjacency) == len(edges)

    def test_duplicate_edges_merge_by_weight(self):
        g = build_subgraphs(
            [(0, 1, 0, 2.0), (0, 1, 0, 3.0)], 2, [0, 1], [(0, 1)]
        )
        assert g.adjacency[0][0, 1] == 5.0
        assert g.adjacency[0].nnz == 1

    def test_signature_violation_names_edge(self):
        with pytest.raises(GraphError, match=r"\(1, 0, 0\)"):
            build_subgraphs([(1, 0, 0)], 2, [0, 1], [(0, 1)])

    def test_unknown_edge_type_rejected(self):
        with pytest.raises(GraphError, match="unknown edge type"):
            build_subgraphs([(0, 1, 7)], 2, [0, 1], [(0, 1)])

    def test_out_of_range_node_rejected(self):
        with pytest.raises(GraphError, match="outside"):
            build_subgraphs([(0, 5, 0)], 2, [0, 1], [(0, 1)])


class TestNormalize:
    def test_row_normalization(self):
        a = sp.csr_array(np.array([[0.0, 2.0], [0.0, 0.0]]))
        op = normalize(a, (0, 1), 2)
        np.testing.assert_allclose(op.matrix.toarray(), [[0, 1], [0, 0]])
        assert op.kind == NORMALIZED_ADJACENCY

    def test_zero_out_degree_row_stays_zero(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        op = normalize(a, (0, 1), 2)
        np.testing.assert_allclose(op.matrix.toarray(), [[0, 1], [0, 0]])

    def test_fanout_split(self):
        a = sp.csr_array(np.array([[0.0, 1.0, 1.0], [0, 0, 0], [0, 0, 0]]))
        op = normalize(a, (0, 1), 2)
        np.testing.assert_allclose(
            op.matrix.toarray(), [[0, 0.5, 0.5], [0, 0, 0], [0, 0, 0]]
        )

    def test_negative_entries_rejected(self):
        a = sp.csr_array(np.array([[0.0, -1.0], [0.0, 0.0]]))
        with pytest.raises(GraphError, match="negative"):
            normalize(a, (0, 1), 2)

    def test_mask_has_single_true_cell(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        op = normalize(a, (0, 1), 3)
        expected = np.zeros((3, 3), dtype=bool)
        expected[0, 1] = True
        np.testing.assert_array_equal(op.type_mask, expected)


class TestLaplacian:
    def test_two_node_chain(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        lap = laplacian(normalize(a, (0, 1), 2))
        np.testing.assert_allclose(lap.matrix.toarray(), [[1, -1], [0, 1]])
        assert lap.kind == LAPLACIAN

    def test_zero_adjacency_gives_identity(self):
        a = sp.csr_array((2, 2))
        lap = laplacian(normalize(a, (0, 1), 2))
        np.testing.assert_allclose(lap.matrix.toarray(), np.eye(2))

    def test_fanout(self):
        a = sp.csr_array(np.array([[0.0, 1.0, 1.0], [0, 0, 0], [0, 0, 0]]))
        lap = laplacian(normalize(a, (0, 1), 2))
        np.testing.assert_allclose(
            lap.matrix.toarray(), [[1, -0.5, -0.5], [0, 1, 0], [0, 0, 1]]
        )

    def test_mask_gains_diagonal(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        lap = laplacian(normalize(a, (0, 1), 2))
        assert lap.type_mask[0, 0] and lap.type_mask[1, 1] and lap.type_mask[0, 1]

    def test_requires_normalized_input(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValueError):
            laplacian(laplacian(normalize(a, (0, 1), 2)))

    def test_identity_decomposition(self):
        # L x + A_hat x must reassemble x exactly for any signal.
        rng = np.random.default_rng(3)
        for _ in range(10):
            graph = random_hetero_graph(rng, random_signatures(rng, 3))
            for op in graph.shift_operators():
                lap = laplacian(op)
                x = rng.standard_normal(graph.n)
                np.testing.assert_allclose(
                    lap.matrix @ x + op.matrix @ x, x, atol=1e-12
                )


class TestTranspose:
    def test_simple(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [0.0, 0.0]]))
        op = normalize(a, (0, 1), 2)
        t = transpose_operator(op)
        np.testing.assert_allclose(t.matrix.toarray(), [[0, 0], [1, 0]])
        np.testing.assert_array_equal(t.type_mask, op.type_mask.T)
        assert t.kind == "transposed_normalized_adjacency"

    def test_symmetric_matrix_unchanged(self):
        a = sp.csr_array(np.array([[0.0, 1.0], [1.0, 0.0]]))
        op = normalize(a, (0, 0), 1)
        t = transpose_operator(op)
        np.testing.assert_allclose(t.matrix.toarray(), op.matrix.toarray())

    def test_double_transpose_is_identity(self):
        rng = np.random.default_rng(7)
        graph = random_hetero_graph(rng, random_signatures(rng, 2))
        for op in graph.shift_operators():
            back = transpose_operator(transpose_operator(op))
            assert back is op
            np.testing.assert_array_equal(
                back.matrix.toarray(), op.matrix.toarray()
            )


class TestInvariants:
    def test_row_sums_zero_or_one(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            graph = random_hetero_graph(rng, random_signatures(rng, 3))
            for op in graph.shift_operators():
                sums = np.asarray(op.matrix.sum(axis=1)).ravel()
                near_zero = np.abs(sums) <= 1e-12
                near_one = np.abs(sums - 1.0) <= 1e-12
                assert np.all(near_zero | near_one)

    def test_nonzeros_respect_type_mask(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            graph = random_hetero_graph(rng, random_signatures(rng, 4))
            assert graph.n <= 50
            for op in graph.shift_operators():
                check_shift_operator(op, graph.node_type)
            for op in graph.shift_operators(LAPLACIAN):
                check_shift_operator(op, graph.node_type)
