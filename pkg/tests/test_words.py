import itertools

import numpy as np
import pytest

from pshgcn.words import (
    ExpandedFilter,
    SosFilter,
    TermBudget,
    canonical_order,
    count_all_words,
    enumerate_words,
    expand_pairs,
    expand_sos,
    extended_masks,
    mask_product,
    parse_word,
    serialize_word,
    term_budget,
    transpose_reverse,
    word_mask,
)

from conftest import random_hetero_graph, random_signatures


def brute_force_count(num_ops, order):
    return sum(1 for k in range(order + 1) for _ in itertools.product(range(num_ops), repeat=k))


def single_cell_masks(signatures, num_types):
    masks = []
    for s, t in signatures:
        m = np.zeros((num_types, num_types), dtype=bool)
        m[s, t] = True
        masks.append(m)
    return masks


class TestCountAllWords:
    def test_two_ops_order_two_is_seven(self):
        assert count_all_words(2, 2) == 7

    def test_single_op(self):
        assert count_all_words(1, 3) == 4

    def test_three_ops_order_two(self):
        # 1 + 3 + 9 words, confirmed by explicit enumeration.
        assert count_all_words(3, 2) == 13
        assert count_all_words(3, 2) == brute_force_count(3, 2)

    @pytest.mark.parametrize("num_ops", range(1, 6))
    @pytest.mark.parametrize("order", range(0, 6))
    def test_matches_enumeration(self, num_ops, order):
        assert count_all_words(num_ops, order) == brute_force_count(num_ops, order)

    def test_overflow_is_explicit(self):
        with pytest.raises(OverflowError):
            count_all_words(3, 50)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            count_all_words(0, 2)
        with pytest.raises(ValueError):
            count_all_words(2, -1)


class TestEnumerateWords:
    def test_all_true_masks_keep_everything(self):
        masks = [np.ones((2, 2), bool), np.ones((2, 2), bool)]
        words = enumerate_words(masks, 2)
        assert len(words) == 7

    def test_bipartite_pruning(self):
        # Operators author->paper (0) and paper->author (1): squares of a
        # single operator are structurally zero.
        masks = single_cell_masks([(0, 1), (1, 0)], 2)
        words = enumerate_words(masks, 2)
        assert words == [(), (0,), (1,), (0, 1), (1, 0)]

    def test_pruned_words_numerically_zero(self):
        # Dense multiplication oracle on random graphs honoring the
        # signatures: a pruned word's product must be exactly zero.
        sigs = [(0, 1), (1, 0), (1, 2)]
        masks = single_cell_masks(sigs, 3)
        retained = set(enumerate_words(masks, 2))
        all_words = [
            w
            for k in range(3)
            for w in itertools.product(range(len(sigs)), repeat=k)
        ]
        pruned = [w for w in all_words if w not in retained]
        assert pruned
        rng = np.random.default_rng(5)
        for _ in range(10):
            graph = random_hetero_graph(rng, sigs)
            assert graph.n <= 30
            dense = [op.matrix.toarray() for op in graph.shift_operators()]
            for word in pruned:
                prod = np.eye(graph.n)
                for op in word:
                    prod = prod @ dense[op]
                assert np.all(prod == 0.0)

    def test_retained_bounded_by_total(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            sigs = random_signatures(rng, int(rng.integers(1, 5)))
            masks = single_cell_masks(sigs, 3)
            k = int(rng.integers(0, 4))
            assert len(enumerate_words(masks, k)) <= count_all_words(len(sigs), k)

    def test_equality_for_all_true(self):
        masks = [np.ones((3, 3), bool)] * 3
        assert len(enumerate_words(masks, 3)) == count_all_words(3, 3)

    def test_mask_dim_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            enumerate_words([np.ones((2, 2), bool), np.ones((3, 3), bool)], 2)

    def test_canonical_ordering(self):
        masks = [np.ones((1, 1), bool)] * 2
        words = enumerate_words(masks, 2)
        assert words == canonical_order(words)
        assert words == [(), (0,), (1,), (0, 0), (0, 1), (1, 0), (1, 1)]


class TestExpandSos:
    def test_identity_plus_one_op(self):
        w0, w1 = 0.7, -0.3
        filt = SosFilter(num_ops=1, order=1, weights={(): w0, (0,): w1})
        expanded = expand_sos(filt)
        assert expanded.terms == pytest.approx(
            {(): w0 * w0, (0,): w0 * w1, (1,): w0 * w1, (1, 0): w1 * w1}
        )

    def test_identity_filter(self):
        filt = SosFilter(num_ops=2, order=1, weights={(): 1.0, (0,): 0.0, (1,): 0.0})
        assert expand_sos(filt).terms == {(): 1.0}

    def test_zero_filter(self):
        filt = SosFilter(num_ops=2, order=1, weights={(): 0.0, (0,): 0.0})
        assert expand_sos(filt).terms == {}

    def test_empty_word_coefficient_is_square(self):
        rng = np.random.default_rng(2)
        masks = [np.ones((1, 1), bool)] * 2
        for _ in range(5):
            words = enumerate_words(masks, 2)
            weights = {w: float(rng.standard_normal()) for w in words}
            filt = SosFilter(num_ops=2, order=2, weights=weights)
            expanded = expand_sos(filt)
            assert expanded.terms[()] == weights[()] ** 2

    def test_structurally_zero_terms_dropped(self):
        masks = single_cell_masks([(0, 1), (1, 0)], 2)
        filt = SosFilter(num_ops=2, order=1, weights={(): 1.0, (0,): 1.0, (1,): 1.0})
        expanded = expand_sos(filt, masks)
        # transpose_reverse((0,)) + (1,) = (2, 1) composes masks
        # (1, 0) @ (1, 0): structurally zero, must be dropped.
        assert (2, 1) not in expanded.terms
        ext = extended_masks(masks)
        for word in expanded.terms:
            assert word_mask(ext, word).any()

    def test_expansion_matches_dense_product(self):
        # dense(g)^T dense(g) x == sum of expanded coefficients times word
        # products applied to x, on a random small graph.
        rng = np.random.default_rng(4)
        sigs = [(0, 1), (1, 0), (1, 1)]
        graph = random_hetero_graph(rng, sigs)
        ops = graph.shift_operators()
        masks = [op.type_mask for op in ops]
        words = enumerate_words(masks, 2)
        weights = {w: float(rng.standard_normal()) for w in words}
        filt = SosFilter(num_ops=3, order=2, weights=weights)

        dense = [op.matrix.toarray() for op in ops]
        dense_ext = dense + [d.T for d in dense]
        g = sum(
            w * np.linalg.multi_dot([np.eye(graph.n)] + [dense[o] for o in word])
            if word
            else w * np.eye(graph.n)
            for word, w in weights.items()
        )
        x = rng.standard_normal((graph.n, 2))
        expected = g.T @ (g @ x)

        expanded = expand_sos(filt, masks)
        got = np.zeros_like(x)
        for word, c in expanded.terms.items():
            term = x
            for o in reversed(word):
                term = dense_ext[o] @ term
            got += c * term
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_transpose_reverse(self):
        assert transpose_reverse((0, 1, 2), 3) == (5, 4, 3)
        assert transpose_reverse((), 3) == ()

    def test_expand_pairs_cover_all_products(self):
        words = [(), (0,), (1,), (0, 1)]
        pairs = expand_pairs(words, 2)
        total = sum(len(v) for v in pairs.values())
        assert total == len(words) ** 2
        assert pairs[()] == [((), ())]


class TestSerialization:
    def test_round_trip(self):
        for word in [(), (0,), (3, 1, 2)]:
            assert parse_word(serialize_word(word)) == word

    def test_filter_validation(self):
        with pytest.raises(ValueError, match="longer"):
            SosFilter(num_ops=2, order=1, weights={(0, 1): 1.0})
        with pytest.raises(ValueError, match="operator id"):
            SosFilter(num_ops=2, order=1, weights={(5,): 1.0})
        with pytest.raises(ValueError, match="finite"):
            SosFilter(num_ops=2, order=1, weights={(): float("nan")})


class TestTermBudget:
    def test_counts(self):
        masks = single_cell_masks([(0, 1), (1, 0)], 2)
        budget = term_budget(masks, 2, [10, 4])
        assert budget.total_words == 7
        assert budget.retained_words == 5
        assert budget.max_edges == 10

    def test_invariant(self):
        with pytest.raises(ValueError):
            TermBudget(total_words=3, retained_words=5, max_edges=0)
