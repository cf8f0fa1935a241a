import numpy as np
import pytest

from pshgcn.conv import apply_sos
from pshgcn.errors import NumericError
from pshgcn.verify import (
    ACM_STYLE_SIGNATURES,
    DBLP_STYLE_SIGNATURES,
    OptimizationEnergy,
    check_psd,
    decoupling_equivalence,
    dense_filter,
    lemma1_convolution,
    pruning_soundness,
    random_filter,
    random_instance,
    run_verification,
)
from pshgcn.words import SosFilter, enumerate_words

from conftest import random_signatures


class TestDenseFilter:
    def test_identity(self, bipartite_ops):
        _, ops = bipartite_ops
        filt = SosFilter(2, 1, {(): 1.0})
        np.testing.assert_allclose(dense_filter(filt, ops), np.eye(4))

    def test_single_op_hand_product(self):
        from pshgcn.graph import build_subgraphs

        graph = build_subgraphs([(0, 1, 0)], 2, [0, 1], [(0, 1)])
        ops = graph.shift_operators()
        filt = SosFilter(1, 1, {(0,): 1.0})
        np.testing.assert_allclose(dense_filter(filt, ops), [[0, 0], [0, 1]])

    def test_agrees_with_sparse_engine(self):
        rng = np.random.default_rng(61)
        for _ in range(50):
            sigs = random_signatures(rng, int(rng.integers(1, 4)))
            graph = random_instance(sigs, rng)
            ops = graph.shift_operators()
            filt = random_filter(len(ops), 2, [op.type_mask for op in ops], rng)
            x = rng.standard_normal((graph.n, 2))
            h = dense_filter(filt, ops)
            np.testing.assert_allclose(h @ x, apply_sos(filt, ops, x), atol=1e-10)

    def test_materialization_is_symmetric(self):
        rng = np.random.default_rng(67)
        for _ in range(10):
            sigs = random_signatures(rng, 3)
            graph = random_instance(sigs, rng)
            assert graph.n <= 50
            ops = graph.shift_operators()
            filt = random_filter(3, 2, [op.type_mask for op in ops], rng)
            h = dense_filter(filt, ops)
            assert np.abs(h - h.T).max() <= 1e-10

    def test_cap(self):
        from pshgcn.graph import build_subgraphs

        n = 2001
        graph = build_subgraphs([], n, [0] * n, [(0, 0)])
        ops = graph.shift_operators()
        with pytest.raises(ValueError, match="capped"):
            dense_filter(SosFilter(1, 1, {(): 1.0}), ops)


class TestCheckPsd:
    def test_identity(self):
        ok, smallest = check_psd(np.eye(3))
        assert ok and smallest == pytest.approx(1.0)

    def test_indefinite_diagonal(self):
        ok, smallest = check_psd(np.diag([1.0, -0.1]))
        assert not ok
        assert smallest == pytest.approx(-0.1)

    def test_random_squares_are_psd(self):
        rng = np.random.default_rng(71)
        for _ in range(100):
            sigs = random_signatures(rng, int(rng.integers(1, 4)))
            graph = random_instance(sigs, rng)
            ops = graph.shift_operators()
            filt = random_filter(len(ops), int(rng.integers(1, 4)),
                                 [op.type_mask for op in ops], rng)
            h = dense_filter(filt, ops)
            ok, _ = check_psd(h, tol=1e-8 * max(np.abs(h).max(), 1e-30))
            assert ok

    def test_nonsymmetric_uses_quadratic_form(self):
        # Antisymmetric part does not affect the quadratic form.
        h = np.eye(2) + np.array([[0.0, 5.0], [-5.0, 0.0]])
        ok, smallest = check_psd(h)
        assert ok and smallest == pytest.approx(1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(NumericError):
            check_psd(np.array([[np.nan, 0.0], [0.0, 1.0]]))


class TestLemma1:
    def test_zero_energy(self):
        h = lemma1_convolution(OptimizationEnergy(gamma=np.zeros((3, 3)), alpha=0.5))
        np.testing.assert_allclose(h, np.eye(3), atol=1e-12)

    def test_identity_energy(self):
        h = lemma1_convolution(OptimizationEnergy(gamma=np.eye(3), alpha=0.5))
        np.testing.assert_allclose(h, 0.5 * np.eye(3), atol=1e-12)

    def test_random_psd_inputs_give_psd_solution_operator(self):
        rng = np.random.default_rng(73)
        n = 25
        for trial in range(20):
            m = rng.standard_normal((n, n))
            gamma = m.T @ m
            if trial % 2 == 1:
                anti = rng.standard_normal((n, n))
                gamma = gamma + (anti - anti.T)
            for alpha in (0.1, 0.5, 0.9):
                h = lemma1_convolution(OptimizationEnergy(gamma=gamma, alpha=alpha))
                ok, smallest = check_psd(h)
                assert ok, f"alpha={alpha}, min eig {smallest}"

    def test_rejects_indefinite_energy(self):
        with pytest.raises(ValueError, match="not positive semidefinite"):
            lemma1_convolution(OptimizationEnergy(gamma=-np.eye(4), alpha=0.5))

    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            OptimizationEnergy(gamma=np.eye(2), alpha=0.0)
        with pytest.raises(ValueError):
            OptimizationEnergy(gamma=np.eye(2), alpha=1.0)


class TestPruningSoundness:
    def test_bipartite_schema(self):
        report = pruning_soundness([(0, 1), (1, 0)], order=2, trials=20)
        assert report.pruned_words == [(0, 0), (1, 1)]
        assert report.passed
        assert report.checks == 40

    def test_all_true_masks_vacuous(self):
        report = pruning_soundness([(0, 0)], order=2, trials=3)
        assert report.pruned_words == []
        assert report.passed

    def test_closed_single_type_order_three(self):
        report = pruning_soundness([(0, 0)], order=3, trials=2)
        assert report.pruned_words == []
        assert report.passed

    def test_academic_schemas(self):
        for sigs in (DBLP_STYLE_SIGNATURES, ACM_STYLE_SIGNATURES):
            report = pruning_soundness(sigs, order=2, trials=5)
            assert report.passed
            assert report.pruned_words

    def test_trials_validated(self):
        with pytest.raises(ValueError):
            pruning_soundness([(0, 1)], order=1, trials=0)


class TestDecouplingEquivalence:
    def test_identity_filter_exact(self, bipartite_ops):
        _, ops = bipartite_ops
        filt = SosFilter(2, 1, {(): 1.0})
        x = np.arange(8.0).reshape(4, 2)
        assert decoupling_equivalence(ops, filt, x) == 0.0

    def test_zero_filter_exact(self, bipartite_ops):
        _, ops = bipartite_ops
        filt = SosFilter(2, 1, {(): 0.0})
        x = np.arange(8.0).reshape(4, 2)
        assert decoupling_equivalence(ops, filt, x) == 0.0

    def test_random_instances_tight(self):
        rng = np.random.default_rng(79)
        for _ in range(10):
            num_ops = int(rng.integers(1, 5))
            sigs = random_signatures(rng, num_ops)
            graph = random_instance(sigs, rng, nodes_per_type=(10, 33))
            assert graph.n <= 100
            ops = graph.shift_operators()
            filt = random_filter(num_ops, 3, [op.type_mask for op in ops], rng)
            x = rng.standard_normal((graph.n, 4))
            assert decoupling_equivalence(ops, filt, x) <= 1e-10


class TestRunVerification:
    def test_quick_suite_passes(self):
        report = run_verification(seed=0, quick=True)
        assert report["passed"]
        names = {c["name"] for c in report["checks"]}
        assert {
            "sos_output_psd",
            "solution_operator_psd",
            "pruning_soundness_dblp_style",
            "pruning_soundness_acm_style",
            "decoupling_equivalence",
            "dense_oracle_crosscheck",
        } <= names
