"""Independent desk-scale oracles for the mathematical guarantees.

Everything here is deliberately implemented differently from the
production path: filters are materialized as dense matrices with
per-word left-to-right products (no partial sharing), positive
semidefiniteness is checked through the spectrum of the symmetric part,
and pruning is attacked with brute-force dense products on random graphs.
Agreement between these oracles and the sparse engine is what makes the
engine's tests meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conv import apply_sos, decoupled_forward, precompute_propagations
from .errors import NumericError
from .graph import HeteroGraph, ShiftOperator, build_subgraphs
from .words import SosFilter, Word, canonical_order, enumerate_words, expand_sos

DENSE_CAP = 2000

# Signature sets mirroring common academic-graph schemas; node types are
# 0=author, 1=paper, 2=term, 3=venue for the first, and 0=paper, 1=author,
# 2=subject, 3=term for the second.
DBLP_STYLE_SIGNATURES = ((0, 1), (1, 0), (1, 2), (2, 1), (1, 3), (3, 1))
ACM_STYLE_SIGNATURES = ((0, 1), (1, 0), (0, 2), (2, 0), (0, 0), (0, 0), (0, 3), (3, 0))


def dense_filter(filt: SosFilter, ops: Sequence[ShiftOperator]) -> np.ndarray:
    """Materialize g^T g as a dense matrix by explicit per-word products.

    This is the reference oracle for the sparse convolution; n is capped
    because the cost is cubic.
    """
    n = ops[0].n if ops else 0
    if n > DENSE_CAP:
        raise ValueError(f"dense materialization capped at n={DENSE_CAP}, got {n}")
    mats = [op.matrix.toarray() for op in ops]
    g = np.zeros((n, n))
    for word, weight in filt.weights.items():
        if weight == 0.0:
            continue
        term = np.eye(n)
        for op in word:
            term = term @ mats[op]
        g += weight * term
    return g.T @ g


def check_psd(h: np.ndarray, tol: float | None = None) -> tuple[bool, float]:
    """Quadratic-form PSD test via the spectrum of the symmetric part.

    Works for nonsymmetric h because x' h x = x' ((h + h') / 2) x.  The
    default tolerance scales with the largest entry magnitude.

    Returns:
        (is_psd, smallest eigenvalue of the symmetric part).
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise ValueError(f"matrix must be square, got shape {h.shape}")
    if not np.all(np.isfinite(h)):
        raise NumericError("matrix has non-finite entries")
    if tol is None:
        tol = 1e-8 * (np.abs(h).max() if h.size else 0.0)
    sym = (h + h.T) / 2.0
    try:
        eigs = np.linalg.eigvalsh(sym)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigensolver failed: {exc}") from exc
    smallest = float(eigs[0]) if eigs.size else 0.0
    return smallest >= -tol, smallest


@dataclass(frozen=True)
class OptimizationEnergy:
    """A propagation-rate matrix plus the trade-off weight of the fitting
    term in the quadratic signal objective."""

    gamma: np.ndarray
    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie strictly in (0, 1), got {self.alpha}")
        if not np.all(np.isfinite(self.gamma)):
            raise ValueError("gamma has non-finite entries")


def lemma1_convolution(energy: OptimizationEnergy, sample_vectors: int = 32,
                       rng: np.random.Generator | None = None) -> np.ndarray:
    """Closed-form solution operator alpha * (alpha I + (1-alpha) gamma)^-1.

    Requires the quadratic form of gamma to be nonnegative, which is
    spot-checked on random vectors; under that assumption the system is
    uniformly well conditioned (its quadratic form is at least alpha).
    """
    gamma = np.asarray(energy.gamma, dtype=np.float64)
    n = gamma.shape[0]
    rng = rng or np.random.default_rng(0)
    scale = max(np.abs(gamma).max(), 1.0)
    for _ in range(sample_vectors):
        x = rng.standard_normal(n)
        q = float(x @ gamma @ x)
        if q < -1e-10 * scale * float(x @ x):
            raise ValueError(
                f"gamma is not positive semidefinite (sampled quadratic form {q})"
            )
    a = energy.alpha
    system = a * np.eye(n) + (1.0 - a) * gamma
    return a * np.linalg.solve(system, np.eye(n))


def random_instance(
    signatures: Sequence[tuple[int, int]],
    rng: np.random.Generator,
    nodes_per_type: tuple[int, int] = (3, 8),
    edge_prob: float = 0.45,
) -> HeteroGraph:
    """Random heterogeneous graph honoring the given signatures."""
    num_types = max(max(s, t) for s, t in signatures) + 1
    sizes = rng.integers(nodes_per_type[0], nodes_per_type[1] + 1, num_types)
    node_type = np.repeat(np.arange(num_types), sizes)
    n = int(node_type.size)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edges = []
    for etype, (s, t) in enumerate(signatures):
        for i in range(offsets[s], offsets[s + 1]):
            for j in range(offsets[t], offsets[t + 1]):
                if i != j and rng.random() < edge_prob:
                    edges.append((int(i), int(j), etype))
    return build_subgraphs(edges, n, node_type, signatures)


def random_filter(
    num_ops: int,
    order: int,
    masks: Sequence[np.ndarray],
    rng: np.random.Generator,
) -> SosFilter:
    words = enumerate_words(masks, order)
    weights = {w: float(rng.uniform(-1.0, 1.0)) for w in words}
    return SosFilter(num_ops=num_ops, order=order, weights=weights)


@dataclass
class PruningReport:
    signatures: tuple[tuple[int, int], ...]
    order: int
    trials: int
    pruned_words: list[Word]
    checks: int = 0
    counterexamples: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples


def pruning_soundness(
    signatures: Sequence[tuple[int, int]],
    order: int,
    trials: int,
    seed: int = 0,
) -> PruningReport:
    """Check that every structurally pruned word is numerically zero.

    For each random graph honoring the signatures and each pruned word,
    the dense product of the word's operator matrices must be exactly the
    zero matrix.  Any nonzero product is reported as a counterexample with
    the graph seed.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    signatures = tuple((int(s), int(t)) for s, t in signatures)
    num_types = max(max(s, t) for s, t in signatures) + 1
    masks = []
    for s, t in signatures:
        m = np.zeros((num_types, num_types), dtype=bool)
        m[s, t] = True
        masks.append(m)
    retained = set(enumerate_words(masks, order))
    all_words: list[Word] = [()]
    frontier: list[Word] = [()]
    for _ in range(order):
        frontier = [w + (r,) for w in frontier for r in range(len(signatures))]
        all_words.extend(frontier)
    pruned = [w for w in all_words if w not in retained]

    report = PruningReport(
        signatures=signatures, order=order, trials=trials,
        pruned_words=canonical_order(pruned),
    )
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        graph = random_instance(signatures, rng)
        dense = [op.matrix.toarray() for op in graph.shift_operators()]
        for word in report.pruned_words:
            prod = np.eye(graph.n)
            for op in word:
                prod = prod @ dense[op]
            report.checks += 1
            if np.any(prod != 0.0):
                report.counterexamples.append(
                    {"word": list(word), "trial": trial, "max_abs": float(np.abs(prod).max())}
                )
    return report


def decoupling_equivalence(
    ops: Sequence[ShiftOperator], filt: SosFilter, x: np.ndarray
) -> float:
    """Max-abs difference between the direct and precomputed SOS routes."""
    n = ops[0].n if ops else np.asarray(x).shape[0]
    if n > 500:
        raise ValueError(f"equivalence check capped at n=500, got {n}")
    direct = apply_sos(filt, ops, x)
    masks = [op.type_mask for op in ops]
    expanded = expand_sos(filt, masks)
    store = precompute_propagations(ops, x, order=2 * filt.order)
    routed = decoupled_forward(expanded, store)
    return float(np.abs(direct - routed).max())


def run_verification(seed: int = 0, trials: int = 100, quick: bool = False) -> dict:
    """Run the whole oracle suite and return a machine-readable report.

    Each entry records the number of trials, the worst-case statistic, and
    whether the property held in every trial.
    """
    t_main = 20 if quick else trials
    checks: list[dict] = []

    # Positive semidefiniteness of g^T g on random graphs and filters.
    worst = np.inf
    ok = True
    for trial in range(t_main):
        rng = np.random.default_rng([seed, 1, trial])
        num_ops = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        sigs = [
            (int(rng.integers(0, 3)), int(rng.integers(0, 3))) for _ in range(num_ops)
        ]
        graph = random_instance(sigs, rng, nodes_per_type=(5, 20))
        ops = graph.shift_operators()
        filt = random_filter(num_ops, k, [op.type_mask for op in ops], rng)
        h = dense_filter(filt, ops)
        hmax = np.abs(h).max() if h.size else 0.0
        passed, smallest = check_psd(h, tol=1e-8 * max(hmax, 1e-30))
        scaled = smallest / max(hmax, 1e-30)
        worst = min(worst, scaled)
        ok = ok and passed
    checks.append(
        {"name": "sos_output_psd", "trials": t_main, "passed": bool(ok),
         "worst_min_eig_scaled": float(worst)}
    )

    # Solution operator of the quadratic objective stays PSD for PSD energies.
    worst = np.inf
    ok = True
    n = 25
    count = 0
    for trial in range(t_main):
        rng = np.random.default_rng([seed, 2, trial])
        m = rng.standard_normal((n, n))
        gamma = m.T @ m
        if trial % 2 == 1:
            anti = rng.standard_normal((n, n))
            gamma = gamma + (anti - anti.T)  # quadratic form unchanged
        for alpha in (0.1, 0.3, 0.5, 0.7, 0.9):
            h = lemma1_convolution(OptimizationEnergy(gamma=gamma, alpha=alpha), rng=rng)
            passed, smallest = check_psd(h)
            worst = min(worst, smallest)
            ok = ok and passed
            count += 1
    checks.append(
        {"name": "solution_operator_psd", "trials": count, "passed": bool(ok),
         "worst_min_eig": float(worst)}
    )

    # Structural pruning never removes a numerically nonzero word.
    for name, sigs in (("dblp_style", DBLP_STYLE_SIGNATURES), ("acm_style", ACM_STYLE_SIGNATURES)):
        rep = pruning_soundness(sigs, order=3, trials=5 if quick else 20, seed=seed)
        checks.append(
            {"name": f"pruning_soundness_{name}", "trials": rep.trials,
             "passed": rep.passed, "pruned_words": len(rep.pruned_words),
             "checks": rep.checks, "counterexamples": rep.counterexamples}
        )

    # Direct and decoupled routes agree.
    worst = 0.0
    t_dec = 5 if quick else 20
    for trial in range(t_dec):
        rng = np.random.default_rng([seed, 3, trial])
        num_ops = int(rng.integers(1, 5))
        k = int(rng.integers(1, 4))
        sigs = [
            (int(rng.integers(0, 3)), int(rng.integers(0, 3))) for _ in range(num_ops)
        ]
        graph = random_instance(sigs, rng, nodes_per_type=(5, 30))
        ops = graph.shift_operators()
        filt = random_filter(num_ops, k, [op.type_mask for op in ops], rng)
        x = rng.standard_normal((graph.n, 3))
        worst = max(worst, decoupling_equivalence(ops, filt, x))
    checks.append(
        {"name": "decoupling_equivalence", "trials": t_dec,
         "passed": bool(worst <= 1e-10), "max_abs_diff": float(worst)}
    )

    # The sparse engine agrees with the dense oracle.
    worst = 0.0
    t_cross = 10 if quick else 50
    for trial in range(t_cross):
        rng = np.random.default_rng([seed, 4, trial])
        num_ops = int(rng.integers(1, 4))
        k = int(rng.integers(1, 4))
        sigs = [
            (int(rng.integers(0, 3)), int(rng.integers(0, 3))) for _ in range(num_ops)
        ]
        graph = random_instance(sigs, rng, nodes_per_type=(4, 15))
        ops = graph.shift_operators()
        filt = random_filter(num_ops, k, [op.type_mask for op in ops], rng)
        x = rng.standard_normal((graph.n, 2))
        h = dense_filter(filt, ops)
        diff = np.abs(h @ x - apply_sos(filt, ops, x)).max()
        worst = max(worst, float(diff))
    checks.append(
        {"name": "dense_oracle_crosscheck", "trials": t_cross,
         "passed": bool(worst <= 1e-10), "max_abs_diff": float(worst)}
    )

    return {
        "seed": seed,
        "passed": all(c["passed"] for c in checks),
        "checks": checks,
    }
