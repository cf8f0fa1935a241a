"""Noncommutative monomial words, structural pruning, and SOS expansion.

A word is an ordered tuple of operator ids; the empty tuple stands for the
identity matrix.  A filter of order K over R operators assigns one real
weight to each word of length at most K.  Order matters everywhere:
word (a, b) means "apply b to the features, then a".

Pruning is symbolic.  Each operator carries a boolean node-type mask, and a
word is kept only when the boolean matrix product of its masks is not
identically false.  Masks over-approximate numeric support, so a pruned
word's numeric product is exactly the zero matrix on every graph honoring
the signatures (pruning is sound); a kept word may still happen to be
numerically zero on a particular graph (completeness is not promised).

Expanding a filter g into the coefficient form of g^T g introduces
transposed operators.  The expanded alphabet doubles: ids in [0, R) are
the original operators and ids in [R, 2R) their transposes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

Word = tuple[int, ...]

_MAX_COUNT = 2**63 - 1


def count_all_words(num_ops: int, order: int) -> int:
    """Number of words of length 0..order over num_ops symbols.

    Equals (R^(K+1) - 1) / (R - 1) for R >= 2 and K + 1 for R = 1.

    Raises:
        OverflowError: if the count exceeds 2^63 - 1.
    """
    if num_ops < 1:
        raise ValueError(f"num_ops must be >= 1, got {num_ops}")
    if order < 0:
        raise ValueError(f"order must be >= 0, got {order}")
    total = sum(num_ops**k for k in range(order + 1))
    if total > _MAX_COUNT:
        raise OverflowError(
            f"word count for R={num_ops}, K={order} exceeds 2^63-1"
        )
    return total


def mask_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Boolean matrix product: reachability composition of two masks."""
    return (a.astype(np.int64) @ b.astype(np.int64)) > 0


def word_mask(masks: Sequence[np.ndarray], word: Word) -> np.ndarray:
    """Composed mask of a word; the empty word gets the identity mask."""
    t = masks[0].shape[0] if masks else 0
    out = np.eye(t, dtype=bool)
    for op in word:
        out = mask_product(out, masks[op])
    return out


def canonical_order(words: Iterable[Word]) -> list[Word]:
    """Length-lexicographic order, the serialization order used everywhere."""
    return sorted(words, key=lambda w: (len(w), w))


def enumerate_words(masks: Sequence[np.ndarray], order: int) -> list[Word]:
    """All words of length <= order whose composed mask is not all-false.

    Extends retained words one operator at a time; this is exhaustive
    because a word with an all-false mask cannot have a retained extension.
    Result is in canonical (length-lexicographic) order.

    Raises:
        ValueError: if the masks are not all square with equal shapes.
    """
    if not masks:
        raise ValueError("at least one operator mask is required")
    t = masks[0].shape[0]
    for i, m in enumerate(masks):
        if m.shape != (t, t):
            raise ValueError(
                f"mask {i} has shape {m.shape}, expected ({t}, {t})"
            )
    retained: list[Word] = [()]
    frontier: list[tuple[Word, np.ndarray]] = [((), np.eye(t, dtype=bool))]
    for _ in range(order):
        nxt: list[tuple[Word, np.ndarray]] = []
        for word, wm in frontier:
            for op in range(len(masks)):
                m = mask_product(wm, masks[op])
                if m.any():
                    nxt.append((word + (op,), m))
        retained.extend(w for w, _ in nxt)
        frontier = nxt
    return retained


@dataclass(frozen=True)
class SosFilter:
    """Weights of the square-root polynomial g, one per retained word.

    Word ids refer to the base alphabet [0, num_ops).  The weight of the
    empty word is the identity coefficient.
    """

    num_ops: int
    order: int
    weights: Mapping[Word, float]

    def __post_init__(self):
        for word, w in self.weights.items():
            if len(word) > self.order:
                raise ValueError(f"word {word} longer than order {self.order}")
            if any(not (0 <= op < self.num_ops) for op in word):
                raise ValueError(f"word {word} uses an operator id outside [0, {self.num_ops})")
            if not np.isfinite(w):
                raise ValueError(f"weight of word {word} is not finite: {w!r}")

    def word_list(self) -> list[Word]:
        return canonical_order(self.weights.keys())


@dataclass(frozen=True)
class ExpandedFilter:
    """Coefficients of the expanded product g^T g.

    Terms are words over the doubled alphabet [0, 2*num_ops): ids >= num_ops
    denote transposed operators.  Lengths run up to 2*order.
    """

    num_ops: int
    order: int
    terms: Mapping[Word, float]

    def word_list(self) -> list[Word]:
        return canonical_order(self.terms.keys())


@dataclass(frozen=True)
class TermBudget:
    """Word counts backing cost estimates for a filter configuration."""

    total_words: int
    retained_words: int
    max_edges: int

    def __post_init__(self):
        if self.retained_words > self.total_words:
            raise ValueError("retained_words cannot exceed total_words")


def term_budget(masks: Sequence[np.ndarray], order: int, edge_counts: Sequence[int]) -> TermBudget:
    return TermBudget(
        total_words=count_all_words(len(masks), order),
        retained_words=len(enumerate_words(masks, order)),
        max_edges=max(edge_counts) if len(edge_counts) else 0,
    )


def transpose_reverse(word: Word, num_ops: int) -> Word:
    """Map (r1, ..., rk) to (rk^T, ..., r1^T) in the doubled alphabet."""
    return tuple(op + num_ops for op in reversed(word))


def extended_masks(masks: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Masks for the doubled alphabet: originals followed by transposes."""
    return list(masks) + [m.T for m in masks]


def expand_sos(filt: SosFilter, masks: Sequence[np.ndarray] | None = None) -> ExpandedFilter:
    """Multiply out g^T g into per-word coefficients.

    Each pair of g-words (u, v) contributes weight(u) * weight(v) to the
    expanded word transpose_reverse(u) + v; coinciding expanded words merge
    by coefficient addition.  When masks are given, expanded words whose
    composed mask (over the doubled alphabet) is all-false are dropped;
    their numeric product is exactly zero, so dropping them is lossless.
    """
    ext = extended_masks(masks) if masks is not None else None
    terms: dict[Word, float] = {}
    for u, wu in filt.weights.items():
        left = transpose_reverse(u, filt.num_ops)
        for v, wv in filt.weights.items():
            c = wu * wv
            if c == 0.0:
                continue
            word = left + v
            if ext is not None and not word_mask(ext, word).any():
                continue
            terms[word] = terms.get(word, 0.0) + c
    return ExpandedFilter(num_ops=filt.num_ops, order=2 * filt.order, terms=terms)


def expand_pairs(words: Sequence[Word], num_ops: int) -> dict[Word, list[tuple[Word, Word]]]:
    """Group g-word pairs by the expanded word they contribute to.

    Useful when the expanded coefficients must stay differentiable in the
    g weights: each expanded coefficient is the sum of weight products over
    its pair list.
    """
    out: dict[Word, list[tuple[Word, Word]]] = {}
    for u in words:
        left = transpose_reverse(u, num_ops)
        for v in words:
            out.setdefault(left + v, []).append((u, v))
    return out


def serialize_word(word: Word) -> str:
    """Canonical text key: comma-joined ids, empty string for the identity."""
    return ",".join(str(op) for op in word)


def parse_word(text: str) -> Word:
    if text == "":
        return ()
    return tuple(int(part) for part in text.split(","))
