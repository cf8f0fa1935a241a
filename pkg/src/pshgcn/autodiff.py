"""Minimal reverse-mode differentiation over float64 arrays.

A Tensor wraps a value, the list of parent tensors it was computed from,
and a closure that routes an output gradient back to those parents.  The
op set is exactly what the model needs: dense affine maps, constant sparse
matvecs, weighted sums against a coefficient vector, elementwise masks,
row gather/scatter, and a fused softmax cross-entropy.  Everything is kept
in float64 so gradient checks against central differences are meaningful.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "name")

    def __init__(self, value, parents=(), backward_fn=None, name=""):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad += g


def parameter(value, name: str = "") -> Tensor:
    return Tensor(value, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def backward(root: Tensor) -> None:
    """Accumulate gradients of root into every reachable tensor.

    root must be scalar; its seed gradient is 1.
    """
    if root.value.shape != ():
        raise ValueError("backward requires a scalar root")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.asarray(1.0)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def add(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        a.accumulate(g)
        b.accumulate(g)

    return Tensor(a.value + b.value, (a, b), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Row-broadcast bias: (n, d) + (d,)."""

    def back(g):
        x.accumulate(g)
        b.accumulate(g.sum(axis=0))

    return Tensor(x.value + b.value, (x, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def back(g):
        a.accumulate(g @ b.value.T)
        b.accumulate(a.value.T @ g)

    return Tensor(a.value @ b.value, (a, b), back)


def spmm(mat, mat_t, x: Tensor) -> Tensor:
    """Constant sparse matrix times tensor; mat_t must be mat transposed."""

    def back(g):
        x.accumulate(mat_t @ g)

    return Tensor(mat @ x.value, (x,), back)


def scale(x: Tensor, c: float) -> Tensor:
    def back(g):
        x.accumulate(c * g)

    return Tensor(c * x.value, (x,), back)


def weighted_sum(coeffs: Tensor, mats: Sequence[Tensor]) -> Tensor:
    """sum_i coeffs[i] * mats[i] for equally-shaped matrix tensors.

    The coefficient gradient is the Frobenius inner product of the output
    gradient with each summand.
    """
    if len(mats) != coeffs.value.shape[0]:
        raise ValueError(f"{coeffs.value.shape[0]} coefficients for {len(mats)} matrices")
    value = np.zeros_like(mats[0].value)
    for c, m in zip(coeffs.value, mats):
        value += c * m.value

    def back(g):
        coeffs.accumulate(np.array([np.sum(g * m.value) for m in mats]))
        for c, m in zip(coeffs.value, mats):
            m.accumulate(c * g)

    return Tensor(value, (coeffs, *mats), back)


def const_weighted_sum(coeffs: Tensor, mats: Sequence[np.ndarray]) -> Tensor:
    """sum_i coeffs[i] * mats[i] with constant (precomputed) matrices."""
    if len(mats) != coeffs.value.shape[0]:
        raise ValueError(f"{coeffs.value.shape[0]} coefficients for {len(mats)} matrices")
    value = np.zeros_like(mats[0])
    for c, m in zip(coeffs.value, mats):
        value += c * m

    def back(g):
        coeffs.accumulate(np.array([np.sum(g * m) for m in mats]))

    return Tensor(value, (coeffs,), back)


def pair_coeffs(w: Tensor, pairs: Sequence[Sequence[tuple[int, int]]]) -> Tensor:
    """Expanded coefficients c[e] = sum over (a, b) in pairs[e] of w[a]*w[b]."""
    wv = w.value
    value = np.array([sum(wv[a] * wv[b] for a, b in plist) for plist in pairs])

    def back(g):
        dw = np.zeros_like(wv)
        for ge, plist in zip(g, pairs):
            for a, b in plist:
                dw[a] += ge * wv[b]
                dw[b] += ge * wv[a]
        w.accumulate(dw)

    return Tensor(value, (w,), back)


def relu(x: Tensor) -> Tensor:
    keep = x.value > 0

    def back(g):
        x.accumulate(g * keep)

    return Tensor(x.value * keep, (x,), back)


def mul_const(x: Tensor, m: np.ndarray) -> Tensor:
    """Elementwise product with a constant mask (dropout, masking)."""

    def back(g):
        x.accumulate(g * m)

    return Tensor(x.value * m, (x,), back)


def take_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(full, idx, g)
        x.accumulate(full)

    return Tensor(x.value[idx], (x,), back)


def scatter_rows(pieces: Sequence[Tensor], index_lists: Sequence[np.ndarray], n: int) -> Tensor:
    """Assemble an (n, d) matrix from row blocks living at given indices."""
    d = pieces[0].value.shape[1]
    value = np.zeros((n, d))
    for piece, idx in zip(pieces, index_lists):
        value[idx] = piece.value

    def back(g):
        for piece, idx in zip(pieces, index_lists):
            piece.accumulate(g[idx])

    return Tensor(value, tuple(pieces), back)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross-entropy of (m, C) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.value
    m = z.shape[0]
    if m == 0:
        raise ValueError("cross-entropy over an empty batch")
    zmax = z.max(axis=1, keepdims=True)
    exp = np.exp(z - zmax)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(total)
    loss = -log_probs[np.arange(m), labels].mean()

    def back(g):
        grad = exp / total
        grad[np.arange(m), labels] -= 1.0
        logits.accumulate((float(g) / m) * grad)

    return Tensor(loss, (logits,), back)


def softmax(z: np.ndarray) -> np.ndarray:
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=1, keepdims=True)
