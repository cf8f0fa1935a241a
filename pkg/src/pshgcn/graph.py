"""Heterogeneous graphs and their per-edge-type shift operators.

A heterogeneous graph is stored as one sparse adjacency matrix per edge
type, each covering the full node set but only populated inside the block
allowed by that edge type's (source type, target type) signature.  Shift
operators are derived from these matrices: the out-degree row-normalized
adjacency, its Laplacian, and their transposes.  Each operator carries a
boolean node-type mask that over-approximates where its nonzero blocks can
live; downstream code uses these masks to prune structurally-zero operator
products without looking at numbers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import GraphError

NORMALIZED_ADJACENCY = "normalized_adjacency"
LAPLACIAN = "laplacian"

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class HeteroGraph:
    """Immutable container: node typing plus one adjacency per edge type.

    Attributes:
        n: number of nodes.
        node_type: (n,) int array, values in [0, num_node_types).
        num_node_types: number of declared node types.
        signatures: per edge type, the (src_type, dst_type) pair its edges
            must respect.
        adjacency: per edge type, an n-by-n CSR matrix with nonnegative
            finite weights; entry (i, j) != 0 means an edge i -> j.
    """

    n: int
    node_type: np.ndarray
    num_node_types: int
    signatures: tuple[tuple[int, int], ...]
    adjacency: tuple[sp.csr_array, ...]

    @property
    def num_edge_types(self) -> int:
        return len(self.signatures)

    def shift_operators(self, kind: str = NORMALIZED_ADJACENCY) -> list["ShiftOperator"]:
        """Build one shift operator per edge type (all of the same kind)."""
        ops = [
            normalize(self.adjacency[r], self.signatures[r], self.num_node_types)
            for r in range(self.num_edge_types)
        ]
        if kind == NORMALIZED_ADJACENCY:
            return ops
        if kind == LAPLACIAN:
            return [laplacian(op) for op in ops]
        raise ValueError(f"unknown shift operator kind: {kind!r}")


@dataclass(eq=False)
class ShiftOperator:
    """A sparse n-by-n operator plus structural typing information.

    type_mask[s, t] is True iff the operator may have a nonzero entry from
    a node of type s (row) to a node of type t (column).  The transpose is
    materialized lazily and cached, since it is needed on every backward
    sweep of the convolution.
    """

    matrix: sp.csr_array
    kind: str
    type_mask: np.ndarray
    _transpose: "ShiftOperator | None" = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def build_subgraphs(
    edge_list: Sequence[tuple],
    n: int,
    node_type: Sequence[int],
    signatures: Sequence[tuple[int, int]],
) -> HeteroGraph:
    """Split a typed edge list into one adjacency matrix per edge type.

    Edges are (src, dst, edge_type) or (src, dst, edge_type, weight)
    tuples; duplicate (src, dst) pairs within one edge type are merged by
    summing their weights.  Every edge must respect the (src_type,
    dst_type) signature declared for its edge type.

    Raises:
        GraphError: on an out-of-range node id, an unknown edge type, a
            signature violation (the offending edge is named), or a
            negative / non-finite weight.
    """
    node_type = np.asarray(node_type, dtype=np.int64)
    if node_type.shape != (n,):
        raise GraphError(f"node_type must have shape ({n},), got {node_type.shape}")
    num_types = int(node_type.max()) + 1 if n else 0
    for s, t in signatures:
        num_types = max(num_types, s + 1, t + 1)

    rows: list[list[int]] = [[] for _ in signatures]
    cols: list[list[int]] = [[] for _ in signatures]
    vals: list[list[float]] = [[] for _ in signatures]
    for edge in edge_list:
        if len(edge) == 3:
            src, dst, etype = edge
            w = 1.0
        elif len(edge) == 4:
            src, dst, etype, w = edge
        else:
            raise GraphError(f"edge tuple must have 3 or 4 entries, got {edge!r}")
        if not (0 <= src < n and 0 <= dst < n):
            raise GraphError(f"edge {(src, dst, etype)} references a node outside [0, {n})")
        if not (0 <= etype < len(signatures)):
            raise GraphError(f"edge {(src, dst, etype)} has unknown edge type {etype}")
        w = float(w)
        if not np.isfinite(w) or w < 0:
            raise GraphError(f"edge {(src, dst, etype)} has invalid weight {w}")
        s_exp, t_exp = signatures[etype]
        if node_type[src] != s_exp or node_type[dst] != t_exp:
            raise GraphError(
                f"edge {(src, dst, etype)} violates signature "
                f"({s_exp} -> {t_exp}): node types are "
                f"({int(node_type[src])} -> {int(node_type[dst])})"
            )
        rows[etype].append(src)
        cols[etype].append(dst)
        vals[etype].append(w)

    mats = []
    for r in range(len(signatures)):
        coo = sp.coo_array(
            (np.asarray(vals[r], dtype=np.float64), (rows[r], cols[r])), shape=(n, n)
        )
        csr = coo.tocsr()  # tocsr sums duplicate entries
        csr.sum_duplicates()
        csr.sort_indices()
        mats.append(csr)

    return HeteroGraph(
        n=n,
        node_type=node_type,
        num_node_types=num_types,
        signatures=tuple((int(s), int(t)) for s, t in signatures),
        adjacency=tuple(mats),
    )


def normalize(
    adj: sp.csr_array, signature: tuple[int, int], num_node_types: int
) -> ShiftOperator:
    """Out-degree row normalization: each nonzero row is divided by its sum.

    Rows with zero out-degree stay all-zero (no propagation out of sinks),
    which keeps the matrix row-substochastic instead of introducing NaNs.
    """
    adj = sp.csr_array(adj)
    if adj.nnz and adj.data.min() < 0:
        raise GraphError("adjacency matrix has negative entries")
    if adj.nnz and not np.all(np.isfinite(adj.data)):
        raise GraphError("adjacency matrix has non-finite entries")
    row_sum = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, row_sum, out=np.zeros_like(row_sum), where=row_sum > 0)
    mat = sp.csr_array(sp.diags_array(inv) @ adj)
    mat.sort_indices()
    mask = np.zeros((num_node_types, num_node_types), dtype=bool)
    s, t = signature
    mask[s, t] = True
    return ShiftOperator(matrix=mat, kind=NORMALIZED_ADJACENCY, type_mask=mask)


def laplacian(op: ShiftOperator) -> ShiftOperator:
    """I minus a row-normalized adjacency.

    The identity component makes every diagonal type block potentially
    nonzero, so the mask gains a full diagonal.
    """
    if op.kind != NORMALIZED_ADJACENCY:
        raise ValueError(f"laplacian requires a {NORMALIZED_ADJACENCY} operator, got {op.kind!r}")
    n = op.n
    mat = sp.csr_array(sp.eye_array(n, format="csr") - op.matrix)
    mat.sort_indices()
    mask = op.type_mask.copy()
    np.fill_diagonal(mask, True)
    return ShiftOperator(matrix=mat, kind=LAPLACIAN, type_mask=mask)


def transpose_operator(op: ShiftOperator) -> ShiftOperator:
    """Transpose of an operator, materialized once and cached.

    Transposing twice returns the original object, so round trips are
    exact by construction.
    """
    if op._transpose is None:
        mat = sp.csr_array(op.matrix.T)
        mat.sort_indices()
        if op.kind.startswith("transposed_"):
            kind = op.kind[len("transposed_"):]
        else:
            kind = "transposed_" + op.kind
        t = ShiftOperator(matrix=mat, kind=kind, type_mask=op.type_mask.T.copy())
        t._transpose = op
        op._transpose = t
    return op._transpose


def check_shift_operator(op: ShiftOperator, node_type: np.ndarray) -> None:
    """Validate operator invariants; raises GraphError on violation.

    For row-normalized adjacencies every row sum must be 0 or 1 (within
    1e-12), and every stored nonzero must fall in a block allowed by the
    type mask.
    """
    if op.kind == NORMALIZED_ADJACENCY:
        row_sum = np.asarray(op.matrix.sum(axis=1)).ravel()
        bad = ~(
            (np.abs(row_sum) <= _ROW_SUM_TOL) | (np.abs(row_sum - 1.0) <= _ROW_SUM_TOL)
        )
        if bad.any():
            i = int(np.argmax(bad))
            raise GraphError(f"row {i} of normalized adjacency sums to {row_sum[i]!r}")
    coo = sp.coo_array(op.matrix)
    nz = coo.data != 0
    src_types = np.asarray(node_type)[coo.row[nz]]
    dst_types = np.asarray(node_type)[coo.col[nz]]
    ok = op.type_mask[src_types, dst_types]
    if not np.all(ok):
        k = int(np.argmin(ok))
        raise GraphError(
            f"nonzero entry ({coo.row[nz][k]}, {coo.col[nz][k]}) falls outside "
            f"the type mask (types {src_types[k]} -> {dst_types[k]})"
        )
