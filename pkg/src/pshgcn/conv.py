"""Applying word-polynomial filters to feature matrices.

Two evaluation routes are provided for the SOS convolution y = g^T g x:

* the direct route chains sparse matvecs at full batch, sharing partial
  products between words that end the same way (a suffix trie: the partial
  for word w extends the partial for w[1:] by one matvec, so each distinct
  suffix costs exactly one sparse product);
* the decoupled route precomputes the product of every retained expanded
  word with the raw features once, after which a forward pass is just a
  weighted sum of stored matrices and can be evaluated on any row subset.

Both routes must agree to close to machine precision; the equivalence is
enforced by the verification suite.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NumericError, StoreError
from .graph import ShiftOperator, transpose_operator
from .words import (
    ExpandedFilter,
    SosFilter,
    Word,
    canonical_order,
    enumerate_words,
    extended_masks,
    parse_word,
    serialize_word,
)

STORE_MAGIC = b"PSHG"
STORE_VERSION = 1
_HEADER_FIXED = struct.Struct("<4sHQIH")  # magic, version, n, d, word length


def propagation_plan(words: Sequence[Word]) -> list[tuple[Word, int, Word]]:
    """Evaluation schedule for a set of words: every distinct nonempty
    suffix, shortest first, as (suffix, leading op, remaining suffix).

    The plan length is the exact number of sparse matvecs the direct route
    spends, and is at most (number of words) * (maximum word length).
    """
    suffixes: set[Word] = set()
    for w in words:
        for k in range(len(w)):
            suffixes.add(w[k:])
    return [(w, w[0], w[1:]) for w in canonical_order(suffixes)]


def _apply_polynomial(
    weights: Mapping[Word, float], mats: Sequence, x: np.ndarray
) -> np.ndarray:
    partial: dict[Word, np.ndarray] = {(): x}
    for word, op, rest in propagation_plan(list(weights.keys())):
        partial[word] = mats[op] @ partial[rest]
    out = np.zeros_like(x)
    for word, c in weights.items():
        if c != 0.0:
            out += c * partial[word]
    return out


def _check_input(filt: SosFilter, ops: Sequence[ShiftOperator], x: np.ndarray) -> np.ndarray:
    if len(ops) != filt.num_ops:
        raise ValueError(
            f"filter expects {filt.num_ops} operators, got {len(ops)}"
        )
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = ops[0].n if ops else x.shape[0]
    if x.shape[0] != n:
        raise ValueError(f"features have {x.shape[0]} rows, operators are {n}x{n}")
    if not np.all(np.isfinite(x)):
        raise NumericError("input features contain non-finite values")
    return x


def apply_g(filt: SosFilter, ops: Sequence[ShiftOperator], x: np.ndarray) -> np.ndarray:
    """Apply the square-root polynomial g alone: sum_w weight(w) * (word w) x."""
    x = _check_input(filt, ops, x)
    out = _apply_polynomial(filt.weights, [op.matrix for op in ops], x)
    if not np.all(np.isfinite(out)):
        raise NumericError("polynomial application produced non-finite values")
    return out


def apply_g_transpose(filt: SosFilter, ops: Sequence[ShiftOperator], y: np.ndarray) -> np.ndarray:
    """Apply g^T: every word reversed, every operator transposed."""
    y = _check_input(filt, ops, y)
    mats = [transpose_operator(op).matrix for op in ops]
    weights = {tuple(reversed(w)): c for w, c in filt.weights.items()}
    out = _apply_polynomial(weights, mats, y)
    if not np.all(np.isfinite(out)):
        raise NumericError("polynomial application produced non-finite values")
    return out


def apply_sos(filt: SosFilter, ops: Sequence[ShiftOperator], x: np.ndarray) -> np.ndarray:
    """The positive-semidefinite convolution y = g^T (g x)."""
    return apply_g_transpose(filt, ops, apply_g(filt, ops, x))


def precompute_propagations(
    ops: Sequence[ShiftOperator],
    x: np.ndarray,
    order: int,
    max_words: int | None = None,
) -> dict[Word, np.ndarray]:
    """Product of every retained expanded word (length <= order) with x.

    The alphabet is doubled with the operator transposes, words are pruned
    by the extended masks, and each kept word costs one sparse matvec on
    top of its one-shorter suffix.

    Raises:
        StoreError: if more than max_words words would be retained.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    masks = extended_masks([op.type_mask for op in ops])
    mats = [op.matrix for op in ops] + [transpose_operator(op).matrix for op in ops]
    ewords = enumerate_words(masks, order)
    if max_words is not None and len(ewords) > max_words:
        raise StoreError(
            f"{len(ewords)} retained words exceed the budget of {max_words}"
        )
    store: dict[Word, np.ndarray] = {(): x}
    for w in ewords:
        if w:
            store[w] = mats[w[0]] @ store[w[1:]]
    return store


def decoupled_forward(
    expanded: ExpandedFilter,
    store: Mapping[Word, np.ndarray],
    rows: np.ndarray | Sequence[int] | None = None,
) -> np.ndarray:
    """Weighted sum of precomputed propagations, restricted to rows if given.

    Raises:
        StoreError: if a term of the filter has no stored propagation; the
            message names the missing word.
    """
    try:
        base = store[()]
    except KeyError:
        raise StoreError("propagation store is missing the identity word")
    idx = None if rows is None else np.asarray(rows, dtype=np.int64)
    shape = (base.shape[0] if idx is None else len(idx), base.shape[1])
    out = np.zeros(shape, dtype=np.float64)
    for word, c in expanded.terms.items():
        if word not in store:
            raise StoreError(f"propagation store is missing word [{serialize_word(word)}]")
        mat = store[word]
        out += c * (mat if idx is None else mat[idx])
    return out


def mhgcn_filter(
    betas: Sequence[float],
    adjacency: Sequence[sp.csr_array],
    order: int,
    x: np.ndarray,
) -> np.ndarray:
    """Comparison filter: the order-th power of the beta-weighted adjacency
    sum, applied by repeated matvecs without materializing the power.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if len(betas) != len(adjacency):
        raise ValueError(
            f"{len(betas)} weights for {len(adjacency)} adjacency matrices"
        )
    x = np.asarray(x, dtype=np.float64)
    n = adjacency[0].shape[0] if len(adjacency) else x.shape[0]
    if x.shape[0] != n:
        raise ValueError(f"features have {x.shape[0]} rows, matrices are {n}x{n}")
    out = x
    for _ in range(order):
        acc = np.zeros_like(out)
        for beta, a in zip(betas, adjacency):
            if beta != 0.0:
                acc += beta * (a @ out)
        out = acc
    return out


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_propagations(
    directory: str | Path,
    store: Mapping[Word, np.ndarray],
    num_ops: int,
    order: int,
) -> None:
    """Persist a propagation store: one binary file per word plus an index.

    Each file is a fixed header (magic, version, n, d, word length, word
    ids) followed by the matrix as row-major little-endian float64.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    words = canonical_order(store.keys())
    base = store[words[0]] if words else None
    index: dict[str, str] = {}
    for i, word in enumerate(words):
        mat = np.ascontiguousarray(store[word], dtype=np.float64)
        n, d = mat.shape
        header = _HEADER_FIXED.pack(STORE_MAGIC, STORE_VERSION, n, d, len(word))
        header += struct.pack(f"<{len(word)}H", *word)
        name = f"w{i:06d}.bin"
        _atomic_write(directory / name, header + mat.astype("<f8").tobytes(order="C"))
        index[serialize_word(word)] = name
    meta = {
        "version": STORE_VERSION,
        "num_ops": int(num_ops),
        "order": int(order),
        "n": int(base.shape[0]) if base is not None else 0,
        "d": int(base.shape[1]) if base is not None else 0,
        "words": index,
    }
    _atomic_write(
        directory / "index.json",
        (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode("utf-8"),
    )


def load_propagations(directory: str | Path) -> tuple[dict[Word, np.ndarray], dict]:
    """Read back a propagation store; returns (word -> matrix, metadata)."""
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.is_file():
        raise StoreError(f"no propagation store at {directory} (index.json missing)")
    meta = json.loads(index_path.read_text(encoding="utf-8"))
    if meta.get("version") != STORE_VERSION:
        raise StoreError(f"unsupported store version {meta.get('version')!r}")
    store: dict[Word, np.ndarray] = {}
    for key, name in meta["words"].items():
        word = parse_word(key)
        raw = (directory / name).read_bytes()
        magic, version, n, d, wlen = _HEADER_FIXED.unpack_from(raw, 0)
        if magic != STORE_MAGIC or version != STORE_VERSION:
            raise StoreError(f"{name}: bad magic or version")
        off = _HEADER_FIXED.size
        ids = struct.unpack_from(f"<{wlen}H", raw, off)
        if tuple(ids) != word:
            raise StoreError(f"{name}: header word {ids} disagrees with index key {key!r}")
        off += 2 * wlen
        mat = np.frombuffer(raw, dtype="<f8", offset=off).reshape(n, d).copy()
        store[word] = mat
    return store, meta
