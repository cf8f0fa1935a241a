"""End-to-end trainable model around the SOS convolution.

The architecture is: optional per-node-type input projection onto a shared
feature space, a feature MLP, the convolution (g^T g, or g alone in the
ablation variant), and an output MLP producing class logits.  Training is
plain full-batch gradient descent with the adaptive moment optimizer, or
minibatch over precomputed propagations (the decoupled route, where both
MLPs run after propagation and only rows of stored matrices are touched).

All parameters live in one ordered dict of autodiff tensors; the ordering
(projections, feature MLP, filter weights in canonical word order, output
MLP) is also the checkpoint blob layout.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .conv import propagation_plan
from .errors import DataError, NumericError, StoreError
from .graph import NORMALIZED_ADJACENCY, ShiftOperator, transpose_operator
from .rng import stream
from .words import (
    Word,
    enumerate_words,
    expand_pairs,
    extended_masks,
    parse_word,
    serialize_word,
    word_mask,
)

CHECKPOINT_MAGIC_VERSION = 1


@dataclass
class TrainConfig:
    """Knobs of a training run; defaults are the package-wide defaults."""

    order: int = 2
    hidden: int = 64
    f_layers: int = 2
    fp_layers: int = 2
    lr_filter: float = 0.01
    lr_mlp: float = 0.01
    weight_decay: float = 5e-4
    epochs: int = 1000
    patience: int = 50
    dropout: float = 0.1
    seed: int = 0
    mode: str = "full"
    batch_size: int = 256
    use_sos: bool = True
    operator: str = NORMALIZED_ADJACENCY

    def validate(self) -> None:
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")
        if self.lr_filter <= 0 or self.lr_mlp <= 0:
            raise ValueError("learning rates must be positive")
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.mode not in ("full", "minibatch"):
            raise ValueError(f"mode must be 'full' or 'minibatch', got {self.mode!r}")
        if self.f_layers < 0 or self.fp_layers < 0:
            raise ValueError("layer counts must be nonnegative")
        if self.epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("epochs, patience, and batch_size must be positive")


@dataclass
class Model:
    """Parameters plus the static shape information needed to run them."""

    num_ops: int
    order: int
    words: list[Word]
    use_sos: bool
    type_dims: dict[int, int] | None
    shared_dim: int
    f_dims: list[int]
    fp_dims: list[int]
    dropout: float
    params: dict[str, ad.Tensor] = field(default_factory=dict)

    def param_values(self) -> dict[str, np.ndarray]:
        return {k: t.value.copy() for k, t in self.params.items()}

    def set_param_values(self, values: Mapping[str, np.ndarray]) -> None:
        for k, t in self.params.items():
            t.value = np.array(values[k], dtype=np.float64)

    def sos_weights(self) -> dict[Word, float]:
        w = self.params["w"].value
        return {word: float(w[i]) for i, word in enumerate(self.words)}


def _mlp_chain(in_dim: int, hidden: int, out_dim: int, layers: int) -> list[int]:
    if layers == 0:
        return []
    return [in_dim] + [hidden] * (layers - 1) + [out_dim]


def init_model(
    masks: Sequence[np.ndarray],
    type_dims: dict[int, int] | None,
    shared_dim: int,
    num_classes: int,
    config: TrainConfig,
) -> Model:
    """Build a model with freshly initialized parameters.

    Filter weights are i.i.d. uniform on [-sqrt(3/T), sqrt(3/T)] with T the
    retained word count, giving them variance 1/T; dense layers use the
    fan-in uniform scheme.  All draws come from the "init" stream of the
    config seed, in checkpoint order, so the same seed always produces the
    same model.
    """
    config.validate()
    rng = stream(config.seed, "init")
    words = enumerate_words(masks, config.order)

    f_dims = _mlp_chain(shared_dim, config.hidden, config.hidden, config.f_layers)
    conv_dim = f_dims[-1] if f_dims else shared_dim
    fp_dims = _mlp_chain(conv_dim, config.hidden, num_classes, config.fp_layers)

    params: dict[str, ad.Tensor] = {}

    def linear(name: str, fan_in: int, fan_out: int) -> None:
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}.W"] = ad.parameter(
            rng.uniform(-bound, bound, (fan_in, fan_out)), name=f"{name}.W"
        )
        params[f"{name}.b"] = ad.parameter(
            rng.uniform(-bound, bound, fan_out), name=f"{name}.b"
        )

    if type_dims is not None:
        for t in sorted(type_dims):
            linear(f"proj{t}", type_dims[t], shared_dim)
    for i in range(len(f_dims) - 1):
        linear(f"f{i}", f_dims[i], f_dims[i + 1])
    t_count = len(words)
    bound = np.sqrt(3.0 / t_count)
    params["w"] = ad.parameter(rng.uniform(-bound, bound, t_count), name="w")
    for i in range(len(fp_dims) - 1):
        linear(f"fp{i}", fp_dims[i], fp_dims[i + 1])

    return Model(
        num_ops=len(masks),
        order=config.order,
        words=words,
        use_sos=config.use_sos,
        type_dims=dict(type_dims) if type_dims is not None else None,
        shared_dim=shared_dim,
        f_dims=f_dims,
        fp_dims=fp_dims,
        dropout=config.dropout,
        params=params,
    )


def _run_mlp(
    model: Model,
    prefix: str,
    dims: list[int],
    x: ad.Tensor,
    training: bool,
    drop_rng: np.random.Generator | None,
    final_linear: bool,
) -> ad.Tensor:
    n_layers = len(dims) - 1 if dims else 0
    for i in range(n_layers):
        x = ad.add_bias(ad.matmul(x, model.params[f"{prefix}{i}.W"]), model.params[f"{prefix}{i}.b"])
        last = i == n_layers - 1
        if not (last and final_linear):
            x = ad.relu(x)
            if training and model.dropout > 0.0:
                keep = (drop_rng.random(x.value.shape) >= model.dropout) / (1.0 - model.dropout)
                x = ad.mul_const(x, keep)
    return x


def _sos_conv_tensor(model: Model, ops: Sequence[ShiftOperator], x: ad.Tensor) -> ad.Tensor:
    """Differentiable g^T g x (or g x when the ablation flag is set)."""
    mats = [op.matrix for op in ops]
    mats_t = [transpose_operator(op).matrix for op in ops]
    w = model.params["w"]

    partial: dict[Word, ad.Tensor] = {(): x}
    for word, op, rest in propagation_plan(model.words):
        partial[word] = ad.spmm(mats[op], mats_t[op], x=partial[rest])
    y = ad.weighted_sum(w, [partial[word] for word in model.words])
    if not model.use_sos:
        return y

    reversed_words = [tuple(reversed(word)) for word in model.words]
    partial_t: dict[Word, ad.Tensor] = {(): y}
    for word, op, rest in propagation_plan(reversed_words):
        partial_t[word] = ad.spmm(mats_t[op], mats[op], x=partial_t[rest])
    return ad.weighted_sum(w, [partial_t[rw] for rw in reversed_words])


def _input_tensor(
    model: Model,
    features: np.ndarray | Mapping[int, np.ndarray],
    node_type: np.ndarray | None,
) -> ad.Tensor:
    if model.type_dims is None:
        x = np.asarray(features, dtype=np.float64)
        if x.shape[1] != model.shared_dim:
            raise ValueError(
                f"features have dim {x.shape[1]}, model expects {model.shared_dim}"
            )
        return ad.constant(x)
    if node_type is None:
        raise ValueError("node_type is required when the model projects per type")
    node_type = np.asarray(node_type)
    pieces, index_lists = [], []
    for t in sorted(model.type_dims):
        idx = np.flatnonzero(node_type == t)
        block = ad.constant(np.asarray(features[t], dtype=np.float64))
        proj = ad.add_bias(
            ad.matmul(block, model.params[f"proj{t}.W"]), model.params[f"proj{t}.b"]
        )
        pieces.append(proj)
        index_lists.append(idx)
    return ad.scatter_rows(pieces, index_lists, int(node_type.shape[0]))


def forward_tensor(
    model: Model,
    ops: Sequence[ShiftOperator],
    features,
    node_type: np.ndarray | None = None,
    training: bool = False,
    drop_rng: np.random.Generator | None = None,
) -> ad.Tensor:
    x = _input_tensor(model, features, node_type)
    x = _run_mlp(model, "f", model.f_dims, x, training, drop_rng, final_linear=False)
    y = _sos_conv_tensor(model, ops, x)
    return _run_mlp(model, "fp", model.fp_dims, y, training, drop_rng, final_linear=True)


def forward(
    model: Model,
    ops: Sequence[ShiftOperator],
    features,
    node_type: np.ndarray | None = None,
) -> np.ndarray:
    """Inference-mode logits for every node."""
    z = forward_tensor(model, ops, features, node_type).value
    if not np.all(np.isfinite(z)):
        raise NumericError("forward pass produced non-finite logits")
    return z


class DecoupledContext:
    """Precomputed pieces for minibatch training over a propagation store.

    Filter weights enter through the expanded coefficients: each stored
    word's coefficient is the sum of weight products over the g-word pairs
    mapping to it.  Stored words that every pair list agrees are
    structurally zero never appear; a structurally nonzero word missing
    from the store is an error.
    """

    def __init__(self, model: Model, store: Mapping[Word, np.ndarray],
                 masks: Sequence[np.ndarray]):
        if not model.use_sos:
            raise ValueError("the decoupled route applies only to the SOS form")
        ext = extended_masks(masks)
        pairs = expand_pairs(model.words, model.num_ops)
        self.ewords: list[Word] = []
        self.pair_lists: list[list[tuple[int, int]]] = []
        index = {word: i for i, word in enumerate(model.words)}
        for eword, plist in sorted(pairs.items(), key=lambda kv: (len(kv[0]), kv[0])):
            if not word_mask(ext, eword).any():
                continue
            if eword not in store:
                raise StoreError(
                    f"propagation store is missing word [{serialize_word(eword)}]"
                )
            self.ewords.append(eword)
            self.pair_lists.append([(index[u], index[v]) for u, v in plist])
        self.store = store

    def forward_tensor(
        self,
        model: Model,
        rows: np.ndarray | None,
        training: bool = False,
        drop_rng: np.random.Generator | None = None,
    ) -> ad.Tensor:
        coeffs = ad.pair_coeffs(model.params["w"], self.pair_lists)
        if rows is None:
            mats = [self.store[e] for e in self.ewords]
        else:
            mats = [self.store[e][rows] for e in self.ewords]
        y = ad.const_weighted_sum(coeffs, mats)
        y = _run_mlp(model, "f", model.f_dims, y, training, drop_rng, final_linear=False)
        return _run_mlp(model, "fp", model.fp_dims, y, training, drop_rng, final_linear=True)


def loss_and_grads(
    model: Model,
    ops: Sequence[ShiftOperator],
    features,
    labels: np.ndarray,
    train_mask: np.ndarray,
    node_type: np.ndarray | None = None,
    training: bool = False,
    drop_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Cross-entropy over masked nodes plus gradients for every parameter."""
    mask = np.asarray(train_mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("training mask is empty")
    logits = forward_tensor(model, ops, features, node_type, training, drop_rng)
    loss = ad.softmax_cross_entropy(ad.take_rows(logits, mask), np.asarray(labels)[mask])
    ad.zero_grads(model.params.values())
    ad.backward(loss)
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.value))
        for k, t in model.params.items()
    }
    return float(loss.value), grads


def evaluate(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """(macro_f1, micro_f1) over the masked nodes.

    A class absent from both predictions and labels contributes an F1 of
    zero to the macro mean.
    """
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("evaluation mask is empty")
    pred = logits[mask].argmax(axis=1)
    true = np.asarray(labels)[mask]
    num_classes = logits.shape[1]
    f1s = np.zeros(num_classes)
    for c in range(num_classes):
        tp = np.sum((pred == c) & (true == c))
        fp = np.sum((pred == c) & (true != c))
        fn = np.sum((pred != c) & (true == c))
        denom = 2 * tp + fp + fn
        f1s[c] = 2 * tp / denom if denom > 0 else 0.0
    micro = float(np.mean(pred == true))
    return float(f1s.mean()), micro


class Adam:
    """Adaptive moment optimizer with bias correction.

    Filter weights form their own group (own learning rate, no decay);
    every other parameter uses the MLP rate and L2 weight decay.
    """

    def __init__(self, model: Model, config: TrainConfig,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = model.params
        self.lr = {
            k: (config.lr_filter if k == "w" else config.lr_mlp) for k in self.params
        }
        self.decay = {
            k: (0.0 if k == "w" else config.weight_decay) for k in self.params
        }
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(t.value) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.value) for k, t in self.params.items()}
        self.t = 0

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = grads[k] + self.decay[k] * p.value
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            m_hat = self.m[k] / (1 - b1**self.t)
            v_hat = self.v[k] / (1 - b2**self.t)
            p.value = p.value - self.lr[k] * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainResult:
    model: Model
    trace: list[dict]
    best_epoch: int
    test_macro: float
    test_micro: float
    epoch_wall_ms: list[float]


def train(
    model: Model,
    features,
    labels: np.ndarray,
    splits: Mapping[str, np.ndarray],
    config: TrainConfig,
    ops: Sequence[ShiftOperator] | None = None,
    node_type: np.ndarray | None = None,
    store: Mapping[Word, np.ndarray] | None = None,
    masks: Sequence[np.ndarray] | None = None,
) -> TrainResult:
    """Optimize the model with early stopping on validation micro-F1.

    Full mode needs the shift operators; minibatch mode needs a propagation
    store (and the operator masks to map filter weights onto it).  The
    trace entry for epoch e describes the model after e update epochs, so
    entry 0 is the freshly initialized model.

    Raises:
        NumericError: if the loss becomes non-finite (the partial trace is
            attached to the exception as ``trace``).
    """
    config.validate()
    train_ids = np.asarray(splits["train"], dtype=np.int64)
    val_ids = np.asarray(splits["val"], dtype=np.int64)
    test_ids = np.asarray(splits["test"], dtype=np.int64)
    if train_ids.size == 0 or val_ids.size == 0:
        raise DataError("train and validation splits must be nonempty")
    labels = np.asarray(labels, dtype=np.int64)

    if config.mode == "minibatch":
        if store is None or masks is None:
            raise ValueError("minibatch mode requires a propagation store and masks")
        ctx = DecoupledContext(model, store, masks)

        def eval_logits() -> np.ndarray:
            return ctx.forward_tensor(model, rows=None).value
    else:
        if ops is None:
            raise ValueError("full mode requires shift operators")

        def eval_logits() -> np.ndarray:
            return forward(model, ops, features, node_type)

    drop_rng = stream(config.seed, "dropout")
    batch_rng = stream(config.seed, "batch")

    def snapshot() -> dict:
        logits = eval_logits()
        sel = logits[train_ids]
        loss = float(
            ad.softmax_cross_entropy(ad.constant(sel), labels[train_ids]).value
        )
        macro, micro = evaluate(logits, labels, val_ids)
        return {"loss": loss, "macro_f1": macro, "micro_f1": micro}

    trace: list[dict] = []
    wall: list[float] = []
    try:
        entry = snapshot()
        entry["epoch"] = 0
        trace.append(entry)
        wall.append(0.0)
        best_state = model.param_values()
        best_micro, best_epoch = entry["micro_f1"], 0

        optimizer = Adam(model, config)
        for epoch in range(1, config.epochs + 1):
            tic = time.perf_counter()
            if config.mode == "minibatch":
                perm = batch_rng.permutation(train_ids)
                for start in range(0, perm.size, config.batch_size):
                    rows = perm[start : start + config.batch_size]
                    logits_t = ctx.forward_tensor(model, rows, training=True, drop_rng=drop_rng)
                    loss_t = ad.softmax_cross_entropy(logits_t, labels[rows])
                    ad.zero_grads(model.params.values())
                    ad.backward(loss_t)
                    grads = {
                        k: (t.grad if t.grad is not None else np.zeros_like(t.value))
                        for k, t in model.params.items()
                    }
                    optimizer.step(grads)
                    if not np.isfinite(float(loss_t.value)):
                        raise NumericError(f"loss diverged at epoch {epoch}")
            else:
                loss_val, grads = loss_and_grads(
                    model, ops, features, labels, train_ids, node_type,
                    training=True, drop_rng=drop_rng,
                )
                if not np.isfinite(loss_val):
                    raise NumericError(f"loss diverged at epoch {epoch}")
                optimizer.step(grads)

            entry = snapshot()
            entry["epoch"] = epoch
            trace.append(entry)
            wall.append((time.perf_counter() - tic) * 1000.0)
            if entry["micro_f1"] > best_micro:
                best_micro, best_epoch = entry["micro_f1"], epoch
                best_state = model.param_values()
            elif epoch - best_epoch >= config.patience:
                break
    except NumericError as err:
        err.trace = trace
        raise

    model.set_param_values(best_state)
    test_macro, test_micro = evaluate(eval_logits(), labels, test_ids)
    return TrainResult(
        model=model,
        trace=trace,
        best_epoch=best_epoch,
        test_macro=test_macro,
        test_micro=test_micro,
        epoch_wall_ms=wall,
    )


def save_checkpoint(path: str | Path, model: Model) -> None:
    """Write a checkpoint: length-prefixed JSON header, then the parameter
    blob as little-endian float64 in parameter-dict order."""
    header = {
        "format": "pshgcn-checkpoint",
        "version": CHECKPOINT_MAGIC_VERSION,
        "num_ops": model.num_ops,
        "order": model.order,
        "use_sos": model.use_sos,
        "dropout": model.dropout,
        "shared_dim": model.shared_dim,
        "type_dims": (
            {str(t): d for t, d in sorted(model.type_dims.items())}
            if model.type_dims is not None
            else None
        ),
        "f_dims": model.f_dims,
        "fp_dims": model.fp_dims,
        "words": [serialize_word(w) for w in model.words],
        "params": [
            {"name": k, "shape": list(t.value.shape)} for k, t in model.params.items()
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        np.ascontiguousarray(t.value, dtype="<f8").tobytes(order="C")
        for t in model.params.values()
    )
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(struct.pack("<Q", len(head)) + head + blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Model:
    raw = Path(path).read_bytes()
    (hlen,) = struct.unpack_from("<Q", raw, 0)
    header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    if header.get("format") != "pshgcn-checkpoint" or header.get("version") != CHECKPOINT_MAGIC_VERSION:
        raise DataError(f"{path}: not a recognized checkpoint file")
    model = Model(
        num_ops=header["num_ops"],
        order=header["order"],
        words=[parse_word(w) for w in header["words"]],
        use_sos=header["use_sos"],
        type_dims=(
            {int(t): d for t, d in header["type_dims"].items()}
            if header["type_dims"] is not None
            else None
        ),
        shared_dim=header["shared_dim"],
        f_dims=header["f_dims"],
        fp_dims=header["fp_dims"],
        dropout=header["dropout"],
        params={},
    )
    off = 8 + hlen
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", offset=off, count=count).reshape(shape).copy()
        model.params[spec["name"]] = ad.parameter(arr, name=spec["name"])
        off += 8 * count
    return model
