"""Command line surface: synth, train, precompute, eval, inspect-filter, verify.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric or
verification failure.  Every command is driven by a RunConfig assembled
from defaults, an optional flat ``key = value`` config file, and command
line flags, in that order of precedence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .conv import load_propagations, precompute_propagations, save_propagations
from .data import DatasetBundle, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .errors import DataError, GraphError, NumericError, StoreError, UsageError
from .graph import LAPLACIAN, NORMALIZED_ADJACENCY
from .model import (
    Model,
    TrainConfig,
    evaluate,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .verify import check_psd, dense_filter, run_verification
from .words import (
    SosFilter,
    count_all_words,
    enumerate_words,
    expand_sos,
    serialize_word,
)


@dataclasses.dataclass
class RunConfig:
    """Training configuration plus the paths and toggles of a CLI run."""

    train: TrainConfig
    data_dir: Path | None = None
    out_dir: Path | None = None
    store_dir: Path | None = None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits with code 2
        raise UsageError(message)


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` file; blank lines and # comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path} line {lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        out[key.strip()] = value.strip()
    return out


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(field: dataclasses.Field, raw: str):
    if field.type in ("int", int):
        return int(raw)
    if field.type in ("float", float):
        return float(raw)
    if field.type in ("bool", bool):
        lowered = raw.lower()
        if lowered in _BOOL_TRUE:
            return True
        if lowered in _BOOL_FALSE:
            return False
        raise UsageError(f"config key {field.name!r}: cannot parse {raw!r} as bool")
    return raw


def build_train_config(file_path: str | None, overrides: dict) -> TrainConfig:
    config = TrainConfig()
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    if file_path:
        for key, raw in parse_config_file(file_path).items():
            if key not in fields:
                raise UsageError(f"config file: unknown key {key!r}")
            setattr(config, key, _coerce(fields[key], raw))
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    return config


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--order", "-k", type=int, help="filter order K")
    p.add_argument("--hidden", type=int)
    p.add_argument("--f-layers", type=int, dest="f_layers")
    p.add_argument("--fp-layers", type=int, dest="fp_layers")
    p.add_argument("--lr-filter", type=float, dest="lr_filter")
    p.add_argument("--lr-mlp", type=float, dest="lr_mlp")
    p.add_argument("--weight-decay", type=float, dest="weight_decay")
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--mode", choices=["full", "minibatch"])
    p.add_argument(
        "--no-sos", action="store_true",
        help="ablation variant: apply g once instead of g^T g",
    )
    p.add_argument("--operator", choices=[NORMALIZED_ADJACENCY, LAPLACIAN])


def _train_overrides(args: argparse.Namespace) -> dict:
    keys = [
        "order", "hidden", "f_layers", "fp_layers", "lr_filter", "lr_mlp",
        "weight_decay", "epochs", "patience", "dropout", "seed", "batch_size",
        "mode", "operator",
    ]
    overrides = {k: getattr(args, k) for k in keys}
    if args.no_sos:
        overrides["use_sos"] = False
    return overrides


def _model_inputs(bundle: DatasetBundle, config: TrainConfig):
    """Shared setup: operators, masks, features, and projection layout."""
    ops = bundle.graph.shift_operators(config.operator)
    masks = [op.type_mask for op in ops]
    dims = bundle.type_dims()
    if len(set(dims.values())) == 1:
        type_dims = None
        shared_dim = next(iter(dims.values()))
        features = bundle.aligned_features()
    else:
        type_dims = dims
        shared_dim = config.hidden
        features = bundle.features
    return ops, masks, features, type_dims, shared_dim


def cmd_synth(args) -> int:
    spec = SyntheticSpec(seed=args.seed)
    if args.sizes:
        spec = dataclasses.replace(spec, type_sizes=tuple(int(s) for s in args.sizes.split(",")))
    if args.classes is not None:
        spec = dataclasses.replace(spec, classes=args.classes)
    if args.noise is not None:
        spec = dataclasses.replace(spec, feature_noise=args.noise)
    bundle = generate_synthetic(spec)
    save_dataset(args.out, bundle)
    print(f"wrote synthetic dataset to {args.out} "
          f"(n={bundle.graph.n}, R={bundle.graph.num_edge_types}, classes={bundle.num_classes})")
    return 0


def cmd_train(args) -> int:
    config = build_train_config(args.config, _train_overrides(args))
    bundle = load_dataset(args.data)
    ops, masks, features, type_dims, shared_dim = _model_inputs(bundle, config)

    store = None
    if config.mode == "minibatch":
        if type_dims is not None:
            raise DataError(
                "minibatch mode needs one shared feature dimension across node types"
            )
        if args.store and (Path(args.store) / "index.json").is_file():
            store, meta = load_propagations(args.store)
            if meta["n"] != bundle.graph.n:
                raise DataError(
                    f"store at {args.store} was built for n={meta['n']}, dataset has n={bundle.graph.n}"
                )
        else:
            store = precompute_propagations(ops, features, order=2 * config.order)

    model = init_model(masks, type_dims, shared_dim, bundle.num_classes, config)
    tic = time.perf_counter()
    result = train(
        model, features, bundle.labels, bundle.splits, config,
        ops=ops, node_type=bundle.graph.node_type, store=store, masks=masks,
    )
    total_ms = (time.perf_counter() - tic) * 1000.0

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / "checkpoint.bin", result.model)
    metrics = {
        "config": dataclasses.asdict(config),
        "trace": result.trace,
        "final": {
            "best_epoch": result.best_epoch,
            "test_macro_f1": result.test_macro,
            "test_micro_f1": result.test_micro,
        },
    }
    (out_dir / "metrics.json").write_text(
        json.dumps(metrics, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "timing.json").write_text(
        json.dumps(
            {"total_wall_ms": total_ms, "epoch_wall_ms": result.epoch_wall_ms},
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )
    print(
        f"trained {config.epochs if not result.trace else len(result.trace) - 1} epochs; "
        f"best epoch {result.best_epoch}; "
        f"test macro/micro F1 = {result.test_macro:.4f}/{result.test_micro:.4f}"
    )
    return 0


def cmd_precompute(args) -> int:
    config = build_train_config(args.config, {"order": args.order, "operator": args.operator})
    bundle = load_dataset(args.data)
    ops, _, features, type_dims, _ = _model_inputs(bundle, config)
    if type_dims is not None:
        raise DataError("precompute needs one shared feature dimension across node types")
    store = precompute_propagations(
        ops, features, order=2 * config.order, max_words=args.max_words
    )
    save_propagations(args.store, store, num_ops=len(ops), order=2 * config.order)
    print(f"stored {len(store)} propagated matrices in {args.store}")
    return 0


def cmd_eval(args) -> int:
    bundle = load_dataset(args.data)
    model = load_checkpoint(args.checkpoint)
    operator = args.operator or NORMALIZED_ADJACENCY
    ops = bundle.graph.shift_operators(operator)
    if model.type_dims is None:
        features = bundle.aligned_features()
    else:
        features = bundle.features
    logits = forward(model, ops, features, bundle.graph.node_type)
    macro, micro = evaluate(logits, bundle.labels, bundle.splits[args.split])
    print(json.dumps({"split": args.split, "macro_f1": macro, "micro_f1": micro}))
    return 0


def cmd_inspect_filter(args) -> int:
    bundle = load_dataset(args.data)
    operator = args.operator or NORMALIZED_ADJACENCY
    ops = bundle.graph.shift_operators(operator)
    masks = [op.type_mask for op in ops]
    num_ops = len(ops)

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        order = model.order
        words = model.words
        weights = model.sos_weights()
    else:
        order = args.order or 2
        words = enumerate_words(masks, order)
        weights = None

    report = {
        "num_operators": num_ops,
        "order": order,
        "total_words": count_all_words(num_ops, order),
        "retained_words": len(words),
        "words": [serialize_word(w) for w in words],
    }
    if weights is not None:
        filt = SosFilter(num_ops=num_ops, order=order, weights=weights)
        expanded = expand_sos(filt, masks)
        report["weights"] = {serialize_word(w): weights[w] for w in words}
        report["expanded_coefficients"] = {
            serialize_word(w): c for w, c in sorted(
                expanded.terms.items(), key=lambda kv: (len(kv[0]), kv[0])
            )
        }
        if bundle.graph.n <= args.dense_cap:
            h = dense_filter(filt, ops)
            psd, smallest = check_psd(h)
            sym = (h + h.T) / 2.0
            eigs = np.linalg.eigvalsh(sym)
            report["dense_summary"] = {
                "n": bundle.graph.n,
                "min_eigenvalue": float(eigs[0]),
                "max_eigenvalue": float(eigs[-1]),
                "psd": bool(psd),
            }
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(f"operators: {report['num_operators']}, order K = {report['order']}")
        print(f"words: {report['retained_words']} retained of {report['total_words']} total")
        for key in report["words"]:
            line = f"  [{key}]"
            if weights is not None:
                line += f"  weight = {report['weights'][key]:+.6f}"
            print(line)
        if "expanded_coefficients" in report:
            print("expanded coefficients of g^T g:")
            for key, c in report["expanded_coefficients"].items():
                print(f"  [{key}]  c = {c:+.6f}")
        if "dense_summary" in report:
            s = report["dense_summary"]
            print(
                f"dense operator on n={s['n']}: eigenvalues in "
                f"[{s['min_eigenvalue']:.3e}, {s['max_eigenvalue']:.3e}], psd={s['psd']}"
            )
    return 0


def cmd_verify(args) -> int:
    report = run_verification(seed=args.seed, trials=args.trials, quick=args.quick)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0 if report["passed"] else 3


def build_parser() -> _Parser:
    parser = _Parser(prog="pshgcn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sizes", help="comma-separated node counts per type")
    p.add_argument("--classes", type=int)
    p.add_argument("--noise", type=float, help="observation noise level")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--store", help="propagation store for minibatch mode")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("precompute", help="build the propagation store")
    p.add_argument("--data", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--config")
    p.add_argument("--order", "-k", type=int)
    p.add_argument("--operator", choices=[NORMALIZED_ADJACENCY, LAPLACIAN])
    p.add_argument("--max-words", type=int, dest="max_words")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--operator", choices=[NORMALIZED_ADJACENCY, LAPLACIAN])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-filter", help="show retained words and coefficients")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--order", "-k", type=int)
    p.add_argument("--operator", choices=[NORMALIZED_ADJACENCY, LAPLACIAN])
    p.add_argument("--dense-cap", type=int, default=500, dest="dense_cap")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect_filter)

    p = sub.add_parser("verify", help="run the verification oracle suite")
    p.add_argument("--out", help="write the JSON report here as well")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, GraphError, StoreError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, OverflowError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
