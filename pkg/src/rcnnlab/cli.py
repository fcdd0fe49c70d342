"""Command-line entry point.

Subcommands: train, eval, compare, sweep, gradcheck, gen. Machine-parseable
metrics go to stdout; progress and diagnostics go to stderr. Exit codes
partition failures: 2 config, 3 data/I-O, 4 numeric abort, 5 verification.

Option precedence: built-in defaults < JSON config file < command-line flags.
The fully resolved configuration is echoed into every run report.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import checks
from .data import (
    TextDataset,
    Vocabulary,
    build_vocab,
    gen_keyword_task,
    gen_longrange_task,
    gen_order_task,
    load_imdb_dir,
    load_tsv,
    write_tsv,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    GradCheckError,
    NumericError,
    ShapeError,
)
from .harness import (
    TrainConfig,
    evaluate,
    load_checkpoint,
    run_model_comparison,
    run_seqlen_sweep,
    save_checkpoint,
    split_train_val,
    train,
    write_rows,
)
from .models import ABLATION_VARIANTS, KINDS, ModelSpec

CONFIG_KEYS = {
    "optimizer": str, "lr": float, "epochs": int, "batch_size": int,
    "init_seed": int, "shuffle_seed": int, "val_fraction": float,
    "patience": int, "clip_norm": float, "seq_len": int, "embed_dim": int,
    "hidden_dim": int, "num_filters": int, "highway_layers": int,
    "mlp_instead_of_highway": bool, "num_classes": int, "max_vocab": int,
    "min_freq": int,
}

DEFAULTS = {
    "optimizer": "rmsprop", "lr": None, "epochs": 10, "batch_size": 32,
    "init_seed": 0, "shuffle_seed": 1, "val_fraction": 0.1, "patience": 3,
    "clip_norm": None, "seq_len": 200, "embed_dim": 50, "hidden_dim": 32,
    "num_filters": 256, "highway_layers": None, "mlp_instead_of_highway": False,
    "num_classes": 2, "max_vocab": 20000, "min_freq": 2,
}


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _resolve_options(args) -> dict:
    """defaults < JSON config file < explicit flags."""
    options = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"missing config file: {path}")
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        unknown = set(loaded) - set(CONFIG_KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        options.update(loaded)
    flag_map = {
        "seq_len": "seq_len", "epochs": "epochs", "optimizer": "optimizer",
        "lr": "lr", "batch_size": "batch_size", "val_fraction": "val_fraction",
        "patience": "patience", "clip_norm": "clip_norm",
        "embed_dim": "embed_dim", "hidden_dim": "hidden_dim",
        "num_filters": "num_filters", "highway_layers": "highway_layers",
        "mlp": "mlp_instead_of_highway", "max_vocab": "max_vocab",
        "min_freq": "min_freq",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            options[key] = value
    if getattr(args, "seed", None) is not None:
        options["init_seed"] = args.seed
        options["shuffle_seed"] = args.seed + 1
    return options


def _make_config(options: dict, kind: str, vocab_size: int) -> TrainConfig:
    spec = ModelSpec(
        kind=kind,
        vocab_size=vocab_size,
        seq_len=options["seq_len"],
        embed_dim=options["embed_dim"],
        hidden_dim=options["hidden_dim"],
        num_filters=options["num_filters"],
        highway_layers=options["highway_layers"] if kind == "rcnn-hw" else 0,
        mlp_instead_of_highway=options["mlp_instead_of_highway"] if kind == "rcnn-hw" else False,
        num_classes=options["num_classes"],
    )
    return TrainConfig(
        spec=spec,
        optimizer=options["optimizer"],
        lr=options["lr"],
        epochs=options["epochs"],
        batch_size=options["batch_size"],
        init_seed=options["init_seed"],
        shuffle_seed=options["shuffle_seed"],
        val_fraction=options["val_fraction"],
        patience=options["patience"],
        clip_norm=options["clip_norm"],
    )


def _load_data(path_str: str) -> tuple[TextDataset, TextDataset | None]:
    """TSV file -> (dataset, None); review directory -> (train, test)."""
    path = Path(path_str)
    if path.is_dir():
        return load_imdb_dir(path)
    return load_tsv(path), None


def _base_model_kind(name: str) -> str:
    if name in ABLATION_VARIANTS:
        return "rcnn-hw"
    if name in KINDS:
        return name
    valid = ", ".join(list(KINDS) + list(ABLATION_VARIANTS))
    raise ConfigError(f"unknown model {name!r}; valid: {valid}")


def _expand_models(spec: str) -> list[str]:
    names = []
    for raw in spec.split(","):
        name = raw.strip()
        if not name:
            continue
        if name == "rcnn-hw-ablation":
            names.extend(ABLATION_VARIANTS)
        else:
            _base_model_kind(name)
            names.append(name)
    if not names:
        raise ConfigError("model list is empty")
    return names


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    options = _resolve_options(args)
    kind = _base_model_kind(args.model)
    dataset, test_set = _load_data(args.data)
    train_set, val_set = split_train_val(dataset, options["val_fraction"])
    vocab = build_vocab(train_set, max_size=options["max_vocab"], min_freq=options["min_freq"])
    config = _make_config(options, kind, len(vocab))
    if args.model in ABLATION_VARIANTS:
        d = config.spec.to_dict()
        d.update(ABLATION_VARIANTS[args.model])
        config.spec = ModelSpec.from_dict(d)

    _log(f"training {args.model}: {len(train_set)} train / {len(val_set)} val examples, "
         f"vocab {len(vocab)}, seq_len {config.spec.seq_len}")
    model, report = train(config, train_set, val_set, vocab)
    if test_set is not None:
        report.final_test_accuracy = evaluate(model, test_set, vocab, config.spec.seq_len)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "model.rchw")
    vocab.save(out / "vocab.txt")
    report.save(out / "report.json")
    _log(f"wrote {out / 'model.rchw'}, {out / 'vocab.txt'}, {out / 'report.json'}")
    print(f"best_val_accuracy={report.best_val_accuracy:.6f}")
    if report.final_test_accuracy is not None:
        print(f"test_accuracy={report.final_test_accuracy:.6f}")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.seq_len is not None and args.seq_len != model.spec.seq_len:
        raise ConfigError(
            f"--seq-len {args.seq_len} conflicts with checkpoint seq_len {model.spec.seq_len}"
        )
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).parent / "vocab.txt"
    if not vocab_path.is_file():
        raise DataError(f"missing vocabulary file: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    dataset, test_set = _load_data(args.data)
    target = test_set if test_set is not None else dataset
    accuracy = evaluate(model, target, vocab, model.spec.seq_len)
    print(f"accuracy={accuracy:.6f}")
    return 0


def _split_for_experiment(args, options) -> tuple[TextDataset, TextDataset, TextDataset, Vocabulary]:
    dataset, test_set = _load_data(args.data)
    if getattr(args, "test_data", None):
        test_set = load_tsv(args.test_data)
    if test_set is None:
        held = split_train_val(dataset, 0.2, seed=29)
        dataset, test_set = held
    train_set, val_set = split_train_val(dataset, options["val_fraction"])
    vocab = build_vocab(train_set, max_size=options["max_vocab"], min_freq=options["min_freq"])
    return train_set, val_set, test_set, vocab


def cmd_compare(args) -> int:
    options = _resolve_options(args)
    names = _expand_models(args.models)
    train_set, val_set, test_set, vocab = _split_for_experiment(args, options)
    config = _make_config(options, "rcnn-hw", len(vocab))
    _log(f"comparing {names} on {len(train_set)} train / {len(test_set)} test examples")
    rows = run_model_comparison(config, names, train_set, val_set, test_set, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "comparison.csv", out / "comparison.json")
    for row in rows:
        acc = "n/a" if row["test_accuracy"] is None else f"{row['test_accuracy']:.4f}"
        _log(f"  {row['model']:14s} {row['status']:5s} accuracy={acc}")
    print(f"rows={len(rows)}")
    print(f"csv={out / 'comparison.csv'}")
    return 0


def cmd_sweep(args) -> int:
    options = _resolve_options(args)
    names = _expand_models(args.model)
    try:
        lengths = [int(v) for v in args.lengths.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--lengths must be comma-separated integers: {args.lengths!r}") from exc
    train_set, val_set, test_set, vocab = _split_for_experiment(args, options)
    config = _make_config(options, "rcnn-hw", len(vocab))
    _log(f"sweeping {names} over lengths {lengths}")
    rows = run_seqlen_sweep(config, names, train_set, val_set, test_set, vocab, lengths)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(rows, out / "sweep.csv", out / "sweep.json")
    print(f"rows={len(rows)}")
    print(f"csv={out / 'sweep.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.scope == "layer":
        results = checks.run_layer_checks(base_seed=args.seed, inject_bug=args.inject_bug)
    else:
        results = checks.run_model_checks(base_seed=args.seed)
    failed = False
    for r in results:
        ok = r.passed()
        failed = failed or not ok
        print(f"{r.name:28s} max_rel_error={r.max_rel_error:.3e} {'PASS' if ok else 'FAIL'}")
    if failed:
        raise GradCheckError("one or more gradient checks exceeded tolerance 1e-4")
    return 0


def cmd_gen(args) -> int:
    if args.task == "keyword":
        ds = gen_keyword_task(args.n, vocab_size=args.vocab_size, seq_len=args.seq_len or 50, seed=args.seed)
    elif args.task == "order":
        ds = gen_order_task(args.n, vocab_size=args.vocab_size, seq_len=args.seq_len or 50, seed=args.seed)
    else:
        try:
            lo, hi = (int(v) for v in args.window.split(","))
        except ValueError as exc:
            raise ConfigError(f"--window must be 'lo,hi' integers: {args.window!r}") from exc
        ds = gen_longrange_task(
            args.n, (lo, hi), seq_len=args.seq_len or 500, seed=args.seed, vocab_size=args.vocab_size
        )
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    write_tsv(ds, out)
    positives = sum(label for _t, label in ds.examples)
    _log(f"wrote {len(ds)} examples ({positives} positive) to {out}")
    print(f"examples={len(ds)}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seq-len", dest="seq_len", type=int, help="input length (default 200)")
    p.add_argument("--epochs", type=int, help="training epochs (default 10)")
    p.add_argument("--seed", type=int, help="seed for init and shuffling")
    p.add_argument("--optimizer", choices=["rmsprop", "adam", "adadelta"], help="default rmsprop")
    p.add_argument("--lr", type=float, help="learning rate (default per optimizer)")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="default 32")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, help="default 0.1")
    p.add_argument("--patience", type=int, help="early-stop patience (default 3)")
    p.add_argument("--clip-norm", dest="clip_norm", type=float,
                   help="gradient clip; default 5.0 for recurrent models, 0 disables")
    p.add_argument("--embed-dim", dest="embed_dim", type=int, help="default 50")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, help="default 32")
    p.add_argument("--num-filters", dest="num_filters", type=int, help="default 256")
    p.add_argument("--highway-layers", dest="highway_layers", type=int, help="0, 1 or 2 (rcnn-hw)")
    p.add_argument("--mlp", action="store_const", const=True, default=None,
                   help="use a dense+relu block instead of highway layers (rcnn-hw)")
    p.add_argument("--max-vocab", dest="max_vocab", type=int, help="default 20000")
    p.add_argument("--min-freq", dest="min_freq", type=int, help="default 2")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcnnlab",
        description="Train and probe recurrent-convolutional highway text classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model and write checkpoint + report")
    p.add_argument("--data", required=True, help="TSV file or review directory")
    p.add_argument("--model", required=True, help=f"one of: {', '.join(KINDS)} or an ablation variant")
    p.add_argument("--out", default="runs/train", help="output directory")
    _add_common_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; prints accuracy=<value>")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside the checkpoint)")
    p.add_argument("--seq-len", dest="seq_len", type=int, help="must match the checkpoint")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="train several architectures and tabulate accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", dest="test_data", help="optional held-out TSV")
    p.add_argument("--models", required=True,
                   help="comma list; rcnn-hw-ablation expands to the four highway variants")
    p.add_argument("--out", default="runs/compare")
    _add_common_train_flags(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("sweep", help="retrain over a range of input sequence lengths")
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", dest="test_data", help="optional held-out TSV")
    p.add_argument("--model", required=True, help="model name or comma list")
    p.add_argument("--lengths", default="100,200,300,400,500")
    p.add_argument("--out", default="runs/sweep")
    _add_common_train_flags(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference verification suite")
    p.add_argument("--scope", choices=["layer", "model"], default="layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-bug", dest="inject_bug", action="store_true",
                   help="add a deliberately broken op (negative control)")
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("gen", help="write a synthetic TSV dataset")
    p.add_argument("--task", required=True, choices=["keyword", "order", "longrange"])
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=100)
    p.add_argument("--window", default="200,400", help="longrange signal window 'lo,hi'")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except (ConfigError, ContractError, ShapeError) as exc:
        _log(f"config error: {exc}")
        return 2
    except (DataError, CheckpointError, OSError) as exc:
        _log(f"data error: {exc}")
        return 3
    except NumericError as exc:
        _log(f"numeric abort: {exc}")
        return 4
    except GradCheckError as exc:
        _log(f"verification failure: {exc}")
        return 5


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
