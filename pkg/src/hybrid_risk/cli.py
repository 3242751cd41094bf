"""Command-line entry point: ``hybrid-risk {gen-data,train,eval,ablate,grad-check}``.

Runs are driven by an optional YAML config file; command-line flags override
values from the file. Exit status: 0 success, 1 invalid flags/config/data or
a failed gradient check, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__
from .ablation import prepare_splits, run_ablation
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Dataset, SplitSpec, gen_synthetic, load_csv, standardize, write_csv
from .exceptions import ConfigurationError, HybridRiskError, UsageError
from .gradsuite import run_suite
from .metrics import emit_report, evaluate
from .model import ModelConfig
from .training import TrainConfig, fit

logger = logging.getLogger("hybrid_risk")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

DEFAULT_SYNTHETIC = {"n": 2000, "t": 12, "f": 4, "seed": 0, "noise": 0.1}
DEFAULT_SPLIT = {"train": 0.7, "val": 0.15, "test": 0.15, "seed": 0, "stratified": True}


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- run config

@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    split: SplitSpec
    data: dict
    output_dir: Path
    threshold: float = 0.5
    seeds: list = field(default_factory=lambda: [0, 1, 2])

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "split": dict(vars(self.split)),
            "data": self.data,
            "output_dir": str(self.output_dir),
            "threshold": self.threshold,
            "seeds": list(self.seeds),
        }


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ValidationFailure(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationFailure(f"config {path} must be a mapping")
    return doc


def _parse_conv_layers(text: str) -> list:
    """``"16:3:1,8:3:2"`` -> ``[[16, 3, 1], [8, 3, 2]]``."""
    try:
        return [[int(v) for v in stage.split(":")] for stage in text.split(",") if stage]
    except ValueError:
        raise ValidationFailure(f"bad --conv-layers value {text!r}") from None


def _parse_floats(text: str, count: int, flag: str) -> list:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        values = []
    if len(values) != count:
        raise ValidationFailure(f"{flag} needs {count} comma-separated numbers, got {text!r}")
    return values


MODEL_FLAGS = {"variant": "variant", "d_model": "d_model", "n_heads": "n_heads", "d_k": "d_k",
               "d_v": "d_v", "n_blocks": "n_blocks", "ffn_dim": "ffn_dim",
               "conv_padding": "conv_padding", "positional_encoding": "positional_encoding",
               "dropout": "dropout_rate"}
TRAIN_FLAGS = {"epochs": "epochs", "batch_size": "batch_size", "lr": "learning_rate",
               "optimizer": "optimizer", "patience": "early_stop_patience"}


def resolve_run_config(args) -> tuple[RunConfig, Dataset]:
    """Merge file + flags, validate everything, and load the data. Writes nothing."""
    doc = _load_config_file(getattr(args, "config", None))
    model = dict(doc.get("model") or {})
    train = dict(doc.get("train") or {})
    split_d = {**DEFAULT_SPLIT, **(doc.get("split") or {})}
    data = dict(doc.get("data") or {})

    for flag, key in MODEL_FLAGS.items():
        if getattr(args, flag, None) is not None:
            model[key] = getattr(args, flag)
    if getattr(args, "conv_layers", None):
        model["conv_layers"] = _parse_conv_layers(args.conv_layers)
    for flag, key in TRAIN_FLAGS.items():
        if getattr(args, flag, None) is not None:
            train[key] = getattr(args, flag)
    if getattr(args, "seed", None) is not None:
        train["seed"] = args.seed
        model["seed"] = args.seed
    if getattr(args, "split", None):
        split_d["train"], split_d["val"], split_d["test"] = _parse_floats(args.split, 3, "--split")
    if getattr(args, "split_seed", None) is not None:
        split_d["seed"] = args.split_seed

    if getattr(args, "data", None):
        data = {"csv": args.data}
    synth_flags = {k: getattr(args, k, None) for k in ("n", "t", "f", "noise")}
    synth_flags["seed"] = getattr(args, "data_seed", None)
    if any(v is not None for v in synth_flags.values()):
        if "csv" in data:
            raise ValidationFailure("synthetic data flags conflict with a CSV data source")
        base = {**DEFAULT_SYNTHETIC, **(data.get("synthetic") or {})}
        base.update({k: v for k, v in synth_flags.items() if v is not None})
        data = {"synthetic": base}
    if not data:
        data = {"synthetic": dict(DEFAULT_SYNTHETIC)}
    if "csv" in data and "synthetic" in data:
        raise ValidationFailure("config names both a CSV and a synthetic data source")

    output_dir = getattr(args, "output_dir", None) or doc.get("output_dir")
    if output_dir is None:
        raise ValidationFailure("an output directory is required (--output-dir or output_dir:)")
    threshold = args.threshold if getattr(args, "threshold", None) is not None \
        else doc.get("threshold", 0.5)
    if not 0.0 <= float(threshold) <= 1.0:
        raise ValidationFailure(f"threshold must be in [0, 1], got {threshold}")
    seeds = doc.get("seeds", [0, 1, 2])
    if getattr(args, "seeds", None):
        seeds = [int(s) for s in args.seeds.split(",")]

    dataset = _load_data(data)
    model.setdefault("seq_len", dataset.seq_len)
    model.setdefault("n_features", dataset.n_features)
    if (model["seq_len"], model["n_features"]) != (dataset.seq_len, dataset.n_features):
        raise ValidationFailure(
            f"model expects T={model['seq_len']}, F={model['n_features']} but data has "
            f"T={dataset.seq_len}, F={dataset.n_features}")
    try:
        run = RunConfig(ModelConfig.from_dict(model), TrainConfig.from_dict(train),
                        SplitSpec(**split_d), data, Path(output_dir), float(threshold), seeds)
    except TypeError as exc:
        raise ValidationFailure(str(exc)) from None
    return run, dataset


def _load_data(data: dict) -> Dataset:
    if "csv" in data:
        return load_csv(data["csv"])
    if "synthetic" in data:
        s = {**DEFAULT_SYNTHETIC, **data["synthetic"]}
        unknown = set(s) - set(DEFAULT_SYNTHETIC)
        if unknown:
            raise ValidationFailure(f"unknown synthetic data keys {sorted(unknown)}")
        return gen_synthetic(int(s["n"]), int(s["t"]), int(s["f"]), int(s["seed"]),
                             float(s["noise"]))
    raise ValidationFailure(f"unknown data source {data}")


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    ds = gen_synthetic(args.n, args.t, args.f, args.seed, args.noise)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out, include_ids=args.with_ids)
    print(f"wrote {len(ds)} samples (T={ds.seq_len}, F={ds.n_features}) to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    run, dataset = resolve_run_config(args)
    train, val, test = prepare_splits(dataset, run.split)
    run.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run.output_dir / "resolved_config.json", run.to_dict())

    state = fit(run.train, run.model, train, val, progress=logger.info)
    model = state.to_model(train.standardization)
    model.feature_names = dataset.feature_names
    save_checkpoint(model, run.output_dir / "checkpoint.json")
    _write_json(run.output_dir / "history.json", state.history_dict())
    report = evaluate(model, test, run.threshold, seeds=(run.train.seed,))
    text = emit_report([report], run.output_dir / "report.json")
    sys.stdout.write(text)
    print(_metrics_line(report))
    return EXIT_OK


def _metrics_line(report) -> str:
    def fmt(v):
        return "n/a" if v is None else f"{v:.4f}"
    return (f"{report.variant}: ACC {fmt(report.accuracy)}  Precision {fmt(report.precision)}  "
            f"Recall {fmt(report.recall)}")


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    if args.data:
        dataset = load_csv(args.data)
    else:
        s = dict(DEFAULT_SYNTHETIC)
        s.update({k: v for k, v in (("n", args.n), ("t", args.t), ("f", args.f),
                                    ("seed", args.data_seed), ("noise", args.noise))
                  if v is not None})
        dataset = _load_data({"synthetic": s})
    if (dataset.seq_len, dataset.n_features) != (model.config.seq_len, model.config.n_features):
        raise ValidationFailure("data shape does not match the checkpoint's model")
    dataset = standardize(dataset, model.standardization) if model.standardization else dataset
    report = evaluate(model, dataset, args.threshold)
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        text = emit_report([report], out / "eval_report.json")
    else:
        from .metrics import format_table
        text = format_table([report.to_dict()])
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    run, dataset = resolve_run_config(args)
    run.output_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run.output_dir / "resolved_config.json", run.to_dict())
    table = run_ablation(run.model, run.train, dataset, run.seeds, run.split, run.threshold,
                         keep_going=True, progress=logger.info)
    text = emit_report(table.rows, run.output_dir / "ablation.json")
    sys.stdout.write(text)
    if table.failed:
        print("one or more runs failed; see ablation.json", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_grad_check(args) -> int:
    flip = frozenset(args.flip_sign or ())
    results = run_suite(args.seeds, args.eps, flip=flip)
    ok = True
    for r in results:
        status = "ok" if r.passed else "FAIL"
        ok &= r.passed
        print(f"{r.name:<28} max_rel_error {r.max_rel_error:.3e}  tol {r.tolerance:.1e}  "
              f"kinks {r.kinks:<4} {status}")
    return EXIT_OK if ok else EXIT_INVALID


# ---------------------------------------------------------------- parser

def _add_run_flags(p):
    p.add_argument("--config", help="YAML run config; flags override its values")
    p.add_argument("--output-dir", help="directory receiving every output file")
    p.add_argument("--data", help="CSV dataset (default: synthetic)")
    p.add_argument("--n", type=int, help="synthetic sample count")
    p.add_argument("--t", type=int, help="synthetic sequence length")
    p.add_argument("--f", type=int, help="synthetic feature count")
    p.add_argument("--noise", type=float, help="synthetic noise level")
    p.add_argument("--data-seed", type=int, help="synthetic data seed")
    p.add_argument("--split", help="train,val,test fractions (default 0.7,0.15,0.15)")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--variant", choices=("full", "without_cnn", "without_transformer"))
    p.add_argument("--conv-layers", help="out:kernel:pool stages, e.g. 16:3:1,8:3:2")
    p.add_argument("--conv-padding", type=int)
    p.add_argument("--d-model", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--d-k", type=int)
    p.add_argument("--d-v", type=int)
    p.add_argument("--n-blocks", type=int)
    p.add_argument("--ffn-dim", type=int)
    p.add_argument("--positional-encoding", choices=("sinusoidal", "none"))
    p.add_argument("--dropout", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--patience", type=int, help="early-stopping patience in epochs")
    p.add_argument("--seed", type=int, help="initialization and batch-order seed")
    p.add_argument("--threshold", type=float, help="decision threshold (default 0.5)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hybrid-risk",
                     description="Train and evaluate the hybrid CNN + transformer risk classifier.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-q", "--quiet", action="store_true", help="no per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--f", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--with-ids", action="store_true", help="include an id column")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="split, standardize, fit, and evaluate one model")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="CSV dataset (default: synthetic)")
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--f", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--data-seed", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train full / without_cnn / without_transformer per seed")
    _add_run_flags(p)
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of every op and the model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--seeds", type=int, default=100, help="random cases per op")
    p.add_argument("--flip-sign", action="append", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValidationFailure, ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HybridRiskError as exc:
        kind = EXIT_INVALID if isinstance(exc, ValueError) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return kind
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
