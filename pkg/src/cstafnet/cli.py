"""Command-line front end: preprocess, train, evaluate, predict, and
selfcheck.

Every command writes a manifest next to its outputs with the fully
resolved configuration, paths, and seeds, so a run can be reproduced
exactly. Exit codes are stable: 0 ok, 1 selfcheck failure,
2 configuration, 3 input data, 4 numerical divergence.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import __version__, backend, data_pipeline, evaluation, selfcheck, training
from .errors import (CheckpointError, ConfigError, CstafnetError,
                     DivergenceError, LabelError, ParseError,
                     PreprocessError, ShapeError)
from .model import (ModelConfig, build_model, forward_tape, load_checkpoint,
                    num_params)

EXIT_OK = 0
EXIT_SELFCHECK = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _env_seed():
    return int(os.environ.get("CSTAFNET_SEED", "0"))


def _write_manifest(path, command, resolved, inputs, outputs):
    manifest = {
        "command": command,
        "config": resolved,
        "inputs": inputs,
        "outputs": outputs,
        "tool_version": __version__,
        "kernel_backend": backend.get_backend(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve(ns, defaults, config_file):
    """builtin defaults < config file < explicit flags."""
    resolved = dict(defaults)
    if config_file:
        try:
            with open(config_file, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from None
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown keys in {config_file}: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key, value in vars(ns).items():
        if key in defaults and value is not None:
            resolved[key] = value
    return resolved


def _parse_int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if str(v).strip() != ""]
    except ValueError:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from None


def _infer_batches(params, cfg, x, batch_size=1024):
    outs = []
    for i in range(0, len(x), batch_size):
        out, _ = forward_tape(params, cfg, x[i:i + batch_size], "infer")
        outs.append(out)
    return np.concatenate(outs, axis=0) if outs else np.empty((0, 1))


# ---------------------------------------------------------------------------
# commands

PREPROCESS_DEFAULTS = {"label_col": None, "drop_cols": "", "test_ratio": 0.2, "seed": None}


def cmd_preprocess(ns):
    defaults = dict(PREPROCESS_DEFAULTS)
    defaults["seed"] = _env_seed()
    opts = _resolve(ns, defaults, ns.config)
    if not opts["label_col"]:
        raise ConfigError("--label-col is required")
    drop = [c for c in str(opts["drop_cols"]).split(",") if c.strip()]
    split, meta = data_pipeline.preprocess_csv(
        ns.input, opts["label_col"], drop, float(opts["test_ratio"]), int(opts["seed"]))
    data_pipeline.save_dataset(split, meta, ns.output)
    _write_manifest(ns.output + ".manifest.json", "preprocess", opts,
                    {"input": ns.input}, {"dataset": ns.output})
    classes = split.mapping.classes
    print(f"wrote {ns.output}: {len(split.x_train)} train rows, "
          f"{len(split.x_test)} test rows, {split.x_train.shape[1]} features, "
          f"{len(classes)} classes")
    for c, name in enumerate(classes):
        n = int(np.sum(split.y_train == c) + np.sum(split.y_test == c))
        print(f"  [{c}] {name}: {n} rows")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "head": "multiclass", "learning_rate": 1e-3, "beta1": 0.9, "beta2": 0.999,
    "eps": 1e-8, "batch_size": 1024, "epochs": 10, "val_fraction": 0.2,
    "patience": 5, "seed": None, "init_seed": None, "kernel_sizes": "3,5,7",
    "filters": 64, "gru_units": 64, "attn_ratio": 8, "dropout1": 0.3,
    "dropout2": 0.4, "hidden_units": 128, "t_attn_bias": True,
}


def _parse_bool(text):
    if str(text).lower() in ("true", "1", "yes"):
        return True
    if str(text).lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def cmd_train(ns):
    defaults = dict(TRAIN_DEFAULTS)
    defaults["seed"] = _env_seed()
    defaults["init_seed"] = _env_seed()
    opts = _resolve(ns, defaults, ns.config)
    split, meta = data_pipeline.load_dataset(ns.data)
    n_classes = len(split.mapping)
    if opts["head"] == "binary" and n_classes != 2:
        raise ConfigError(
            f"binary head needs exactly 2 classes, dataset has {n_classes}")
    model_cfg = ModelConfig(
        input_dim=split.x_train.shape[1],
        kernel_sizes=tuple(_parse_int_list(opts["kernel_sizes"])),
        filters=int(opts["filters"]), gru_units=int(opts["gru_units"]),
        attn_ratio=int(opts["attn_ratio"]), dropout1=float(opts["dropout1"]),
        dropout2=float(opts["dropout2"]), hidden_units=int(opts["hidden_units"]),
        head=opts["head"], n_classes=n_classes, init_seed=int(opts["init_seed"]),
        t_attn_bias=_parse_bool(opts["t_attn_bias"]))
    train_cfg = training.TrainConfig(
        learning_rate=float(opts["learning_rate"]), beta1=float(opts["beta1"]),
        beta2=float(opts["beta2"]), eps=float(opts["eps"]),
        batch_size=int(opts["batch_size"]), epochs=int(opts["epochs"]),
        val_fraction=float(opts["val_fraction"]), patience=int(opts["patience"]),
        shuffle_seed=int(opts["seed"]),
        loss="bce" if opts["head"] == "binary" else "scce")
    os.makedirs(ns.out, exist_ok=True)
    ckpt = os.path.join(ns.out, "best_model.ckpt")
    history_path = os.path.join(ns.out, "history.jsonl")
    params = build_model(model_cfg)
    print(f"model: {num_params(params)} trainable parameters, "
          f"{opts['head']} head over {n_classes} classes")

    def progress(rec):
        print(f"epoch {rec['epoch']}/{train_cfg.epochs} "
              f"train_loss={rec['train_loss']:.6f} train_acc={rec['train_acc']:.4f} "
              f"val_loss={rec['val_loss']:.6f} val_acc={rec['val_acc']:.4f}")

    best, history = training.train(params, train_cfg, model_cfg, split,
                                   checkpoint_path=ckpt, extra_meta=meta,
                                   progress=progress)
    training.write_history(history, history_path)
    _write_manifest(os.path.join(ns.out, "manifest.json"), "train",
                    {**opts, "model_config": model_cfg.to_dict(),
                     "train_config": train_cfg.to_dict()},
                    {"data": ns.data},
                    {"checkpoint": ckpt, "history": history_path})
    print(f"best epoch {history.best_epoch} ({history.stop_reason}); "
          f"checkpoint at {ckpt}")
    return EXIT_OK


def cmd_evaluate(ns):
    params, cfg, meta = load_checkpoint(ns.model)
    split, _ = data_pipeline.load_dataset(ns.data)
    if split.x_test.shape[1] != cfg.input_dim:
        raise ConfigError(
            f"dataset has {split.x_test.shape[1]} features but the model "
            f"expects {cfg.input_dim}")
    n_classes = len(split.mapping)
    expected = 2 if cfg.head == "binary" else cfg.n_classes
    if n_classes != expected:
        raise ConfigError(
            f"dataset has {n_classes} classes but the model was trained for {expected}")
    outputs = _infer_batches(params, cfg, split.x_test)
    y_pred = evaluation.predict_labels(outputs, cfg.head)
    cm = evaluation.confusion(split.y_test, y_pred, n_classes,
                              class_names=split.mapping.classes)
    rep = evaluation.report(cm)
    with open(ns.report, "w", encoding="utf-8") as fh:
        json.dump(evaluation.report_dict(rep), fh, indent=2, sort_keys=True)
        fh.write("\n")
    human = ns.human or os.path.splitext(ns.report)[0] + ".txt"
    text = evaluation.format_report(rep)
    with open(human, "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(ns.cm, "w", encoding="utf-8") as fh:
        fh.write(evaluation.confusion_csv(cm))
    _write_manifest(ns.report + ".manifest.json", "evaluate", {},
                    {"model": ns.model, "data": ns.data},
                    {"report": ns.report, "human_report": human, "confusion_matrix": ns.cm})
    print(text, end="")
    print(f"accuracy {rep.accuracy:.6f}")
    return EXIT_OK


def cmd_predict(ns):
    params, cfg, meta = load_checkpoint(ns.model)
    if not meta or "feature_names" not in meta:
        raise ConfigError(
            f"{ns.model} carries no preprocessing metadata; train from a "
            "dataset produced by `cstafnet preprocess`")
    with open(ns.input, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{ns.input}: empty file, expected a header row") from None
        missing = [c for c in meta["feature_names"] if c not in header]
        if missing:
            raise ConfigError(f"{ns.input} lacks required feature columns: {missing}")
        rows, row_ids = [], []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                if ns.strict:
                    raise ParseError(
                        f"{ns.input}: row {i} has {len(row)} cells, expected {len(header)}")
                print(f"warning: skipping ragged row {i}", file=sys.stderr)
                continue
            rows.append(dict(zip(header, row)))
            row_ids.append(i - 1)

    classes = meta["classes"]
    with open(ns.output, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row_id", "predicted_class"] + [f"p_{c}" for c in classes])
        if rows:
            x, warnings = data_pipeline.rows_to_features(rows, meta)
            if warnings and ns.strict:
                raise ParseError(f"{ns.input}: {warnings[0]}")
            for w in warnings:
                print(f"warning: {w}", file=sys.stderr)
            outputs = _infer_batches(params, cfg, x)
            if cfg.head == "binary":
                p1 = outputs.reshape(-1)
                probs = np.stack([1.0 - p1, p1], axis=1)
            else:
                probs = outputs
            preds = evaluation.predict_labels(outputs, cfg.head)
            for rid, pred, prow in zip(row_ids, preds, probs):
                writer.writerow([rid, classes[int(pred)]] + [repr(float(v)) for v in prow])
    _write_manifest(ns.output + ".manifest.json", "predict",
                    {"strict": bool(ns.strict)},
                    {"model": ns.model, "input": ns.input},
                    {"predictions": ns.output})
    print(f"wrote {len(rows)} predictions to {ns.output}")
    return EXIT_OK


def cmd_selfcheck(ns):
    ok = selfcheck.run_all(inject_gradient_error=ns.inject_gradient_error)
    return EXIT_OK if ok else EXIT_SELFCHECK


# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="cstafnet",
        description="Train and run the multi-scale conv + BiGRU + dual-attention "
                    "intrusion detector on network-flow CSVs.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="impute, encode, split and scale a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--label-col", dest="label_col")
    p.add_argument("--drop-cols", dest="drop_cols",
                   help="comma-separated columns to remove (leakage/identifiers)")
    p.add_argument("--test-ratio", dest="test_ratio", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--config", help="JSON file with option defaults")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train on a preprocessed dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--head", choices=("binary", "multiclass"))
    p.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int, help="shuffle seed")
    p.add_argument("--init-seed", dest="init_seed", type=int)
    p.add_argument("--kernel-sizes", dest="kernel_sizes")
    p.add_argument("--filters", type=int)
    p.add_argument("--gru-units", dest="gru_units", type=int)
    p.add_argument("--attn-ratio", dest="attn_ratio", type=int)
    p.add_argument("--dropout1", type=float)
    p.add_argument("--dropout2", type=float)
    p.add_argument("--hidden-units", dest="hidden_units", type=int)
    p.add_argument("--t-attn-bias", dest="t_attn_bias", choices=("true", "false"),
                   help="train the temporal-attention bias term (default true)")
    p.add_argument("--config", help="JSON file with option defaults")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score the test split of a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="machine-readable JSON report")
    p.add_argument("--human", help="human-readable table (default: report with .txt)")
    p.add_argument("--cm", required=True, help="confusion matrix CSV")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("predict", help="score new flow records from a raw CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--strict", action="store_true",
                   help="abort on unparseable rows instead of skipping/imputing")
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("selfcheck",
                       help="run the gradient, invariant and oracle suites")
    p.add_argument("--inject-gradient-error", dest="inject_gradient_error",
                   type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_selfcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.fn(ns)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, PreprocessError, LabelError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CstafnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
