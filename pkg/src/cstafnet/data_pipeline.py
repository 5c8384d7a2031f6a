"""CSV loading and preprocessing for network-flow records: imputation,
leakage-column removal, label encoding, stratified splitting, and
standardization fitted on the training rows only.

Feature matrices are float64; categorical feature columns are integer
encoded (lexicographic class order) before scaling. The fitted artifacts
(imputation values, category maps, scaler) travel with the dataset file
so scoring new CSVs replays the exact same transform.
"""

import csv
import json
import os
import statistics
import struct
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (CheckpointError, ConfigError, ParseError,
                     PreprocessError, ShapeError)
from .numerics import RngState

DATASET_MAGIC = b"CSTDAT1"

_STD_FLOOR = 1e-12


def is_missing(cell):
    s = cell.strip()
    return s == "" or s.lower() == "nan"


@dataclass
class RawTable:
    columns: list
    kinds: list            # "numeric" | "categorical", aligned with columns
    cols: list             # column-major cells; float/str, None where missing
    n_rows: int

    def column(self, name):
        return self.cols[self.columns.index(name)]

    def kind(self, name):
        return self.kinds[self.columns.index(name)]


@dataclass
class LabelMapping:
    classes: list

    def encode(self, name):
        return self.classes.index(name)

    def decode(self, idx):
        return self.classes[idx]

    def __len__(self):
        return len(self.classes)


@dataclass
class ScalerStats:
    mean: np.ndarray
    std: np.ndarray  # population std, floored to 1 for constant columns


@dataclass
class DatasetSplit:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    scaler: ScalerStats = None
    mapping: LabelMapping = None


def load_csv(path, label_column, drop_columns=()):
    """Read a header-and-rows CSV, drop the requested columns, and infer
    per-column kinds (numeric when every non-missing cell parses as a
    number). The label column is always kept and treated as categorical."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            rows.append(row)
    if label_column not in header:
        raise ConfigError(f"label column {label_column!r} not found in {path}")
    for name in drop_columns:
        if name not in header:
            raise ConfigError(f"drop column {name!r} not found in {path}")
    if label_column in drop_columns:
        raise ConfigError(f"label column {label_column!r} cannot also be dropped")
    keep = [i for i, name in enumerate(header) if name not in set(drop_columns)]
    columns = [header[i] for i in keep]
    raw_cols = [[row[i] for row in rows] for i in keep]
    kinds, cols = [], []
    for name, raw in zip(columns, raw_cols):
        if name == label_column:
            kinds.append("categorical")
            cols.append([None if is_missing(c) else c.strip() for c in raw])
            continue
        parsed, numeric = [], True
        for c in raw:
            if is_missing(c):
                parsed.append(None)
                continue
            try:
                parsed.append(float(c))
            except ValueError:
                numeric = False
                break
        if numeric:
            kinds.append("numeric")
            cols.append(parsed)
        else:
            kinds.append("categorical")
            cols.append([None if is_missing(c) else c.strip() for c in raw])
    return RawTable(columns=columns, kinds=kinds, cols=cols, n_rows=len(rows))


def imputation_values(table):
    """Per-column fill values: median for numeric (mean of the middle two
    on even counts), most frequent for categorical (lexicographic
    tie-break)."""
    fills = {}
    for name, kind, col in zip(table.columns, table.kinds, table.cols):
        present = [v for v in col if v is not None]
        if not present:
            raise PreprocessError(f"column {name!r} has no non-missing values to impute from")
        if kind == "numeric":
            fills[name] = float(statistics.median(present))
        else:
            counts = Counter(present)
            top = max(counts.values())
            fills[name] = min(v for v, c in counts.items() if c == top)
    return fills


def impute(table, fills=None):
    """Fill missing cells; non-missing cells pass through untouched."""
    if fills is None:
        fills = imputation_values(table)
    cols = [[fills[name] if v is None else v for v in col]
            for name, col in zip(table.columns, table.cols)]
    return RawTable(columns=list(table.columns), kinds=list(table.kinds),
                    cols=cols, n_rows=table.n_rows)


def encode_labels(values):
    """Map class names to 0..C-1 in lexicographic order."""
    if not values:
        raise PreprocessError("cannot encode an empty label column")
    if any(v is None for v in values):
        raise PreprocessError("label column contains missing values")
    mapping = LabelMapping(classes=sorted(set(values)))
    index = {name: i for i, name in enumerate(mapping.classes)}
    return np.array([index[v] for v in values], dtype=np.int64), mapping


def fit_standardize(x):
    x = np.asarray(x, dtype=np.float64)
    mean = x.mean(axis=0)
    std = np.sqrt(x.var(axis=0))
    floor = _STD_FLOOR * np.maximum(1.0, np.abs(mean))
    std = np.where(std < floor, 1.0, std)
    return ScalerStats(mean=mean, std=std)


def apply_standardize(x, stats):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != stats.mean.shape[0]:
        raise ShapeError(
            f"feature count {x.shape[1]} does not match scaler ({stats.mean.shape[0]} features)")
    return (x - stats.mean) / stats.std


def split_indices(labels, test_ratio, seed, class_names=None):
    """Per-class shuffle, then cut round(ratio * class size) test rows off
    the front of each class. Deterministic per seed."""
    if not 0.0 < test_ratio < 1.0:
        raise ConfigError(f"test ratio must be in (0, 1), got {test_ratio}")
    labels = np.asarray(labels)
    rng = RngState(seed)
    train_parts, test_parts = [], []
    for c in range(int(labels.max()) + 1 if labels.size else 0):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 1:
            name = class_names[c] if class_names else str(c)
            raise PreprocessError(
                f"class {name!r} has a single sample and cannot be split")
        if len(idx) == 0:
            continue
        shuffled = idx[rng.permutation(len(idx))]
        n_test = round(test_ratio * len(idx))
        test_parts.append(shuffled[:n_test])
        train_parts.append(shuffled[n_test:])
    train_idx = np.concatenate(train_parts) if train_parts else np.array([], dtype=np.int64)
    test_idx = np.concatenate(test_parts) if test_parts else np.array([], dtype=np.int64)
    return train_idx, test_idx


def stratified_split(features, labels, test_ratio, seed, mapping=None):
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    class_names = mapping.classes if mapping else None
    train_idx, test_idx = split_indices(labels, test_ratio, seed, class_names)
    return DatasetSplit(
        x_train=features[train_idx], y_train=labels[train_idx],
        x_test=features[test_idx], y_test=labels[test_idx],
        mapping=mapping)


def feature_matrix(table, label_column, fills=None):
    """Build the float64 feature matrix plus per-feature replay metadata.

    `fills` are the imputation values actually used on this table; they
    ride along in the metadata so scoring can replay them on raw rows.
    """
    if fills is None:
        fills = imputation_values(table)
    names, columns_meta, cols = [], [], []
    for name, kind, col in zip(table.columns, table.kinds, table.cols):
        if name == label_column:
            continue
        names.append(name)
        meta = {"kind": kind, "impute": fills[name]}
        if kind == "numeric":
            cols.append(np.array(col, dtype=np.float64))
        else:
            classes = sorted(set(col))
            index = {v: i for i, v in enumerate(classes)}
            meta["categories"] = classes
            cols.append(np.array([index[v] for v in col], dtype=np.float64))
        columns_meta.append(meta)
    x = np.stack(cols, axis=1) if cols else np.empty((table.n_rows, 0))
    return x, names, columns_meta


def preprocess_table(table, label_column, test_ratio, seed):
    """Run the whole pipeline on a loaded table: impute, encode, split,
    then fit the scaler on the training rows and scale both splits.

    Imputation statistics come from the full table, before splitting;
    only the scaler is fitted on the training rows."""
    fills = imputation_values(table)
    table = impute(table, fills)
    x, feature_names, feature_meta = feature_matrix(table, label_column, fills)
    y, mapping = encode_labels(table.column(label_column))
    split = stratified_split(x, y, test_ratio, seed, mapping)
    split.scaler = fit_standardize(split.x_train)
    split.x_train = apply_standardize(split.x_train, split.scaler)
    split.x_test = apply_standardize(split.x_test, split.scaler)
    meta = {
        "label_column": label_column,
        "feature_names": feature_names,
        "feature_meta": feature_meta,
        "classes": mapping.classes,
        "test_ratio": test_ratio,
        "split_seed": seed,
    }
    return split, meta


def preprocess_csv(path, label_column, drop_columns, test_ratio, seed):
    table = load_csv(path, label_column, drop_columns)
    split, meta = preprocess_table(table, label_column, test_ratio, seed)
    meta["drop_columns"] = list(drop_columns)
    return split, meta


def rows_to_features(rows, meta):
    """Replay the fitted preprocessing on raw CSV rows (dicts of column ->
    cell string) for scoring. Returns (matrix, warnings)."""
    warnings = []
    n = len(rows)
    x = np.empty((n, len(meta["feature_names"])))
    for j, (name, fmeta) in enumerate(zip(meta["feature_names"], meta["feature_meta"])):
        for i, row in enumerate(rows):
            cell = row.get(name, "")
            if fmeta["kind"] == "numeric":
                if is_missing(cell):
                    x[i, j] = fmeta["impute"]
                else:
                    try:
                        x[i, j] = float(cell)
                    except ValueError:
                        warnings.append(
                            f"row {i + 1}: unparseable numeric value {cell!r} in "
                            f"{name!r}, imputed {fmeta['impute']}")
                        x[i, j] = fmeta["impute"]
            else:
                value = fmeta["impute"] if is_missing(cell) else cell.strip()
                try:
                    x[i, j] = fmeta["categories"].index(value)
                except ValueError:
                    warnings.append(
                        f"row {i + 1}: unknown category {value!r} in {name!r}, "
                        f"imputed {fmeta['impute']!r}")
                    x[i, j] = fmeta["categories"].index(fmeta["impute"])
    scaler = ScalerStats(mean=np.array(meta["scaler"]["mean"]),
                         std=np.array(meta["scaler"]["std"]))
    return apply_standardize(x, scaler), warnings


# ---------------------------------------------------------------------------
# dataset file io

def save_dataset(split, meta, path):
    """Binary dataset file: magic, length-prefixed JSON metadata, then the
    four arrays (row-major float64 LE features, int32 LE labels)."""
    header = dict(meta)
    header["n_train"] = int(split.x_train.shape[0])
    header["n_test"] = int(split.x_test.shape[0])
    header["n_features"] = int(split.x_train.shape[1])
    header["scaler"] = {"mean": split.scaler.mean.tolist(),
                        "std": split.scaler.std.tolist()}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(split.x_train, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(split.y_train, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(split.x_test, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(split.y_test, dtype="<i4").tobytes())
    os.replace(tmp, path)


def load_dataset(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0; not a dataset file")
    off = len(DATASET_MAGIC)

    def take(n, what):
        nonlocal off
        if off + n > len(data):
            raise CheckpointError(
                f"{path}: truncated at byte {len(data)} while reading {what}")
        chunk = data[off:off + n]
        off += n
        return chunk

    (blob_len,) = struct.unpack("<Q", take(8, "metadata length"))
    try:
        meta = json.loads(take(blob_len, "metadata").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad metadata block: {exc}") from None
    n_train, n_test, d = meta["n_train"], meta["n_test"], meta["n_features"]
    x_train = np.frombuffer(take(8 * n_train * d, "train features"),
                            dtype="<f8").reshape(n_train, d).copy()
    y_train = np.frombuffer(take(4 * n_train, "train labels"), dtype="<i4").astype(np.int64)
    x_test = np.frombuffer(take(8 * n_test * d, "test features"),
                           dtype="<f8").reshape(n_test, d).copy()
    y_test = np.frombuffer(take(4 * n_test, "test labels"), dtype="<i4").astype(np.int64)
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} unexpected trailing bytes")
    scaler = ScalerStats(mean=np.array(meta["scaler"]["mean"]),
                         std=np.array(meta["scaler"]["std"]))
    mapping = LabelMapping(classes=list(meta["classes"]))
    split = DatasetSplit(x_train=x_train, y_train=y_train,
                         x_test=x_test, y_test=y_test,
                         scaler=scaler, mapping=mapping)
    return split, meta
