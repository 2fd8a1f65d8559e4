"""Ingest KDD-style connection records and turn them into numeric matrices.

Raw files are headerless delimited text, one connection per line.  A
:class:`FeatureSchema` says which columns are continuous, which are nominal
strings (protocol, service, flag, ...), which one holds the class label and
which ones are ignored.  Encoding replaces nominal strings by positive integer
codes and attack names by class ids; the code tables are kept on the dataset
so test files can be encoded with the training codes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
LABEL = "label"
IGNORE = "ignore"
_KINDS = (CONTINUOUS, CATEGORICAL, LABEL, IGNORE)

BUILTIN_SCHEMAS = ("kdd99", "nsl_kdd", "kyoto2006")

_CHUNK_ROWS = 65536


class DatasetError(ValueError):
    """Malformed input file or schema violation."""


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str


@dataclass(frozen=True)
class FeatureSchema:
    """Column layout of a raw file plus the label and category code tables.

    ``columns`` lists every column of the file in order.  Features are the
    continuous and categorical columns; exactly one column is the label.
    """

    name: str
    columns: tuple[ColumnSpec, ...]
    label_map: Mapping[str, int]
    class_names: Mapping[int, str] = field(default_factory=dict)
    delimiter: str = ","
    unknown_labels: str = "error"
    strip_label_dot: bool = True
    fixed_codes: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    sd_exclusions: tuple[str, ...] = ()

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise DatasetError(f"schema {self.name!r}: duplicate column names")
        for c in self.columns:
            if c.kind not in _KINDS:
                raise DatasetError(f"schema {self.name!r}: unknown kind {c.kind!r} for {c.name!r}")
        if sum(c.kind == LABEL for c in self.columns) != 1:
            raise DatasetError(f"schema {self.name!r}: exactly one label column required")
        if not self.features:
            raise DatasetError(f"schema {self.name!r}: no feature columns")
        if any(v < 1 for v in self.label_map.values()):
            raise DatasetError(f"schema {self.name!r}: class ids must be >= 1")
        if self.unknown_labels not in ("error", "drop"):
            raise DatasetError(f"schema {self.name!r}: unknown_labels must be 'error' or 'drop'")
        kinds = {c.name: c.kind for c in self.columns}
        for col in self.fixed_codes:
            if kinds.get(col) != CATEGORICAL:
                raise DatasetError(f"schema {self.name!r}: fixed codes for non-categorical {col!r}")
        for col in self.sd_exclusions:
            if kinds.get(col) not in (CONTINUOUS, CATEGORICAL):
                raise DatasetError(f"schema {self.name!r}: sd exclusion {col!r} is not a feature")

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def feature_columns(self) -> list[int]:
        return [i for i, c in enumerate(self.columns) if c.kind in (CONTINUOUS, CATEGORICAL)]

    @property
    def features(self) -> list[ColumnSpec]:
        return [self.columns[i] for i in self.feature_columns]

    @property
    def feature_names(self) -> list[str]:
        return [c.name for c in self.features]

    @property
    def label_column(self) -> int:
        return next(i for i, c in enumerate(self.columns) if c.kind == LABEL)

    @property
    def classes(self) -> list[int]:
        return sorted(set(self.label_map.values()))

    def feature_index(self, name: str) -> int:
        return self.feature_names.index(name)

    def restrict(self, feature_indices: Sequence[int]) -> FeatureSchema:
        """Schema keeping only the given features (ascending) and the label column."""
        keep = sorted(set(int(i) for i in feature_indices))
        feats = [self.features[i] for i in keep]
        names = {c.name for c in feats}
        return FeatureSchema(
            name=self.name,
            columns=tuple(feats) + (self.columns[self.label_column],),
            label_map=self.label_map, class_names=self.class_names,
            delimiter=self.delimiter, unknown_labels=self.unknown_labels,
            strip_label_dot=self.strip_label_dot,
            fixed_codes={k: v for k, v in self.fixed_codes.items() if k in names},
            sd_exclusions=tuple(n for n in self.sd_exclusions if n in names),
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "delimiter": self.delimiter,
            "columns": [{"name": c.name, "kind": c.kind} for c in self.columns],
            "label_map": dict(self.label_map),
            "class_names": {str(k): v for k, v in sorted(self.class_names.items())},
            "unknown_labels": self.unknown_labels,
            "strip_label_dot": self.strip_label_dot,
            "fixed_codes": {k: dict(v) for k, v in self.fixed_codes.items()},
            "sd_exclusions": list(self.sd_exclusions),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> FeatureSchema:
        try:
            columns = tuple(ColumnSpec(c["name"], c["kind"]) for c in d["columns"])
            return cls(
                name=d.get("name", "custom"),
                columns=columns,
                label_map={str(k): int(v) for k, v in d["label_map"].items()},
                class_names={int(k): str(v) for k, v in d.get("class_names", {}).items()},
                delimiter=d.get("delimiter", ","),
                unknown_labels=d.get("unknown_labels", "error"),
                strip_label_dot=bool(d.get("strip_label_dot", True)),
                fixed_codes={k: {str(a): int(b) for a, b in v.items()}
                             for k, v in d.get("fixed_codes", {}).items()},
                sd_exclusions=tuple(d.get("sd_exclusions", ())),
            )
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"malformed schema: {exc}") from exc


def load_schema(name_or_path: str | Path) -> FeatureSchema:
    """Load a built-in schema by name (``kdd99``, ``nsl_kdd``, ``kyoto2006``) or a JSON file."""
    if str(name_or_path) in BUILTIN_SCHEMAS:
        text = resources.files("moofs").joinpath(f"schemas/{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise DatasetError(f"schema not found: {name_or_path}")
        text = path.read_text()
    return FeatureSchema.from_dict(json.loads(text))


@dataclass
class RawDataset:
    """Raw cells of a file, stored column-wise as byte-string arrays."""

    schema: FeatureSchema
    columns: list[np.ndarray]
    line_numbers: np.ndarray
    source: str = ""

    @property
    def n_rows(self) -> int:
        return len(self.line_numbers)

    def row(self, i: int) -> list[str]:
        return [col[i].decode() for col in self.columns]


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path, schema: FeatureSchema) -> RawDataset:
    """Read a headerless delimited file into a :class:`RawDataset`.

    Blank lines are skipped.  Raises :class:`DatasetError` for a missing or
    empty file, a row with the wrong number of cells (with its line number),
    or a header row in the first line.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"{path}: no such file")
    n_cols = schema.n_columns
    chunks: list[list[np.ndarray]] = [[] for _ in range(n_cols)]
    lines: list[int] = []
    pending: list[list[str]] = []

    def flush():
        for j in range(n_cols):
            chunks[j].append(np.array([r[j].strip().encode() for r in pending], dtype=bytes))
        pending.clear()

    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, quoting=csv.QUOTE_NONE)
        for row in reader:
            lineno = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != n_cols:
                raise DatasetError(
                    f"{path}:{lineno}: expected {n_cols} columns, found {len(row)}")
            if not lines:
                _check_not_header(path, row, schema)
            lines.append(lineno)
            pending.append(row)
            if len(pending) >= _CHUNK_ROWS:
                flush()
    if not lines:
        raise DatasetError(f"{path}: empty file")
    if pending:
        flush()
    columns = [np.concatenate(c) for c in chunks]
    return RawDataset(schema, columns, np.asarray(lines, dtype=np.int64), str(path))


def _check_not_header(path, row, schema):
    for j, spec in enumerate(schema.columns):
        if spec.kind == CONTINUOUS and not _is_number(row[j].strip()):
            raise DatasetError(
                f"{path}:1: first row looks like a header (cell {row[0].strip()!r}; "
                f"column {spec.name!r} holds {row[j].strip()!r}); schema files are headerless")


@dataclass(frozen=True)
class NumericDataset:
    """N x M feature matrix with integer class labels.

    ``encodings`` holds the category code table of every categorical feature.
    """

    values: np.ndarray
    labels: np.ndarray
    schema: FeatureSchema
    encodings: Mapping[str, Mapping[str, int]] = field(default_factory=dict)
    class_names: Mapping[int, str] = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.ndim != 2 or values.shape[0] != labels.shape[0]:
            raise DatasetError("values must be N x M and match the label vector")
        if values.shape[1] != len(self.schema.features):
            raise DatasetError("value columns do not match schema features")
        if not np.all(np.isfinite(values)):
            raise DatasetError("dataset contains non-finite values")
        values.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        if not self.class_names:
            object.__setattr__(self, "class_names", dict(self.schema.class_names))

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return self.schema.feature_names

    def take(self, rows: Sequence[int] | np.ndarray) -> NumericDataset:
        rows = np.asarray(rows, dtype=np.int64)
        return NumericDataset(self.values[rows], self.labels[rows], self.schema,
                              self.encodings, self.class_names)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def _label_text(cell: bytes, strip_dot: bool) -> str:
    text = cell.decode().strip()
    if strip_dot and text.endswith("."):
        text = text[:-1]
    return text


def encode(raw: RawDataset, tables: Mapping[str, Mapping[str, int]] | None = None
           ) -> NumericDataset:
    """Convert raw cells to numbers.

    Without ``tables`` the categorical code tables are built from this file:
    the schema's fixed codes first, then every new category in order of first
    appearance.  With ``tables`` (training codes) the tables are frozen and
    unseen categories encode to 0 with a warning.  Labels missing from the
    label map raise, unless the schema drops them.
    """
    schema = raw.schema
    lab = raw.columns[schema.label_column]
    uniq, inverse = np.unique(lab, return_inverse=True)
    ids = np.zeros(len(uniq), dtype=np.int64)
    dropped: dict[str, int] = {}
    for u, cell in enumerate(uniq):
        text = _label_text(cell, schema.strip_label_dot)
        if text in schema.label_map:
            ids[u] = schema.label_map[text]
        elif schema.unknown_labels == "drop":
            dropped[text] = int(np.sum(inverse == u))
        else:
            first = int(np.argmax(inverse == u))
            raise DatasetError(
                f"{raw.source}:{raw.line_numbers[first]}: unknown label {text!r}")
    labels = ids[inverse]
    keep = labels > 0
    if dropped:
        logger.warning("dropped %d rows with labels outside the label map: %s",
                       int((~keep).sum()), ", ".join(sorted(dropped)))

    frozen = tables is not None
    out_tables: dict[str, dict[str, int]] = {}
    cols = []
    for j in schema.feature_columns:
        spec = schema.columns[j]
        cell = raw.columns[j][keep]
        if spec.kind == CONTINUOUS:
            cols.append(_parse_continuous(cell, raw, j, keep))
            continue
        if frozen:
            table = dict(tables.get(spec.name, {}))
        else:
            table = dict(schema.fixed_codes.get(spec.name, {}))
        codes, table = _encode_categorical(cell, table, frozen, spec.name)
        out_tables[spec.name] = table
        cols.append(codes)
    values = np.column_stack(cols) if cols else np.empty((int(keep.sum()), 0))
    return NumericDataset(values, labels[keep], schema, out_tables)


def _parse_continuous(cell, raw, j, keep):
    try:
        return cell.astype(np.float64)
    except ValueError:
        lines = raw.line_numbers[keep]
        for i, c in enumerate(cell):
            if not _is_number(c.decode()):
                raise DatasetError(
                    f"{raw.source}:{lines[i]}: cannot parse {c.decode()!r} as a number "
                    f"in column {raw.schema.columns[j].name!r}") from None
        raise


def _encode_categorical(cell: np.ndarray, table: dict[str, int], frozen: bool, name: str):
    uniq, first, inverse = np.unique(cell, return_index=True, return_inverse=True)
    codes = np.zeros(len(uniq), dtype=np.float64)
    unseen = []
    next_code = max(table.values(), default=0) + 1
    for u in np.argsort(first, kind="stable"):
        text = uniq[u].decode()
        if text in table:
            codes[u] = table[text]
        elif frozen:
            unseen.append(text)
        else:
            table[text] = next_code
            codes[u] = next_code
            next_code += 1
    if unseen:
        warnings.warn(f"column {name!r}: {len(unseen)} categories unseen in training "
                      f"encoded as 0: {', '.join(unseen[:10])}", stacklevel=3)
    return codes[inverse], table


@dataclass(frozen=True)
class NormalizedView:
    """Min-max scaled copy of a feature matrix together with the scaling used."""

    values: np.ndarray
    mins: np.ndarray
    maxs: np.ndarray

    def denormalize(self) -> np.ndarray:
        return self.values * (self.maxs - self.mins) + self.mins


def apply_minmax(values: np.ndarray, mins: np.ndarray, maxs: np.ndarray,
                 clamp: bool = True) -> np.ndarray:
    """Scale ``values`` column-wise with stored min/max; constant columns map to 0."""
    values = np.asarray(values, dtype=np.float64)
    span = np.asarray(maxs, dtype=np.float64) - np.asarray(mins, dtype=np.float64)
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (values - mins) / safe, 0.0)
    if clamp:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def normalize_minmax(ds: NumericDataset | np.ndarray) -> NormalizedView:
    values = ds.values if isinstance(ds, NumericDataset) else np.asarray(ds, dtype=np.float64)
    if values.shape[0] < 1:
        raise DatasetError("cannot normalize an empty dataset")
    mins = values.min(axis=0)
    maxs = values.max(axis=0)
    return NormalizedView(apply_minmax(values, mins, maxs, clamp=False), mins, maxs)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split_indices(labels: np.ndarray, test_fraction: float, seed: int
                             ) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        if len(idx) < 2:
            warnings.warn(f"class {c} has a single sample; assigned to the training side",
                          stacklevel=3)
            train.append(idx)
            continue
        n_test = min(max(_round_half_up(test_fraction * len(idx)), 1), len(idx) - 1)
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.empty(0, np.int64)
    return cat(train), cat(test)


def stratified_split(ds: NumericDataset, test_fraction: float, seed: int
                     ) -> tuple[NumericDataset, NumericDataset]:
    """Per-class random split; each side keeps the original row order."""
    train, test = stratified_split_indices(ds.labels, test_fraction, seed)
    return ds.take(train), ds.take(test)


def kfold_indices(labels: np.ndarray, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    rng = np.random.default_rng(seed)
    # shuffled class blocks dealt round-robin: fold sizes and per-class counts differ by <= 1
    order = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        order.append(idx)
    order = np.concatenate(order)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[order] = np.arange(n) % k
    everything = np.arange(n)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def kfold_partition(ds: NumericDataset, k: int, seed: int
                    ) -> list[tuple[NumericDataset, NumericDataset]]:
    return [(ds.take(tr), ds.take(va)) for tr, va in kfold_indices(ds.labels, k, seed)]


def binarize_labels(ds: NumericDataset, positive_class: int) -> NumericDataset:
    """One-vs-rest relabeling: 1 for ``positive_class``, 0 for everything else."""
    known = set(ds.schema.label_map.values()) | set(ds.class_names)
    if positive_class not in known:
        raise ValueError(f"unknown class id {positive_class}")
    labels = (ds.labels == positive_class).astype(np.int64)
    if not labels.any():
        warnings.warn(f"class {positive_class} does not occur in the data", stacklevel=2)
    name = ds.class_names.get(positive_class, str(positive_class))
    return NumericDataset(ds.values, labels, ds.schema, ds.encodings,
                          {0: "rest", 1: name})


def subsample_stratified(ds: NumericDataset, n_rows: int, seed: int) -> NumericDataset:
    """Stratified random subset of exactly ``n_rows`` rows, kept in file order.

    Class quotas are proportional (largest remainder, ties to the smaller
    class id) and every class keeps at least one row when ``n_rows`` allows.
    """
    if n_rows >= ds.n_samples:
        return ds
    if n_rows < 1:
        raise ValueError("n_rows must be positive")
    classes, counts = np.unique(ds.labels, return_counts=True)
    exact = counts * n_rows / ds.n_samples
    quota = np.floor(exact).astype(np.int64)
    if n_rows >= len(classes):
        quota = np.maximum(quota, 1)
    while quota.sum() > n_rows:  # minimum-one bumps overshot; take back from the largest
        quota[int(np.argmax(quota))] -= 1
    order = np.lexsort((classes, -(exact - quota)))
    for i in order[: n_rows - int(quota.sum())]:
        quota[i] += 1
    rng = np.random.default_rng(seed)
    keep = []
    for c, q in zip(classes, quota):
        idx = np.flatnonzero(ds.labels == c)
        rng.shuffle(idx)
        keep.append(idx[:q])
    return ds.take(np.sort(np.concatenate(keep)))


# -- persistence -----------------------------------------------------------

def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _format_row(row: Iterable[float]) -> str:
    return ",".join(repr(float(v)) for v in row)


def save_encoded(ds: NumericDataset, csv_path: str | Path) -> None:
    """Write features then label, one row per line, floats in round-trip form."""
    with open(csv_path, "w", newline="\n") as fh:
        for row, lab in zip(ds.values.tolist(), ds.labels.tolist()):
            fh.write(f"{_format_row(row)},{lab}\n")


def sidecar_dict(ds: NumericDataset, mins=None, maxs=None, extra: Mapping | None = None) -> dict:
    if mins is None:
        view = normalize_minmax(ds)
        mins, maxs = view.mins, view.maxs
    d = {
        "schema": ds.schema.to_dict(),
        "feature_names": ds.feature_names,
        "encodings": {k: dict(v) for k, v in sorted(ds.encodings.items())},
        "class_names": {str(k): v for k, v in sorted(ds.class_names.items())},
        "min": [float(v) for v in mins],
        "max": [float(v) for v in maxs],
        "n_samples": ds.n_samples,
        "class_counts": {str(int(c)): int(n) for c, n in
                         zip(*np.unique(ds.labels, return_counts=True))},
    }
    if extra:
        d.update(extra)
    return d


def load_encoded(csv_path: str | Path, sidecar: Mapping) -> NumericDataset:
    schema = FeatureSchema.from_dict(sidecar["schema"])
    m = len(schema.features)
    data = np.loadtxt(csv_path, delimiter=",", ndmin=2)
    if data.shape[1] != m + 1:
        raise DatasetError(f"{csv_path}: expected {m + 1} columns, found {data.shape[1]}")
    class_names = {int(k): v for k, v in sidecar.get("class_names", {}).items()}
    return NumericDataset(data[:, :m], data[:, m].astype(np.int64), schema,
                          sidecar.get("encodings", {}), class_names)
