"""Log-table preprocessing: parse, clean, encode, normalize, split, reduce.

Every fitted transform (one-hot vocabulary, normalizer statistics, PCA basis)
is computed from the training split only and then applied unchanged to the
validation and test splits.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .serialization import atomic_write_text

log = logging.getLogger(__name__)

MISSING_TOKENS = {"", "?", "na", "n/a", "nan", "null", "none"}
KINDS = ("numeric", "categorical", "label")


class FormatError(ValueError):
    """Input file does not match the schema layout."""


class InputError(ValueError):
    """Input is well-formed but unusable (empty, out of range, ...)."""


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    drop: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")


@dataclass
class DatasetSchema:
    """Column layout plus the label mapping.

    Exactly one of ``positive_labels`` (these are anomalies, all else normal)
    or ``normal_labels`` (these are normal, all else anomalies) is set.
    """

    columns: list[Column]
    positive_labels: frozenset[str] | None = None
    normal_labels: frozenset[str] | None = None
    name: str = "custom"
    delimiter: str = ","
    has_header: bool = False
    checksums: dict[str, str | None] = field(default_factory=dict)

    def __post_init__(self):
        labels = [c for c in self.columns if c.kind == "label"]
        if len(labels) != 1:
            raise ValueError(f"schema needs exactly one label column, found {len(labels)}")
        if not any(c.kind != "label" and not c.drop for c in self.columns):
            raise ValueError("schema needs at least one feature column")
        if (self.positive_labels is None) == (self.normal_labels is None):
            raise ValueError("set exactly one of positive_labels / normal_labels")

    def label_bit(self, raw: str) -> int:
        raw = raw.strip()
        if self.positive_labels is not None:
            return int(raw in self.positive_labels)
        return int(raw not in self.normal_labels)

    @property
    def numeric_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "numeric" and not c.drop]

    @property
    def categorical_columns(self) -> list[str]:
        return [c.name for c in self.columns if c.kind == "categorical" and not c.drop]

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "delimiter": self.delimiter,
            "has_header": self.has_header,
            "columns": [{"name": c.name, "kind": c.kind, "drop": c.drop} for c in self.columns],
            "checksums": dict(self.checksums),
        }
        if self.positive_labels is not None:
            d["positive_labels"] = sorted(self.positive_labels)
        else:
            d["normal_labels"] = sorted(self.normal_labels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSchema":
        pos = d.get("positive_labels")
        neg = d.get("normal_labels")
        return cls(
            columns=[Column(c["name"], c["kind"], bool(c.get("drop", False))) for c in d["columns"]],
            positive_labels=frozenset(pos) if pos is not None else None,
            normal_labels=frozenset(neg) if neg is not None else None,
            name=d.get("name", "custom"),
            delimiter=d.get("delimiter", ","),
            has_header=bool(d.get("has_header", False)),
            checksums=dict(d.get("checksums", {})),
        )

    @classmethod
    def load(cls, path) -> "DatasetSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def bundled_schema(name: str = "nsl_kdd") -> DatasetSchema:
    text = resources.files("netanomaly").joinpath("schemas", f"{name}.json").read_text()
    return DatasetSchema.from_dict(json.loads(text))


@dataclass
class Dataset:
    """Labeled records in chronological (original row) order."""

    numeric: np.ndarray
    labels: np.ndarray
    row_index: np.ndarray
    numeric_names: list[str]
    categorical: np.ndarray | None = None
    categorical_names: list[str] = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        self.numeric = np.asarray(self.numeric, dtype=np.float64).reshape(len(self.labels), -1)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.row_index = np.asarray(self.row_index, dtype=np.int64)
        if self.categorical is None:
            self.categorical = np.empty((len(self.labels), 0), dtype=object)
        if not (len(self.numeric) == len(self.labels) == len(self.row_index) == len(self.categorical)):
            raise ValueError("dataset columns have inconsistent lengths")
        if not np.all((self.labels == 0) | (self.labels == 1)):
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def features(self) -> np.ndarray:
        if self.categorical.shape[1]:
            raise ValueError("dataset still has categorical columns; one-hot encode it first")
        return self.numeric

    @property
    def dim(self) -> int:
        return self.numeric.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.numeric[idx],
            self.labels[idx],
            self.row_index[idx],
            list(self.numeric_names),
            self.categorical[idx],
            list(self.categorical_names),
            self.provenance,
        )

    def chronological(self) -> "Dataset":
        return self.subset(np.argsort(self.row_index, kind="stable"))

    def with_numeric(self, numeric: np.ndarray, names: list[str]) -> "Dataset":
        return Dataset(numeric, self.labels, self.row_index, names, None, [], self.provenance)


@dataclass
class CleaningReport:
    rows_read: int = 0
    rows_kept: int = 0
    excluded_rows: int = 0
    excluded_reasons: dict[str, int] = field(default_factory=dict)
    imputed: dict[str, int] = field(default_factory=dict)

    def exclude(self, reason: str) -> None:
        self.excluded_rows += 1
        self.excluded_reasons[reason] = self.excluded_reasons.get(reason, 0) + 1


def _is_missing(tok: str) -> bool:
    return tok.strip().lower() in MISSING_TOKENS


def parse_dataset(source, schema: DatasetSchema) -> tuple[Dataset, CleaningReport]:
    """Parse a CSV stream (or path) against ``schema``.

    Rows with an unparseable numeric or a missing label are dropped; missing
    numerics are imputed with the column median of the kept rows.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return parse_dataset(fh, schema)

    reader = csv.reader(source, delimiter=schema.delimiter)
    ncols = len(schema.columns)
    report = CleaningReport()
    num_cols = [i for i, c in enumerate(schema.columns) if c.kind == "numeric" and not c.drop]
    cat_cols = [i for i, c in enumerate(schema.columns) if c.kind == "categorical" and not c.drop]
    label_col = next(i for i, c in enumerate(schema.columns) if c.kind == "label")

    numeric_rows: list[list[float]] = []
    cat_rows: list[list[str]] = []
    labels: list[int] = []
    index: list[int] = []
    data_row = 0
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not t.strip() for t in row):
            continue
        if schema.has_header and lineno == 1:
            if len(row) != ncols:
                raise FormatError(f"line {lineno}: header has {len(row)} columns, schema has {ncols}")
            continue
        if len(row) != ncols:
            raise FormatError(f"line {lineno}: row has {len(row)} columns, schema has {ncols}")
        report.rows_read += 1
        row_id = data_row
        data_row += 1
        raw_label = row[label_col]
        if _is_missing(raw_label):
            report.exclude("missing_label")
            continue
        values = []
        bad = False
        for i in num_cols:
            tok = row[i].strip()
            if _is_missing(tok):
                values.append(math.nan)
                continue
            try:
                v = float(tok)
            except ValueError:
                bad = True
                break
            if not math.isfinite(v):
                bad = True
                break
            values.append(v)
        if bad:
            report.exclude("unparseable_numeric")
            continue
        numeric_rows.append(values)
        cat_rows.append([row[i].strip() for i in cat_cols])
        labels.append(schema.label_bit(raw_label))
        index.append(row_id)

    if not labels:
        raise InputError("no usable rows after cleaning")
    numeric = np.asarray(numeric_rows, dtype=np.float64).reshape(len(labels), len(num_cols))
    for j, name in enumerate(schema.numeric_columns):
        col = numeric[:, j]
        missing = np.isnan(col)
        if missing.any():
            present = col[~missing]
            col[missing] = float(np.median(present)) if present.size else 0.0
            report.imputed[name] = int(missing.sum())
    report.rows_kept = len(labels)
    dataset = Dataset(
        numeric,
        np.asarray(labels),
        np.asarray(index),
        schema.numeric_columns,
        np.asarray(cat_rows, dtype=object).reshape(len(labels), len(cat_cols)),
        schema.categorical_columns,
        provenance=f"parsed with schema {schema.name}",
    )
    return dataset, report


def parse_text(text: str, schema: DatasetSchema) -> tuple[Dataset, CleaningReport]:
    return parse_dataset(io.StringIO(text), schema)


@dataclass
class OneHotEncoder:
    vocabularies: list[list[str]]
    categorical_names: list[str]

    @classmethod
    def fit(cls, train: Dataset) -> "OneHotEncoder":
        vocabs = [sorted(set(train.categorical[:, j].tolist())) for j in range(train.categorical.shape[1])]
        return cls(vocabs, list(train.categorical_names))

    @property
    def width(self) -> int:
        return sum(len(v) for v in self.vocabularies)

    def transform(self, dataset: Dataset) -> Dataset:
        if dataset.categorical.shape[1] != len(self.vocabularies):
            raise InputError(
                f"dataset has {dataset.categorical.shape[1]} categorical columns, "
                f"encoder expects {len(self.vocabularies)}"
            )
        if not self.vocabularies:
            return dataset
        blocks = [dataset.numeric]
        names = list(dataset.numeric_names)
        for j, vocab in enumerate(self.vocabularies):
            lookup = {v: i for i, v in enumerate(vocab)}
            block = np.zeros((len(dataset), len(vocab)))
            for r, value in enumerate(dataset.categorical[:, j]):
                pos = lookup.get(value)
                if pos is not None:
                    block[r, pos] = 1.0
            blocks.append(block)
            names.extend(f"{self.categorical_names[j]}={v}" for v in vocab)
        return dataset.with_numeric(np.hstack(blocks), names)

    def to_dict(self) -> dict:
        return {"vocabularies": self.vocabularies, "categorical_names": self.categorical_names}

    @classmethod
    def from_dict(cls, d: dict) -> "OneHotEncoder":
        return cls([list(v) for v in d["vocabularies"]], list(d["categorical_names"]))


def one_hot_encode(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Fit the vocabulary on ``train`` and encode it along with ``others``."""
    enc = OneHotEncoder.fit(train)
    return [enc.transform(d) for d in (train, *others)]


@dataclass
class NormalizationParams:
    mode: str
    center: np.ndarray  # min or mean
    scale: np.ndarray  # max-min or stddev; 0 marks a constant column

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.center.size:
            raise InputError(f"normalizer fitted on {self.center.size} features, got {x.shape[-1]}")
        safe = np.where(self.scale > 0, self.scale, 1.0)
        out = (x - self.center) / safe
        out[..., self.scale == 0] = 0.0
        return out

    def to_dict(self) -> dict:
        return {"mode": self.mode, "center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationParams":
        return cls(d["mode"], np.asarray(d["center"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def fit_normalizer(train, mode: str = "minmax") -> NormalizationParams:
    x = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=np.float64)
    if x.shape[0] == 0:
        raise InputError("cannot fit a normalizer on an empty split")
    if mode == "minmax":
        lo = x.min(axis=0)
        return NormalizationParams(mode, lo, x.max(axis=0) - lo)
    if mode == "zscore":
        return NormalizationParams(mode, x.mean(axis=0), x.std(axis=0))
    raise ValueError(f"unknown normalization mode {mode!r}")


def apply_normalizer(params: NormalizationParams, dataset: Dataset) -> Dataset:
    return dataset.with_numeric(params.apply(dataset.features), dataset.numeric_names)


def drop_outliers(dataset: Dataset, z: float = 8.0) -> Dataset:
    """Drop rows with any |z-score| above ``z`` (statistics from ``dataset`` itself)."""
    x = dataset.features
    std = x.std(axis=0)
    zs = np.abs(x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)
    return dataset.subset(np.flatnonzero(~(zs > z).any(axis=1)))


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


def split_dataset(
    dataset: Dataset, train_frac: float = 0.7, val_frac_of_train: float = 0.2, seed: int = 0
) -> Splits:
    """Seeded shuffle into train/val/test; each split is returned in chronological order."""
    for f in (train_frac, val_frac_of_train):
        if not 0.0 < f < 1.0:
            raise InputError(f"split fraction {f} outside (0, 1)")
    n = len(dataset)
    n_pool = int(math.floor(n * train_frac))
    n_val = int(math.floor(n_pool * val_frac_of_train))
    n_train = n_pool - n_val
    sizes = {"train": n_train, "val": n_val, "test": n - n_pool}
    empty = [k for k, v in sizes.items() if v <= 0]
    if empty:
        raise InputError(f"split would leave {', '.join(empty)} empty ({sizes})")
    order = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(5,))).permutation(n)
    parts = (order[:n_train], order[n_train:n_pool], order[n_pool:])
    return Splits(*(dataset.subset(np.sort(p)).chronological() for p in parts))


def jacobi_eigh(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues, eigenvectors as columns), sorted by descending eigenvalue.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max(initial=0))):
        raise ValueError("jacobi_eigh needs a symmetric square matrix")
    v = np.eye(n)
    negligible = 1e-30 * max(1.0, float(np.abs(a).max(initial=0.0)))
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off < tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < negligible:
                    # far below tol; rotating on it would overflow theta
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        log.warning("Jacobi iteration hit %d sweeps without converging", max_sweeps)
    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


@dataclass
class PcaParams:
    mean: np.ndarray
    projection: np.ndarray  # (dim, k), orthonormal columns
    explained_variance: np.ndarray  # ratios, descending

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.projection

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z @ self.projection.T + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "projection": self.projection.tolist(),
            "explained_variance": self.explained_variance.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaParams":
        mean = np.asarray(d["mean"], dtype=np.float64)
        return cls(
            mean,
            np.asarray(d["projection"], dtype=np.float64).reshape(mean.size, -1),
            np.asarray(d["explained_variance"], dtype=np.float64),
        )


def pca_reduce(train, k: int) -> PcaParams:
    x = train.features if isinstance(train, Dataset) else np.asarray(train, dtype=np.float64)
    dim = x.shape[1]
    if not 1 <= k <= dim:
        raise InputError(f"k={k} outside [1, {dim}]")
    if x.shape[0] < 2:
        raise InputError("PCA needs at least two rows")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (x.shape[0] - 1)
    vals, vecs = jacobi_eigh(cov)
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    ratios = vals / total if total > 0 else np.zeros_like(vals)
    return PcaParams(mean, vecs[:, :k], ratios[:k])


@dataclass
class Preprocessor:
    """One-hot encoder, normalizer and optional PCA, all fitted on one training split."""

    encoder: OneHotEncoder
    normalizer: NormalizationParams
    pca: PcaParams | None = None

    @classmethod
    def fit(cls, train: Dataset, mode: str = "minmax", pca_k: int | None = None) -> "Preprocessor":
        encoder = OneHotEncoder.fit(train)
        encoded = encoder.transform(train)
        normalizer = fit_normalizer(encoded, mode)
        pca = pca_reduce(normalizer.apply(encoded.features), pca_k) if pca_k else None
        return cls(encoder, normalizer, pca)

    def transform(self, dataset: Dataset) -> Dataset:
        encoded = self.encoder.transform(dataset)
        x = self.normalizer.apply(encoded.features)
        names = encoded.numeric_names
        if self.pca is not None:
            x = self.pca.apply(x)
            names = [f"pc{i}" for i in range(x.shape[1])]
        return encoded.with_numeric(x, names)

    @property
    def output_dim(self) -> int:
        return self.pca.projection.shape[1] if self.pca is not None else self.normalizer.center.size

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "pca": self.pca.to_dict() if self.pca is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(
            OneHotEncoder.from_dict(d["encoder"]),
            NormalizationParams.from_dict(d["normalizer"]),
            PcaParams.from_dict(d["pca"]) if d.get("pca") else None,
        )


def write_canonical_csv(dataset: Dataset, path) -> None:
    """Cleaned, encoded dataset as CSV: row_index, features..., label."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["row_index", *dataset.numeric_names, "label"])
    for i, row, y in zip(dataset.row_index, dataset.features, dataset.labels):
        w.writerow([int(i), *(repr(float(v)) for v in row), int(y)])
    atomic_write_text(path, buf.getvalue())


def read_canonical_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    arr = np.asarray([[float(v) for v in r] for r in body]).reshape(len(body), len(header))
    return Dataset(arr[:, 1:-1], arr[:, -1].astype(int), arr[:, 0].astype(int), header[1:-1], provenance=str(path))
