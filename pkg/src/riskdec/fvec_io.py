"""Featurized datasets: data model, FVEC/CSV formats, and partitioning.

FVEC layout (little-endian)::

    b"FVEC" | u8 version=1 | u8 dtype (0=f32, 1=f64) | u32 n | u32 d | u32 C
    n*d features, row-major | n labels as u32
"""

from __future__ import annotations

import csv
import math
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DataValidationError,
    FormatError,
    ParseError,
    PlanError,
    SamplingError,
    TruncatedFileError,
)

MAGIC = b"FVEC"
VERSION = 1
HEADER = struct.Struct("<4sBBIII")
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}

S_TR = "S_tr"
S_REST = "S_tr\\S_sub"
S_SUB = "S_sub"
S_TE = "S_te"


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.features)
        if X.dtype not in DTYPE_CODES:
            X = X.astype(np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise DataValidationError(f"features must be 2-d, got shape {X.shape}")
        n, d = X.shape
        if n < 1 or d < 1:
            raise DataValidationError(f"need n >= 1 and d >= 1, got n={n}, d={d}")
        if y.shape != (n,):
            raise DataValidationError(f"labels shape {y.shape} does not match {n} rows")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise DataValidationError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 1:
            raise DataValidationError("n_classes must be >= 1")
        if y.min() < 0 or y.max() >= self.n_classes:
            bad = int(y.max()) if y.max() >= self.n_classes else int(y.min())
            raise DataValidationError(f"label {bad} outside [0, {self.n_classes})")
        if not np.all(np.isfinite(X)):
            raise DataValidationError("features contain non-finite values")
        X = X.copy()
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", int(self.n_classes))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices, name=None) -> "FeatureDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return FeatureDataset(self.features[idx], self.labels[idx], self.n_classes,
                              name if name is not None else self.name)

    def with_features(self, features, name=None) -> "FeatureDataset":
        return FeatureDataset(features, self.labels, self.n_classes,
                              name if name is not None else self.name)

    def __eq__(self, other):
        if not isinstance(other, FeatureDataset):
            return NotImplemented
        return (self.n_classes == other.n_classes
                and self.features.dtype == other.features.dtype
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels))

    __hash__ = None


def concat(a: FeatureDataset, b: FeatureDataset, name="") -> FeatureDataset:
    if a.d != b.d:
        raise DataValidationError(f"dimension mismatch {a.d} vs {b.d}")
    return FeatureDataset(np.vstack([a.features, b.features]),
                          np.concatenate([a.labels, b.labels]),
                          max(a.n_classes, b.n_classes), name)


def encode_fvec(ds: FeatureDataset) -> bytes:
    code = DTYPE_CODES[ds.features.dtype]
    header = HEADER.pack(MAGIC, VERSION, code, ds.n, ds.d, ds.n_classes)
    feats = np.ascontiguousarray(ds.features, dtype=DTYPES[code]).tobytes()
    labels = ds.labels.astype("<u4").tobytes()
    return header + feats + labels


def decode_fvec(buf: bytes, name: str = "") -> FeatureDataset:
    if len(buf) < HEADER.size:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise FormatError(f"bad magic {buf[:4]!r}")
        raise TruncatedFileError(f"header needs {HEADER.size} bytes, got {len(buf)}")
    magic, version, code, n, d, C = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported FVEC version {version}")
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = DTYPES[code]
    n_feat = n * d * dtype.itemsize
    expected = HEADER.size + n_feat + 4 * n
    if len(buf) < expected:
        raise TruncatedFileError(f"payload truncated: expected {expected} bytes, got {len(buf)}")
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload")
    X = np.frombuffer(buf, dtype=dtype, count=n * d, offset=HEADER.size).reshape(n, d)
    y = np.frombuffer(buf, dtype="<u4", count=n, offset=HEADER.size + n_feat)
    if n and int(y.max()) >= C:
        raise DataValidationError(f"label {int(y.max())} >= n_classes {C}")
    return FeatureDataset(X.astype(dtype.newbyteorder("=")), y.astype(np.int64), C, name)


def load_fvec(path) -> FeatureDataset:
    path = Path(path)
    return decode_fvec(path.read_bytes(), name=path.stem)


def save_fvec(ds: FeatureDataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_fvec(ds))
    os.replace(tmp, path)


def load_csv(path, has_header: bool = False) -> FeatureDataset:
    """Rectangular numeric CSV whose last column is the integer label.

    The class count is inferred as max label + 1; a warning names labels
    that never occur.
    """
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            rows.append((lineno, row))
    if not rows:
        raise ParseError(f"{path}: no data rows")
    width = len(rows[0][1])
    if width < 2:
        raise ParseError(f"{path}: need at least one feature column and a label column")
    feats = np.empty((len(rows), width - 1))
    labels = np.empty(len(rows), dtype=np.int64)
    for i, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
        try:
            feats[i] = [float(c) for c in row[:-1]]
            label = float(row[-1])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        if label != int(label) or label < 0:
            raise ParseError(f"{path}:{lineno}: label {row[-1]!r} is not a class index")
        labels[i] = int(label)
    C = int(labels.max()) + 1
    missing = sorted(set(range(C)) - set(labels.tolist()))
    if missing:
        warnings.warn(f"{path}: labels {missing} never occur; n_classes inferred as {C}",
                      stacklevel=2)
    return FeatureDataset(feats, labels, C, path.stem)


@dataclass(frozen=True)
class SubsetSpec:
    indices: np.ndarray
    k_per_class: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "indices", np.asarray(self.indices, dtype=np.int64))


def _per_class_draw(labels, counts, n_classes, rng):
    chosen = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        k = int(counts[c])
        if k:
            chosen.append(members[rng.permutation(members.size)[:k]])
    if not chosen:
        return np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate(chosen))


def stratified_kshot(ds: FeatureDataset, k: int, seed: int) -> SubsetSpec:
    if k < 1:
        raise SamplingError(f"k must be >= 1, got {k}")
    counts = ds.class_counts()
    for c, cnt in enumerate(counts):
        if cnt < k:
            raise SamplingError(f"class {c} has {cnt} rows, fewer than k={k}")
    rng = np.random.default_rng(seed)
    idx = _per_class_draw(ds.labels, np.full(ds.n_classes, k), ds.n_classes, rng)
    return SubsetSpec(idx, k, seed)


def stratified_fraction(ds: FeatureDataset, fraction: float, seed: int) -> SubsetSpec:
    """Per-class ceil(fraction * class size) rows, without replacement."""
    if not 0 < fraction <= 1:
        raise SamplingError(f"fraction must be in (0, 1], got {fraction}")
    counts = ds.class_counts()
    take = np.array([math.ceil(fraction * c) for c in counts])
    rng = np.random.default_rng(seed)
    return SubsetSpec(_per_class_draw(ds.labels, take, ds.n_classes, rng), fraction, seed)


def proportional_allocation(counts, total: int) -> np.ndarray:
    """Largest-remainder allocation of ``total`` rows across classes.

    Every class gets floor or ceil of its proportional share; remainders
    are broken toward larger remainders, then lower class index.
    """
    counts = np.asarray(counts, dtype=np.int64)
    quota = counts * total / counts.sum()
    alloc = np.floor(quota).astype(np.int64)
    short = total - int(alloc.sum())
    order = sorted(range(len(counts)), key=lambda c: (-(quota[c] - alloc[c]), c))
    for c in order[:short]:
        alloc[c] += 1
    return np.minimum(alloc, counts)


def default_sub_size(n_train: int, n_test: int) -> int:
    return max(1, min(n_test, n_train // 10))


@dataclass(frozen=True)
class SplitPlan:
    """Which partitions each estimator pretrains, trains and evaluates on.

    ``hr_FF`` reuses the ``S_tr`` roles but with the supervised reference
    model instead of the frozen encoder.
    """

    sub_idx: np.ndarray
    rest_idx: np.ndarray
    train_n: int
    test_n: int
    sub_size: int
    seed: int
    roles: dict = field(default_factory=lambda: {
        "hr_US": (S_TR, S_TR, S_TE),
        "hr_AS": (S_TR, S_REST, S_SUB),
        "hr_AF": (S_TR, S_TR, S_TR),
        "hr_FF": (S_TR, S_TR, S_TR),
    })

    def partition(self, name: str, train: FeatureDataset, test: FeatureDataset) -> FeatureDataset:
        if train.n != self.train_n or test.n != self.test_n:
            raise PlanError("plan was built for different dataset sizes")
        if name == S_TR:
            return train
        if name == S_TE:
            return test
        if name == S_SUB:
            return train.subset(self.sub_idx)
        if name == S_REST:
            return train.subset(self.rest_idx)
        raise PlanError(f"unknown partition {name!r}")

    def datasets(self, estimator: str, train: FeatureDataset, test: FeatureDataset):
        """(train, eval) datasets for one estimator."""
        _, tr, ev = self.roles[estimator]
        return self.partition(tr, train, test), self.partition(ev, train, test)


def make_split_plan(train: FeatureDataset, test: FeatureDataset, sub_size: int | None = None,
                    seed: int = 0) -> SplitPlan:
    if test.n < 1:
        raise PlanError("test set is empty")
    if sub_size is None:
        sub_size = default_sub_size(train.n, test.n)
    if sub_size < 1:
        raise PlanError(f"sub_size must be >= 1, got {sub_size}")
    if sub_size >= train.n:
        raise PlanError(f"sub_size={sub_size} leaves S_tr\\S_sub empty (train has {train.n} rows)")
    counts = train.class_counts()
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise PlanError(f"classes {empty.tolist()} have no rows in S_tr")
    alloc = proportional_allocation(counts, sub_size)
    rng = np.random.default_rng(seed)
    sub = _per_class_draw(train.labels, alloc, train.n_classes, rng)
    rest = np.setdiff1d(np.arange(train.n), sub, assume_unique=True)
    return SplitPlan(sub, rest, train.n, test.n, int(sub_size), seed)
