"""Life-history datasets: CSV ingestion, z-scoring, splits, synthetic data.

CSV layout
----------
UTF-8, comma separated, one header row. A ``label`` column holds 0/1; an
optional ``id`` column holds sample identifiers. Every other column is a
numeric feature. Sequence files name columns ``<feature>@<t>`` with 1-based
contiguous ``t``; files without any ``@`` suffix are static (T = 1). Feature
order is the order of first appearance in the header. Missing cells are
errors: nothing is imputed.
"""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .exceptions import DataFormatError, UsageError

_SEQ_COLUMN = re.compile(r"^(?P<name>.+)@(?P<t>\d+)$")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray  # [T, F]
    label: int
    id: str


@dataclass(frozen=True)
class Standardization:
    """Per-feature statistics pooled over samples and time steps."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return (X - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardization":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # [n, T, F]
    y: np.ndarray  # [n] of {0, 1}
    feature_names: tuple
    ids: tuple = ()
    standardization: Standardization | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 3:
            raise UsageError(f"X must be [n, T, F], got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise UsageError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
        if len(self.feature_names) != X.shape[2]:
            raise UsageError("feature_names length does not match F")
        if not np.all(np.isfinite(X)):
            raise UsageError("features must be finite")
        if not np.all((y == 0) | (y == 1)):
            raise UsageError("labels must be 0 or 1")
        ids = tuple(self.ids) if self.ids else tuple(f"s{i}" for i in range(X.shape[0]))
        if len(ids) != X.shape[0]:
            raise UsageError("ids length does not match sample count")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    def __len__(self):
        return self.X.shape[0]

    @property
    def seq_len(self) -> int:
        return self.X.shape[1]

    @property
    def n_features(self) -> int:
        return self.X.shape[2]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.X[i], int(self.y[i]), self.ids[i]) for i in range(len(self))]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, X=self.X[idx], y=self.y[idx], ids=tuple(self.ids[i] for i in idx))


# ---------------------------------------------------------------- CSV

@dataclass(frozen=True)
class CsvSchema:
    """Expected feature names and sequence length; ``None`` accepts whatever the header says."""

    feature_names: tuple | None = None
    seq_len: int | None = None


def _parse_header(header: list[str]):
    if "label" not in header:
        raise DataFormatError("missing column 'label'", row=1)
    names: list[str] = []
    steps: dict[str, list[int]] = {}
    positions: dict[tuple, int] = {}
    sequence_mode = None
    for col, title in enumerate(header):
        if title in ("label", "id"):
            continue
        m = _SEQ_COLUMN.match(title)
        is_seq = m is not None
        if sequence_mode is None:
            sequence_mode = is_seq
        elif sequence_mode != is_seq:
            raise DataFormatError("mixed static and name@t columns", row=1, column=title)
        name, t = (m["name"], int(m["t"])) if is_seq else (title, 1)
        if (name, t) in positions:
            raise DataFormatError("duplicate column", row=1, column=title)
        if name not in steps:
            names.append(name)
            steps[name] = []
        steps[name].append(t)
        positions[(name, t)] = col
    if not names:
        raise DataFormatError("no feature columns", row=1)
    seq_len = max(max(v) for v in steps.values())
    for name in names:
        if sorted(steps[name]) != list(range(1, seq_len + 1)):
            raise DataFormatError(
                f"feature '{name}' needs contiguous steps 1..{seq_len}, got {sorted(steps[name])}",
                row=1, column=name)
    return names, seq_len, positions


def load_csv(path, schema: CsvSchema | None = None) -> Dataset:
    """Read a dataset file. Error rows count file lines, header = row 1."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file", row=1) from None
        names, seq_len, positions = _parse_header(header)
        if schema is not None:
            if schema.feature_names is not None:
                missing = [n for n in schema.feature_names if n not in names]
                if missing:
                    raise DataFormatError(f"missing feature column(s) {missing}", row=1,
                                          column=missing[0])
                names = list(schema.feature_names)
            if schema.seq_len is not None and schema.seq_len != seq_len:
                raise DataFormatError(f"expected T={schema.seq_len}, header has T={seq_len}",
                                      row=1)
        label_col = header.index("label")
        id_col = header.index("id") if "id" in header else None

        rows, labels, ids = [], [], []
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataFormatError(
                    f"expected {len(header)} cells, found {len(record)}", row=lineno)
            mat = np.empty((seq_len, len(names)))
            for j, name in enumerate(names):
                for t in range(1, seq_len + 1):
                    col = positions[(name, t)]
                    title = header[col]
                    cell = record[col].strip()
                    if cell == "":
                        raise DataFormatError("missing value", row=lineno, column=title)
                    try:
                        value = float(cell)
                    except ValueError:
                        raise DataFormatError(f"non-numeric value {cell!r}", row=lineno,
                                              column=title) from None
                    if not math.isfinite(value):
                        raise DataFormatError(f"non-finite value {cell!r}", row=lineno,
                                              column=title)
                    mat[t - 1, j] = value
            raw_label = record[label_col].strip()
            if raw_label not in ("0", "1", "0.0", "1.0"):
                raise DataFormatError(f"unknown label value {raw_label!r}", row=lineno,
                                      column="label")
            rows.append(mat)
            labels.append(int(float(raw_label)))
            ids.append(record[id_col].strip() if id_col is not None else f"row{lineno}")
    if not rows:
        raise DataFormatError("no data rows", row=2)
    return Dataset(np.stack(rows), np.asarray(labels), tuple(names), tuple(ids))


def write_csv(ds: Dataset, path, include_ids: bool = False) -> None:
    """Write ``ds`` in the sequence layout (static layout when T = 1)."""
    header = ["id"] if include_ids else []
    if ds.seq_len == 1:
        header += list(ds.feature_names)
    else:
        header += [f"{name}@{t}" for name in ds.feature_names for t in range(1, ds.seq_len + 1)]
    header.append("label")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(ds)):
            cells = [ds.ids[i]] if include_ids else []
            # feature-major: all steps of feature 0, then feature 1, ...
            cells += [repr(float(v)) for v in ds.X[i].T.reshape(-1)]
            cells.append(str(int(ds.y[i])))
            writer.writerow(cells)


# ---------------------------------------------------------------- preprocessing

def fit_standardization(ds: Dataset) -> Standardization:
    if len(ds) == 0:
        raise UsageError("cannot standardize an empty dataset")
    flat = ds.X.reshape(-1, ds.n_features)
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    # Constant features map to zero instead of dividing by ~0.
    std = np.where(std < 1e-12, 1.0, std)
    return Standardization(mean, std)


def standardize(ds: Dataset, stats: Standardization | None = None) -> Dataset:
    """Z-score every feature. Fits the statistics on ``ds`` unless ``stats`` is given."""
    if ds.standardization is not None:
        raise UsageError("dataset is already standardized")
    if len(ds) == 0:
        raise UsageError("cannot standardize an empty dataset")
    stats = fit_standardization(ds) if stats is None else stats
    return replace(ds, X=stats.apply(ds.X), standardization=stats)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    val: float = 0.1
    test: float = 0.1
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        for name in ("train", "val", "test"):
            frac = getattr(self, name)
            if not 0.0 < frac < 1.0:
                raise UsageError(f"{name} fraction must be in (0, 1), got {frac}")
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise UsageError("split fractions must sum to 1")


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Seeded disjoint train/val/test partition.

    Stratified mode orders samples so that every prefix holds each class in
    proportion (within one sample), then cuts that order at the split sizes.
    """
    n = len(ds)
    if n == 0:
        raise UsageError("cannot split an empty dataset")
    n_train = int(round(n * spec.train))
    n_val = int(round(n * spec.val))
    n_test = n - n_train - n_val
    if min(n_train, n_val, n_test) < 1:
        raise UsageError(f"{n} samples cannot fill a {spec.train}/{spec.val}/{spec.test} split")
    rng = np.random.default_rng(spec.seed)
    if spec.stratified:
        keys = np.empty(n)
        for cls in (0, 1):
            members = np.flatnonzero(ds.y == cls)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            keys[members] = (np.arange(members.size) + 0.5) / members.size
        order = np.lexsort((rng.random(n), keys))
    else:
        order = rng.permutation(n)
    cuts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(ds.subset(np.sort(part)) for part in cuts)


# ---------------------------------------------------------------- synthetic data

SPIKE = np.array([-0.5, 1.0, -0.5])
SPIKE_HEIGHT = 2.0
SPIKE_THRESHOLD = 1.5
INTERIOR_SCALE = 0.25


def gen_synthetic(n: int, T: int, F: int, seed: int = 0, noise: float = 0.0) -> Dataset:
    """Labelled sequences whose class needs one local and one long-range cue.

    Feature 0 is a slow random sinusoid; some samples carry a zero-sum
    three-step spike ``SPIKE_HEIGHT * [-0.5, 1, -0.5]`` at a random offset.
    Feature 1 is standard normal except at the first and last step, which
    have magnitude in [1, 2] and either agree or disagree in sign. Remaining
    features are standard normal distractors.

    Label 1 iff spike present AND endpoint signs agree. Exactly ``n // 2``
    samples are positive; negatives are split evenly between "spike but
    signs disagree" and "no spike but signs agree", so either cue alone
    caps accuracy at 0.75.
    """
    if n < 2 or T < 4 or F < 2:
        raise UsageError(f"gen_synthetic needs n >= 2, T >= 4, F >= 2; got n={n}, T={T}, F={F}")
    if noise < 0:
        raise UsageError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    n_pos = n // 2
    labels = rng.permutation(np.r_[np.ones(n_pos, dtype=np.int64),
                                   np.zeros(n - n_pos, dtype=np.int64)])
    # negative case codes: 0 = spike only, 1 = agreement only
    neg_cases = np.tile([0, 1], n)[: n - n_pos]
    neg_cases = rng.permutation(neg_cases)

    X = rng.standard_normal((n, T, F))
    steps = np.arange(T)
    neg_i = 0
    for i in range(n):
        if labels[i] == 1:
            spike, agree = True, True
        else:
            case = neg_cases[neg_i]
            neg_i += 1
            spike, agree = case == 0, case == 1

        level = rng.uniform(-1.5, 1.5)
        amp = rng.uniform(1.0, 2.0)
        freq = rng.uniform(0.2, 0.5)
        phase = rng.uniform(0.0, 2 * np.pi)
        X[i, :, 0] = level + amp * np.sin(freq * steps + phase)
        if spike:
            offset = rng.integers(0, T - 2)
            X[i, offset:offset + 3, 0] += SPIKE_HEIGHT * SPIKE

        X[i, 1:-1, 1] *= INTERIOR_SCALE
        first_sign = rng.choice([-1.0, 1.0])
        last_sign = first_sign if agree else -first_sign
        X[i, 0, 1] = first_sign * rng.uniform(1.0, 2.0)
        X[i, -1, 1] = last_sign * rng.uniform(1.0, 2.0)

    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    names = tuple(f"f{j}" for j in range(F))
    ids = tuple(f"syn{i:06d}" for i in range(n))
    return Dataset(X, labels, names, ids)


def rule_oracle(X: np.ndarray) -> np.ndarray:
    """Hand-written decoder of the synthetic labelling rule (raw, unstandardized X)."""
    x0 = X[:, :, 0]
    bump = x0[:, 1:-1] - 0.5 * (x0[:, :-2] + x0[:, 2:])
    has_spike = bump.max(axis=1) > SPIKE_THRESHOLD
    agree = X[:, 0, 1] * X[:, -1, 1] > 0
    return (has_spike & agree).astype(np.int64)
