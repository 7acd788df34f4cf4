"""Randomized-trial data: container, CSV ingestion and train/holdout splitting."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import STREAM_SPLIT, make_rng
from ._validation import check_probability
from .exceptions import ParseError, ValidationError

BINARY = "binary"
CONTINUOUS = "continuous"


def _freeze(arr):
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TrialDataset:
    """Outcomes ``y``, binary treatment ``z`` and an ``n x p`` covariate matrix ``x``.

    Arrays are copied and made read-only on construction.  ``col_kind`` is
    inferred from the values when omitted.
    """

    y: np.ndarray
    z: np.ndarray
    x: np.ndarray
    col_names: tuple = None
    col_kind: tuple = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        z_raw = np.asarray(self.z).ravel()
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise ValidationError(f"x must be 2-dimensional, got shape {x.shape}")
        n = y.shape[0]
        if z_raw.shape[0] != n or x.shape[0] != n:
            raise ValidationError(
                f"length mismatch: len(y)={n}, len(z)={z_raw.shape[0]}, rows(x)={x.shape[0]}"
            )
        if n < 4:
            raise ValidationError(f"need at least 4 subjects, got {n}")
        if not np.all(np.isfinite(y)):
            raise ValidationError("y contains non-finite values")
        if not np.all(np.isfinite(x)):
            raise ValidationError("x contains non-finite values")
        z_float = np.asarray(z_raw, dtype=float)
        bad = np.flatnonzero((z_float != 0) & (z_float != 1))
        if bad.size:
            raise ValidationError(
                f"treatment must be 0 or 1; row {bad[0] + 1} has value {z_raw[bad[0]]!r}"
            )
        z = z_float.astype(np.int8)
        n_treated = int(z.sum())
        if n_treated == 0 or n_treated == n:
            raise ValidationError("both treatment arms must be nonempty")

        p = x.shape[1]
        names = self.col_names
        if names is None:
            names = tuple(f"x{j + 1}" for j in range(p))
        names = tuple(str(s) for s in names)
        if len(names) != p:
            raise ValidationError(f"{len(names)} column names for {p} covariates")
        kinds = self.col_kind
        if kinds is None:
            kinds = tuple(infer_kind(x[:, j]) for j in range(p))
        kinds = tuple(kinds)
        if len(kinds) != p:
            raise ValidationError(f"{len(kinds)} column kinds for {p} covariates")
        for j, kind in enumerate(kinds):
            if kind not in (BINARY, CONTINUOUS):
                raise ValidationError(f"unknown column kind {kind!r} for {names[j]}")
            if kind == BINARY and not np.all((x[:, j] == 0) | (x[:, j] == 1)):
                raise ValidationError(f"column {names[j]} is flagged binary but has values outside {{0, 1}}")

        object.__setattr__(self, "y", _freeze(y))
        object.__setattr__(self, "z", _freeze(z))
        object.__setattr__(self, "x", _freeze(x))
        object.__setattr__(self, "col_names", names)
        object.__setattr__(self, "col_kind", kinds)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.x.shape[1]

    @property
    def n_treated(self):
        return int(self.z.sum())

    @property
    def n_control(self):
        return self.n - self.n_treated

    def subset(self, idx):
        """Rows ``idx`` as a new dataset (column metadata preserved)."""
        idx = np.asarray(idx, dtype=int)
        return TrialDataset(self.y[idx], self.z[idx], self.x[idx], self.col_names, self.col_kind)

    def with_x(self, x):
        return TrialDataset(self.y, self.z, x, self.col_names, None)


def infer_kind(column):
    column = np.asarray(column)
    return BINARY if np.all((column == 0) | (column == 1)) else CONTINUOUS


@dataclass(frozen=True, eq=False)
class SplitIndices:
    train: np.ndarray
    holdout: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def single_sample(self):
        return self.holdout.size == 0


def _parse_cell(text, row, column):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(
            f"row {row}, column {column!r}: cannot parse {text!r} as a number", row, column
        ) from None
    if not math.isfinite(value):
        raise ParseError(f"row {row}, column {column!r}: missing or non-finite value", row, column)
    return value


def load_csv(path, outcome, treatment):
    """Read a trial dataset from a headed, comma-separated UTF-8 file.

    Every column other than ``outcome`` and ``treatment`` becomes a covariate,
    in file order.  A covariate whose values all lie in {0, 1} is flagged
    binary.  Empty or unparsable cells raise :class:`ParseError` naming the
    1-based data row and the column.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]

    for name in (outcome, treatment):
        if name not in header:
            raise ValidationError(f"column {name!r} not found in {path}; header is {header}")
    if len(set(header)) != len(header):
        raise ValidationError(f"{path}: duplicate column names in header")

    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} cells, found {len(row)}", i, None)
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise ParseError(f"row {i}, column {header[j]!r}: missing value", i, header[j])
            values[i - 1, j] = _parse_cell(cell, i, header[j])

    yi, zi = header.index(outcome), header.index(treatment)
    z = values[:, zi]
    bad = np.flatnonzero((z != 0) & (z != 1))
    if bad.size:
        raise ValidationError(
            f"treatment column {treatment!r} must contain only 0/1; "
            f"row {bad[0] + 1} has value {z[bad[0]]:g}"
        )
    cov = [j for j in range(len(header)) if j not in (yi, zi)]
    return TrialDataset(
        y=values[:, yi],
        z=z,
        x=values[:, cov].reshape(len(rows), len(cov)),
        col_names=tuple(header[j] for j in cov),
    )


def load_covariates(path, col_names):
    """Read the named covariate columns (in the given order) from a headed CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        rows = [r for r in reader if any(cell.strip() for cell in r)]
    missing = [c for c in col_names if c not in header]
    if missing:
        raise ValidationError(f"{path} lacks covariate column(s) {missing}")
    cols = [header.index(c) for c in col_names]
    x = np.empty((len(rows), len(cols)))
    for i, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} cells, found {len(row)}", i, None)
        for k, j in enumerate(cols):
            cell = row[j].strip()
            if cell == "":
                raise ParseError(f"row {i}, column {header[j]!r}: missing value", i, header[j])
            x[i - 1, k] = _parse_cell(cell, i, header[j])
    return x


def save_csv(data, path, outcome="y", treatment="z"):
    """Write ``data`` so that :func:`load_csv` reproduces it bit-exactly."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([outcome, treatment, *data.col_names])
        for i in range(data.n):
            writer.writerow(
                [repr(float(data.y[i])), str(int(data.z[i]))] + [repr(float(v)) for v in data.x[i]]
            )


def split_train_holdout(data, train_frac, seed):
    """Stratified split into training and holdout index sets.

    Each arm contributes ``ceil(train_frac * arm_size)`` subjects to the
    training set, drawn without replacement.  ``train_frac == 1`` keeps every
    subject in training (single-sample mode).  Indices are returned sorted.
    """
    frac = check_probability(train_frac, "train_frac", high_open=False)
    rng = make_rng(seed, STREAM_SPLIT)
    train, holdout = [], []
    for arm in (0, 1):
        members = np.flatnonzero(data.z == arm)
        n_train = math.ceil(frac * members.size)
        if frac < 1:
            if frac * members.size < 2:
                raise ValidationError(
                    f"arm z={arm} has {members.size} subjects; train_frac={frac} leaves fewer than 2 for training"
                )
            if n_train >= members.size:
                raise ValidationError(
                    f"arm z={arm} has {members.size} subjects; train_frac={frac} leaves none for the holdout"
                )
        chosen = rng.permutation(members)
        train.append(chosen[:n_train])
        holdout.append(chosen[n_train:])
    return SplitIndices(
        train=np.sort(np.concatenate(train)).astype(int),
        holdout=np.sort(np.concatenate(holdout)).astype(int),
    )
