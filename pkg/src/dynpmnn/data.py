"""Dataset ingestion, the 70/20/10 split, and z-score standardisation."""

import csv
import logging
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dynamics import FhnParams, FitzHughNagumo, IntegrationGrid, euler_block
from .exceptions import BadFractionsError, LeakageError, ParseError, SchemaMismatchError

log = logging.getLogger(__name__)

CALIFORNIA_FEATURES = (
    "MedInc",
    "HouseAge",
    "AveRooms",
    "AveBedrms",
    "Population",
    "AveOccup",
    "Latitude",
    "Longitude",
)
CALIFORNIA_TARGET = "MedHouseVal"
DEFAULT_FRACTIONS = (0.7, 0.2, 0.1)


@dataclass
class RawTable:
    X: np.ndarray
    y: np.ndarray
    feature_names: tuple
    target_name: str = "y"
    rejected_lines: list = field(default_factory=list)
    true_weights: np.ndarray = None

    def __post_init__(self):
        if len(self.X) == 0:
            raise SchemaMismatchError("table has no rows")

    @property
    def n_rows(self):
        return self.X.shape[0]


def sample_csv_path():
    """Path of the bundled 200-row California Housing sample."""
    return resources.files("dynpmnn") / "resources" / "california_housing_sample.csv"


def load_csv(path, features=CALIFORNIA_FEATURES, target=CALIFORNIA_TARGET, strict=False):
    """Parse a header-first CSV of real columns.

    Malformed rows (wrong arity, unparsable or non-finite values) are skipped
    with a warning naming the line, or raise :class:`ParseError` when
    ``strict``.
    """
    expected = list(features) + [target]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise SchemaMismatchError(f"{path}: expected header {','.join(expected)}, got {header}")
        rows, rejected = [], []
        for line_no, record in enumerate(reader, start=2):
            if not record:
                continue
            try:
                if len(record) != len(expected):
                    raise ValueError(f"expected {len(expected)} fields, got {len(record)}")
                values = [float(v) for v in record]
                if not all(math.isfinite(v) for v in values):
                    raise ValueError("non-finite value")
            except ValueError as exc:
                if strict:
                    raise ParseError(line_no, str(exc)) from None
                log.warning("%s: skipping line %d (%s)", path, line_no, exc)
                rejected.append(line_no)
                continue
            rows.append(values)
    if not rows:
        raise SchemaMismatchError(f"{path}: no valid data rows")
    data = np.array(rows, dtype=np.float64)
    log.info("loaded %d rows from %s (%d rejected)", len(rows), path, len(rejected))
    return RawTable(data[:, :-1], data[:, -1], tuple(features), target, rejected)


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def split_sizes(n_rows, fractions=DEFAULT_FRACTIONS):
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise BadFractionsError(f"fractions must be three non-negative values summing to 1, got {fractions}")
    n_val = math.floor(n_rows * fractions[1] + 1e-9)
    n_test = math.floor(n_rows * fractions[2] + 1e-9)
    return n_rows - n_val - n_test, n_val, n_test


def split(n_rows, fractions=DEFAULT_FRACTIONS, seed=0):
    """Seeded shuffle, then contiguous train/val/test slices (remainder to train)."""
    if isinstance(n_rows, RawTable):
        n_rows = n_rows.n_rows
    n_train, n_val, _ = split_sizes(n_rows, fractions)
    perm = np.random.default_rng(seed).permutation(n_rows)
    return SplitIndices(
        perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:], seed
    )


class Standardizer(TransformerMixin, BaseEstimator):
    """Per-column z-score with population standard deviation.

    Zero-variance columns get scale 1 (they map to zero) and a warning.
    Accepts 1-D input for targets and returns the same rank it was given.
    """

    def fit(self, X, y=None):
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        X2 = X.reshape(len(X), -1)
        self.mean_ = X2.mean(axis=0)
        scale = X2.std(axis=0)
        zero = scale == 0
        if np.any(zero):
            log.warning("zero-variance columns %s; using unit scale", np.flatnonzero(zero).tolist())
            scale = np.where(zero, 1.0, scale)
        self.scale_ = scale
        self.n_features_in_ = X2.shape[1]
        return self

    def _apply(self, X, fn):
        check_is_fitted(self, "mean_")
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        return fn(X.reshape(len(X), -1)).reshape(X.shape)

    def transform(self, X):
        return self._apply(X, lambda A: (A - self.mean_) / self.scale_)

    def inverse_transform(self, X):
        return self._apply(X, lambda A: A * self.scale_ + self.mean_)

    def to_dict(self):
        check_is_fitted(self, "mean_")
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, data):
        out = cls()
        out.mean_ = np.asarray(data["mean"], dtype=np.float64)
        out.scale_ = np.asarray(data["scale"], dtype=np.float64)
        out.n_features_in_ = len(out.mean_)
        return out


def fit_standardizer(table, indices, train_indices=None, strict=True):
    """Fit feature and target standardizers on ``indices``.

    With ``strict`` and a known training split, fitting on any row outside it
    is rejected to keep validation/test statistics out of the scaler.
    """
    indices = np.asarray(indices)
    if strict and train_indices is not None and not np.isin(indices, train_indices).all():
        raise LeakageError("standardizer must be fitted on training rows only")
    return Standardizer().fit(table.X[indices]), Standardizer().fit(table.y[indices])


@dataclass
class Dataset:
    """Raw table, split, and training-fitted scalers; parts come out standardised."""

    table: RawTable
    indices: SplitIndices
    x_scaler: Standardizer
    y_scaler: Standardizer
    fractions: tuple = DEFAULT_FRACTIONS

    @classmethod
    def build(cls, table, fractions=DEFAULT_FRACTIONS, seed=0):
        idx = split(table.n_rows, fractions, seed)
        xs, ys = fit_standardizer(table, idx.train, idx.train)
        return cls(table, idx, xs, ys, tuple(fractions))

    @property
    def n_features(self):
        return self.table.X.shape[1]

    def part(self, name):
        """Standardised ``(X, y)`` for ``"train"``, ``"val"`` or ``"test"``."""
        rows = {"train": self.indices.train, "val": self.indices.val, "test": self.indices.test}[name]
        return self.x_scaler.transform(self.table.X[rows]), self.y_scaler.transform(self.table.y[rows])


def synthetic_dataset(kind="linear", n_rows=200, n_features=8, noise=0.0, seed=0):
    """Deterministic fixtures.

    ``linear``: ``y = x . w + noise`` with ``w`` drawn from the same seed
    (retrievable as ``table.true_weights``).
    ``fhn``: ``y`` is the excitation ``v`` of one FitzHugh-Nagumo unit at
    ``t = 20`` started from ``(tanh(x . w), 0)``.
    """
    if n_rows < 1 or n_features < 1:
        raise ValueError("n_rows and n_features must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n_rows, n_features))
    w = rng.normal(size=n_features) / np.sqrt(n_features)
    if kind == "linear":
        y = X @ w
    elif kind == "fhn":
        v0 = np.tanh(X @ w)
        state = np.column_stack([v0, np.zeros(n_rows)])
        y = euler_block(state, FitzHughNagumo(FhnParams()), IntegrationGrid(20.0, 0.5))[:, 0]
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    y = y + noise * rng.normal(size=n_rows)
    return RawTable(X, y, tuple(f"x{i + 1}" for i in range(n_features)), "y", true_weights=w)
