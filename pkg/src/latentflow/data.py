"""Dataset ingestion, synthesis, and preprocessing for paired (x, y) records."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "TaskKind",
    "PairedDataset",
    "DataError",
    "one_hot",
    "toy_crossing",
    "load_csv",
    "split",
    "standardize",
    "apply_normalization",
    "denormalize_y",
    "synth_regression",
]


class DataError(ValueError):
    """Malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class TaskKind:
    kind: str  # "regression" | "classification"
    num_classes: int | None = None

    def __post_init__(self):
        if self.kind not in ("regression", "classification"):
            raise DataError(f"unknown task kind {self.kind!r}")
        if self.kind == "classification" and (self.num_classes is None or self.num_classes < 1):
            raise DataError("classification needs num_classes >= 1")
        if self.kind == "regression" and self.num_classes is not None:
            raise DataError("regression does not take num_classes")

    @classmethod
    def regression(cls) -> "TaskKind":
        return cls("regression")

    @classmethod
    def classification(cls, num_classes: int) -> "TaskKind":
        return cls("classification", num_classes)

    @property
    def is_classification(self) -> bool:
        return self.kind == "classification"


@dataclass
class PairedDataset:
    """Matched (x, y) records plus the normalization stats that produced them.

    Stats default to the identity transform; ``split`` replaces them with the
    train-side statistics so predictions can be mapped back to original units.
    Duplicate x rows with differing y rows are rejected on construction: no
    deterministic map exists for such data.
    """

    x: np.ndarray
    y: np.ndarray
    task: TaskKind
    x_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    x_std: np.ndarray = field(default=None)  # type: ignore[assignment]
    y_mean: np.ndarray = field(default=None)  # type: ignore[assignment]
    y_std: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.x = np.ascontiguousarray(self.x, dtype=np.float64)
        self.y = np.ascontiguousarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 2:
            raise DataError(f"x and y must be 2-D, got {self.x.shape} and {self.y.shape}")
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError(
                f"x and y row counts differ: {self.x.shape[0]} vs {self.y.shape[0]}"
            )
        if self.x.shape[0] < 1:
            raise DataError("dataset needs at least one record")
        if not np.isfinite(self.x).all() or not np.isfinite(self.y).all():
            raise DataError("dataset contains non-finite values")
        if self.task.is_classification and self.y.shape[1] != self.task.num_classes:
            raise DataError(
                f"one-hot labels of width {self.task.num_classes} expected, got {self.y.shape[1]}"
            )
        self._reject_conflicting_duplicates()
        if self.x_mean is None:
            self.x_mean = np.zeros(self.x.shape[1])
            self.x_std = np.ones(self.x.shape[1])
        if self.y_mean is None:
            self.y_mean = np.zeros(self.y.shape[1])
            self.y_std = np.ones(self.y.shape[1])

    def _reject_conflicting_duplicates(self):
        seen: dict[bytes, int] = {}
        for i in range(self.x.shape[0]):
            key = self.x[i].tobytes()
            j = seen.get(key)
            if j is None:
                seen[key] = i
            elif not np.array_equal(self.y[i], self.y[j]):
                raise DataError(
                    f"rows {j} and {i} share the same x but have different y; "
                    "no deterministic map exists for such data"
                )

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    def subset(self, idx: np.ndarray) -> "PairedDataset":
        return replace(self, x=self.x[idx], y=self.y[idx])


def one_hot(label: int, k: int) -> np.ndarray:
    if not 0 <= label < k:
        raise DataError(f"label {label} outside [0, {k})")
    v = np.zeros(k)
    v[label] = 1.0
    return v


def toy_crossing(crossing: bool = True) -> PairedDataset:
    """Four-pair 2-D regression task whose straight chords all intersect.

    Inputs sit at (-1, y) for y in {-0.75, -0.25, 0.25, 0.75}; outputs sit at
    (1, y') with the y order reversed, so every pair of input-output chords
    crosses inside x in (-1, 1) (all of them through the origin). With
    ``crossing=False`` the pairing is the identity, giving parallel
    (non-crossing) chords as a control. Coordinates are this library's
    canonical stand-in configuration.
    """
    levels = np.array([-0.75, -0.25, 0.25, 0.75])
    x = np.stack([-np.ones(4), levels], axis=1)
    out_levels = levels[::-1] if crossing else levels
    y = np.stack([np.ones(4), out_levels], axis=1)
    return PairedDataset(x, y, TaskKind.regression())


def load_csv(path, x_cols: list[str], y_cols: list[str],
             task: TaskKind | str) -> PairedDataset:
    """Parse a UTF-8, comma-separated file with a header row of column names.

    ``task`` is a TaskKind or one of the strings "regression" /
    "classification" (the latter infers the class count). For classification,
    y_cols must be a single column of integer class indices in [0, k); labels
    are one-hot encoded. Cell errors are reported with 1-based data row
    numbers and column names.
    """
    if isinstance(task, str):
        want_classification = task == "classification"
        if not want_classification and task != "regression":
            raise DataError(f"unknown task kind {task!r}")
        task = TaskKind.regression()
    else:
        want_classification = task.is_classification
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        index = {name: i for i, name in enumerate(header)}
        for col in list(x_cols) + list(y_cols):
            if col not in index:
                raise DataError(f"{path}: missing column {col!r}")
        rows = []
        for row_num, row in enumerate(reader, start=1):
            if not row:
                continue
            rec = []
            for col in list(x_cols) + list(y_cols):
                cell = row[index[col]].strip()
                try:
                    rec.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric cell {cell!r} at row {row_num}, column {col!r}"
                    ) from None
            rows.append(rec)
    if not rows:
        raise DataError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    x = arr[:, : len(x_cols)]
    y = arr[:, len(x_cols) :]

    if want_classification:
        if len(y_cols) != 1:
            raise DataError("classification expects a single y column of class indices")
        raw = y[:, 0]
        if not np.all(raw == np.round(raw)) or raw.min() < 0:
            raise DataError("class indices must be non-negative integers")
        idx = raw.astype(int)
        k = task.num_classes if task.is_classification else int(idx.max()) + 1
        task = TaskKind.classification(k)
        y = np.stack([one_hot(int(i), k) for i in idx])
    return PairedDataset(x, y, task)


def standardize(ds: PairedDataset, x_mean=None, x_std=None, y_mean=None, y_std=None) -> PairedDataset:
    """Standardize features (and regression targets) with the given stats.

    Stats default to the dataset's own moments. Near-constant features keep
    unit scale so the transform stays invertible.
    """
    x_mean = ds.x.mean(axis=0) if x_mean is None else np.asarray(x_mean, dtype=np.float64)
    x_std = ds.x.std(axis=0) if x_std is None else np.asarray(x_std, dtype=np.float64)
    x_std = np.where(x_std < 1e-12, 1.0, x_std)
    if ds.task.is_classification:
        y_mean = np.zeros(ds.d_y)
        y_std = np.ones(ds.d_y)
    else:
        y_mean = ds.y.mean(axis=0) if y_mean is None else np.asarray(y_mean, dtype=np.float64)
        y_std = ds.y.std(axis=0) if y_std is None else np.asarray(y_std, dtype=np.float64)
        y_std = np.where(y_std < 1e-12, 1.0, y_std)
    return PairedDataset(
        (ds.x - x_mean) / x_std,
        ds.y if ds.task.is_classification else (ds.y - y_mean) / y_std,
        ds.task,
        x_mean=x_mean,
        x_std=x_std,
        y_mean=y_mean,
        y_std=y_std,
    )


def apply_normalization(ds: PairedDataset, x_mean, x_std, y_mean, y_std) -> PairedDataset:
    """Apply externally computed stats (e.g. from a training manifest)."""
    return standardize(ds, x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std)


def denormalize_y(ds: PairedDataset, y: np.ndarray) -> np.ndarray:
    return np.asarray(y) * ds.y_std + ds.y_mean


def split(ds: PairedDataset, ratio: float, seed: int) -> tuple[PairedDataset, PairedDataset]:
    """Seeded shuffle-and-split; normalization stats come from the train side only."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    n_train = int(ds.n * ratio)
    if n_train == 0 or n_train == ds.n:
        raise DataError(f"split of {ds.n} records at ratio {ratio} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(ds.n)
    train = ds.subset(perm[:n_train])
    val = ds.subset(perm[n_train:])
    train = standardize(train)
    val = apply_normalization(val, train.x_mean, train.x_std, train.y_mean, train.y_std)
    return train, val


def synth_regression(n: int, d_x: int, seed: int) -> PairedDataset:
    """Deterministic smooth synthetic regression task.

    x ~ uniform([-1, 1]^d_x); y is the mean of three sinusoids of random
    linear projections: y = mean_j sin(x . w_j + phase_j), with w_j standard
    normal and phases uniform on [0, 2*pi). Noise-free.
    """
    if n < 2:
        raise DataError(f"synth_regression needs n >= 2, got {n}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, d_x))
    w = rng.standard_normal(size=(3, d_x))
    phase = rng.uniform(0.0, 2.0 * np.pi, size=3)
    y = np.sin(x @ w.T + phase).mean(axis=1, keepdims=True)
    return PairedDataset(x, y, TaskKind.regression())
