"""Deterministic primitives: seeded streams, box constraints, datasets."""

from __future__ import annotations

import os
from typing import Iterator, NamedTuple, Sequence

import numpy as np

# Fixed substream tags.  Every consumer of randomness inside a run owns its
# own substream, so changing one consumer (e.g. a batch size) never perturbs
# the draws seen by another.
STREAM_D1 = 1
STREAM_D2 = 2
STREAM_D3 = 3
STREAM_BATCH = 4
STREAM_PILOT = 5
STREAM_SELECT = 6
STREAM_DATA = 7


class DimensionMismatch(ValueError):
    """Operands with incompatible dimensions."""


class DataFormatError(ValueError):
    """Unreadable or malformed input data."""


class CapacityError(ValueError):
    """Problem size exceeds a hard implementation cap."""


class NumericError(RuntimeError):
    """A non-finite value surfaced mid-run."""


class RngStream:
    """Counter-based seeded random stream (Philox).

    Identical seeds give bit-identical draw sequences. ``substream(tag)``
    derives an independent child stream; the derivation is a pure function
    of (seed, tag path), so a substream can be re-created at any time
    without touching the parent's state.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(t) for t in _path)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence(self.seed, spawn_key=self.path))
        )

    def substream(self, tag: int) -> "RngStream":
        return RngStream(self.seed, self.path + (tag,))

    def integers(self, high: int, size=None):
        return self._gen.integers(0, high, size=size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def normal(self, scale: float = 1.0, size=None):
        return self._gen.normal(0.0, scale, size=size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


class DataPoint(NamedTuple):
    features: np.ndarray
    target: float


class Dataset:
    """Finite sequence of observations carrying the uniform empirical law.

    Feature rows and targets are stored as read-only float arrays; all
    points share one feature dimension.
    """

    def __init__(self, features, targets):
        features = np.array(features, dtype=float, copy=True)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        targets = np.array(targets, dtype=float, copy=True).ravel()
        if features.ndim != 2:
            raise DataFormatError("features must form a 2-d array")
        if features.shape[0] != targets.shape[0]:
            raise DataFormatError(
                f"{features.shape[0]} feature rows but {targets.shape[0]} targets"
            )
        if features.shape[0] == 0:
            raise DataFormatError("dataset is empty")
        if not np.isfinite(features).all() or not np.isfinite(targets).all():
            raise DataFormatError("dataset contains non-finite values")
        features.setflags(write=False)
        targets.setflags(write=False)
        self.features = features
        self.targets = targets

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> DataPoint:
        return DataPoint(self.features[i], float(self.targets[i]))

    def __iter__(self) -> Iterator[DataPoint]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.features[indices], self.targets[indices])


class BoxConstraint:
    """Axis-aligned box {x : lower <= x <= upper}."""

    def __init__(self, lower, upper):
        lower = np.array(lower, dtype=float, copy=True).ravel()
        upper = np.array(upper, dtype=float, copy=True).ravel()
        if lower.shape != upper.shape:
            raise DimensionMismatch("lower and upper bounds differ in length")
        if np.any(lower > upper):
            raise ValueError("box has lower[i] > upper[i]")
        lower.setflags(write=False)
        upper.setflags(write=False)
        self.lower = lower
        self.upper = upper

    @classmethod
    def symmetric(cls, halfwidth: float, dim: int) -> "BoxConstraint":
        """The sup-norm ball of radius ``halfwidth`` in ``dim`` coordinates."""
        if halfwidth < 0:
            raise ValueError("halfwidth must be nonnegative")
        w = float(halfwidth)
        return cls(np.full(dim, -w), np.full(dim, w))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))


def project(box: BoxConstraint, x) -> np.ndarray:
    """Euclidean projection onto the box (per-coordinate clamp)."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.lower.shape:
        raise DimensionMismatch(f"point has dim {x.shape}, box has dim {box.lower.shape}")
    return np.clip(x, box.lower, box.upper)


def sample_iid(ds: Dataset, rng: RngStream, count: int) -> Dataset:
    """Draw ``count`` points uniformly with replacement.

    The result is itself a Dataset (an ordered sequence of points). One
    block draw is consumed from ``rng``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if len(ds) == 0:
        raise DataFormatError("cannot sample from an empty dataset")
    idx = rng.integers(len(ds), size=int(count))
    return ds.subset(idx)


def ensure_finite(arr, what: str) -> np.ndarray:
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value in {what}")
    return arr


def load_csv_dataset(path) -> Dataset:
    """Load comma-separated rows: features in all columns but the last,
    target in the last column. A single header row is skipped when the
    first row contains any non-numeric token.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in lines if ln]
    if not lines:
        raise DataFormatError(f"{path}: file contains no rows")

    def parse_row(line, rowno):
        cells = line.split(",")
        try:
            return [float(c) for c in cells]
        except ValueError:
            raise DataFormatError(f"{path}: row {rowno}: non-numeric value") from None

    first = lines[0].split(",")
    start = 0
    try:
        [float(c) for c in first]
    except ValueError:
        start = 1  # header row
    if start >= len(lines):
        raise DataFormatError(f"{path}: no data rows after header")

    rows = []
    width = None
    for i in range(start, len(lines)):
        row = parse_row(lines[i], i + 1)
        if width is None:
            width = len(row)
            if width < 2:
                raise DataFormatError(f"{path}: rows need at least one feature and a target")
        elif len(row) != width:
            raise DataFormatError(f"{path}: row {i + 1}: expected {width} columns, got {len(row)}")
        rows.append(row)
    arr = np.asarray(rows, dtype=float)
    return Dataset(arr[:, :-1], arr[:, -1])


def atomic_write_text(path, text: str) -> None:
    """Write a file via a temporary sibling and rename."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
