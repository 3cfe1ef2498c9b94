"""Per-iteration run records and their comma-separated wire format."""

from __future__ import annotations

import numpy as np

from .core import DataFormatError, atomic_write_text

BASE_COLUMNS = ("k", "F_hat", "u", "track_err", "step_norm")
SPIDER_COLUMNS = BASE_COLUMNS + ("epoch", "batch_size")


class RunTrace:
    """Columnar per-iteration records.

    Base columns: iteration, full-batch objective, tracker value,
    |tracker - full-batch inner mean|, step norm. Epoch-based runs add
    ``epoch`` and ``batch_size``.
    """

    def __init__(self, columns=BASE_COLUMNS):
        self.columns = tuple(columns)
        self._rows: list[tuple] = []

    def append(self, *row) -> None:
        if len(row) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} fields, got {len(row)}")
        self._rows.append(tuple(float(v) for v in row))

    def __len__(self) -> int:
        return len(self._rows)

    def column(self, name: str) -> np.ndarray:
        try:
            j = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}") from None
        return np.asarray([r[j] for r in self._rows], dtype=float)

    def rows(self):
        return list(self._rows)

    def to_csv(self) -> str:
        lines = [",".join(self.columns)]
        int_cols = {i for i, c in enumerate(self.columns) if c in ("k", "epoch", "batch_size")}
        for row in self._rows:
            cells = [
                str(int(v)) if j in int_cols else repr(v)
                for j, v in enumerate(row)
            ]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        atomic_write_text(path, self.to_csv())

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = [ln.rstrip("\n") for ln in fh]
        except OSError as exc:
            raise DataFormatError(f"cannot read {path}: {exc}") from exc
        lines = [ln for ln in lines if ln.strip()]
        if not lines:
            raise DataFormatError(f"{path}: empty trace file")
        columns = tuple(c.strip() for c in lines[0].split(","))
        for c in BASE_COLUMNS:
            if c not in columns:
                raise DataFormatError(f"{path}: missing column {c!r}")
        trace = cls(columns)
        for i, ln in enumerate(lines[1:], start=2):
            cells = ln.split(",")
            if len(cells) != len(columns):
                raise DataFormatError(f"{path}: row {i}: expected {len(columns)} fields")
            try:
                trace.append(*[float(c) for c in cells])
            except ValueError:
                raise DataFormatError(f"{path}: row {i}: non-numeric value") from None
        return trace
