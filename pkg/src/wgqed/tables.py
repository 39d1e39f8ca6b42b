"""Delimiter-separated result tables with a metadata header.

Every experiment emits instances of :class:`ResultTable`: a block of
``# key = value`` metadata lines (full configuration echo, code version,
seed, units), one header row of column names, then comma-separated
numeric rows.  Values are written with ``%.17g`` so a write-then-read
cycle reproduces every float bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_MAGIC = "# wgqed result table"


@dataclass
class ResultTable:
    columns: list[str]
    rows: np.ndarray  # (n_rows, n_columns) float64
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.columns = list(self.columns)
        for name in self.columns:
            if "," in name or "\n" in name:
                raise ValueError(f"column name {name!r} contains a delimiter")
        rows = np.asarray(self.rows, dtype=float)
        if rows.size == 0:
            rows = rows.reshape(0, len(self.columns))
        if rows.ndim != 2 or rows.shape[1] != len(self.columns):
            raise ValueError(
                f"rows shape {rows.shape} does not match {len(self.columns)} columns"
            )
        self.rows = rows

    @classmethod
    def from_columns(cls, data: dict[str, np.ndarray], meta: dict[str, str] | None = None):
        cols = list(data)
        if cols:
            arr = np.column_stack([np.asarray(data[c], dtype=float) for c in cols])
        else:
            arr = np.empty((0, 0))
        return cls(columns=cols, rows=arr, meta=dict(meta or {}))

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        try:
            idx = self.columns.index(name)
        except ValueError:
            raise KeyError(f"no column {name!r}; have {self.columns}") from None
        return self.rows[:, idx]

    def write(self, path) -> None:
        lines = [_MAGIC]
        for key, value in self.meta.items():
            value = str(value)
            if "\n" in value:
                raise ValueError(f"metadata value for {key!r} contains a newline")
            lines.append(f"# {key} = {value}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(f"{v:.17g}" for v in row))
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def read(cls, path) -> "ResultTable":
        meta: dict[str, str] = {}
        columns: list[str] | None = None
        rows: list[list[float]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for raw in fh:
                line = raw.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    body = line[1:].strip()
                    if body == _MAGIC.lstrip("# ") or "=" not in body:
                        continue
                    key, _, value = body.partition("=")
                    meta[key.strip()] = value.strip()
                elif columns is None:
                    columns = [c.strip() for c in line.split(",")]
                else:
                    rows.append([float(v) for v in line.split(",")])
        if columns is None:
            raise ValueError(f"{path}: no column header found")
        arr = np.array(rows, dtype=float) if rows else np.empty((0, len(columns)))
        return cls(columns=columns, rows=arr, meta=meta)
