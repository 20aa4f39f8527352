"""Univariate series container and pre-estimation utilities.

The estimation pipeline works on plain float vectors; :class:`Series` is a thin
wrapper that keeps optional time labels and a name attached through loading,
detrending and differencing so CLI output can echo them back.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Series",
    "as_values",
    "load_csv",
    "detrend_linear",
    "difference",
    "acf",
]


@dataclass(frozen=True)
class Series:
    """A univariate time series: float values with optional labels and a name."""

    values: np.ndarray
    index: tuple | None = None
    name: str | None = None

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ValueError(f"series values must be one-dimensional, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)
        if self.index is not None:
            idx = tuple(self.index)
            if len(idx) != vals.size:
                raise ValueError(
                    f"index length {len(idx)} does not match values length {vals.size}"
                )
            object.__setattr__(self, "index", idx)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        if dtype is None:
            return self.values if not copy else self.values.copy()
        return self.values.astype(dtype)

    def with_values(self, values: np.ndarray, drop_head: int = 0) -> "Series":
        """Return a copy holding ``values``; the index loses its first ``drop_head`` labels."""
        idx = self.index[drop_head:] if self.index is not None else None
        return Series(values=np.asarray(values, dtype=float), index=idx, name=self.name)


def as_values(y: "Series | Sequence[float] | np.ndarray") -> np.ndarray:
    """Coerce a :class:`Series` or array-like to a 1-D float ndarray."""
    if isinstance(y, Series):
        return y.values
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a one-dimensional series, got shape {arr.shape}")
    return arr


def load_csv(
    path: str | Path,
    column: str | int,
    *,
    header: bool = True,
    index_column: str | int | None = None,
) -> Series:
    """Load one numeric column of a CSV file as a :class:`Series`.

    Parameters
    ----------
    path : str or Path
        File to read.
    column : str or int
        Column name (requires ``header=True``) or 0-based position.
    header : bool
        Whether the first row holds column names.
    index_column : str, int, optional
        Column to keep as time labels (not parsed, stored verbatim).

    Raises
    ------
    FileNotFoundError
        If ``path`` does not exist.
    ValueError
        If the column is missing, or a cell is non-numeric (the message
        reports the 1-based file row of the offending cell).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [row for row in reader if row]
    if not rows:
        raise ValueError(f"{path}: file contains no data rows")

    names: list[str] | None = None
    start_row = 0
    if header:
        names = [c.strip() for c in rows[0]]
        start_row = 1

    def resolve(col: str | int, what: str) -> int:
        if isinstance(col, int):
            width = len(rows[start_row]) if len(rows) > start_row else 0
            if not 0 <= col < width:
                raise ValueError(f"{path}: {what} index {col} out of range (row width {width})")
            return col
        if names is None:
            raise ValueError(f"{path}: {what} given by name {col!r} but header=False")
        if col not in names:
            raise ValueError(f"{path}: no column named {col!r} (available: {', '.join(names)})")
        return names.index(col)

    ci = resolve(column, "column")
    ii = resolve(index_column, "index column") if index_column is not None else None

    values: list[float] = []
    labels: list[str] = []
    for offset, row in enumerate(rows[start_row:], start=start_row + 1):
        cell = row[ci].strip() if ci < len(row) else ""
        try:
            x = float(cell)
        except ValueError:
            raise ValueError(
                f"{path}: non-numeric value {cell!r} in column {column!r} at row {offset}"
            ) from None
        if not math.isfinite(x):
            raise ValueError(
                f"{path}: non-finite value {cell!r} in column {column!r} at row {offset}"
            )
        values.append(x)
        if ii is not None:
            labels.append(row[ii].strip() if ii < len(row) else "")

    name = column if isinstance(column, str) else (names[ci] if names else None)
    return Series(
        values=np.asarray(values, dtype=float),
        index=tuple(labels) if ii is not None else None,
        name=name,
    )


def detrend_linear(y: "Series | np.ndarray"):
    """Remove an ordinary-least-squares linear time trend.

    The regressor is ``t = 0, 1, ..., T-1``; the returned residual series has
    exact zero mean and zero covariance with ``t``.
    """
    vals = as_values(y)
    t = vals.size
    if t < 2:
        raise ValueError(f"need at least 2 observations to detrend, got {t}")
    x = np.arange(t, dtype=float)
    # Closed-form simple regression: slope from centered cross-moments.
    xc = x - x.mean()
    slope = float(xc @ (vals - vals.mean())) / float(xc @ xc)
    intercept = vals.mean() - slope * x.mean()
    resid = vals - (intercept + slope * x)
    if isinstance(y, Series):
        return y.with_values(resid)
    return resid


def difference(y: "Series | np.ndarray", d: int = 1):
    """Apply the first-difference operator ``d`` times (output length T − d)."""
    if d < 0:
        raise ValueError(f"difference order must be non-negative, got {d}")
    vals = as_values(y)
    if vals.size <= d:
        raise ValueError(f"series of length {vals.size} too short to difference {d} times")
    out = np.diff(vals, n=d) if d > 0 else vals.copy()
    if isinstance(y, Series):
        return y.with_values(out, drop_head=d)
    return out


def acf(y: "Series | np.ndarray", max_lag: int) -> np.ndarray:
    """Sample autocorrelations at lags ``1..max_lag``.

    Uses the population-style normalization: demeaned products summed over the
    ``T − h`` overlapping pairs, divided by ``T`` and by the lag-0 moment, so
    every value lies in ``[-1, 1]``.
    """
    vals = as_values(y)
    t = vals.size
    if not 1 <= max_lag < t:
        raise ValueError(f"max_lag must be in [1, {t - 1}], got {max_lag}")
    x = vals - vals.mean()
    gamma0 = float(x @ x) / t
    if gamma0 == 0.0:
        raise ValueError("series is constant; autocorrelation undefined")
    out = np.empty(max_lag)
    for h in range(1, max_lag + 1):
        out[h - 1] = float(x[h:] @ x[:-h]) / t / gamma0
    return out
