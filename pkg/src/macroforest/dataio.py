"""Panel I/O, stationarity transforms, lag panels and direct-forecast targets.

Row conventions used throughout the package: a lag panel row ``t`` holds
values observed strictly before ``t`` (``series[t - p]`` for ``p >= 1``),
while :func:`build_direct_target` aligns row ``t`` with the value to be
predicted from information available *at* ``t``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

__all__ = [
    "DomainError",
    "ForecastSpec",
    "Frequency",
    "SeriesPanel",
    "apply_tcode",
    "build_direct_target",
    "build_lag_panel",
    "complete_rows",
    "invert_tcode",
    "read_panel_csv",
    "write_panel_csv",
]

_LOG_CODES = (4, 5, 6, 7)
_TCODE_LABELS = {"transform", "transforms", "tcode", "tcodes"}
_SKIP_LABELS = {"factors"}


class DomainError(ValueError):
    """Raised when a transform is applied outside its mathematical domain."""


class Frequency(str, enum.Enum):
    QUARTERLY = "quarterly"
    MONTHLY = "monthly"

    @classmethod
    def _missing_(cls, value):
        aliases = {"q": cls.QUARTERLY, "m": cls.MONTHLY}
        return aliases.get(str(value).strip().lower())

    @property
    def pandas_freq(self) -> str:
        return "Q" if self is Frequency.QUARTERLY else "M"

    @property
    def periods_per_year(self) -> int:
        return 4 if self is Frequency.QUARTERLY else 12


def _as_vector(series) -> np.ndarray:
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-d series, got shape {arr.shape}")
    return arr


def _diff(x: np.ndarray, order: int) -> np.ndarray:
    out = x.copy()
    for _ in range(order):
        shifted = np.full_like(out, np.nan)
        shifted[1:] = out[1:] - out[:-1]
        out = shifted
    return out


def apply_tcode(series, code: int) -> np.ndarray:
    """Transform a raw series to (approximate) stationarity.

    Codes follow the FRED-MD/QD convention: 1 level, 2 first difference,
    3 second difference, 4 log, 5 log difference, 6 second log difference,
    7 first difference of the growth rate ``x_t / x_{t-1} - 1``.

    The output has the same length as the input; observations consumed by
    differencing are returned as leading NaNs.
    """
    x = _as_vector(series)
    if code not in range(1, 8):
        raise ValueError(f"transform code must be in 1..7, got {code!r}")
    if code in _LOG_CODES:
        bad = np.flatnonzero(~np.isnan(x) & (x <= 0))
        if bad.size:
            raise DomainError(
                f"transform code {code} needs strictly positive values; "
                f"index {int(bad[0])} holds {x[bad[0]]!r}"
            )
    if code == 1:
        return x.copy()
    if code == 2:
        return _diff(x, 1)
    if code == 3:
        return _diff(x, 2)
    if code == 4:
        return np.log(x)
    if code == 5:
        return _diff(np.log(x), 1)
    if code == 6:
        return _diff(np.log(x), 2)
    growth = np.full_like(x, np.nan)
    growth[1:] = x[1:] / x[:-1] - 1.0
    return _diff(growth, 1)


def invert_tcode(transformed, code: int, initial) -> np.ndarray:
    """Undo :func:`apply_tcode` given the raw values it consumed.

    ``initial`` holds the first raw observations dropped by the transform
    (one value for codes 2 and 5, two for codes 3 and 6, none otherwise).
    Only codes 1 through 6 are invertible this way.
    """
    z = _as_vector(transformed)
    init = np.atleast_1d(np.asarray(initial, dtype=float))
    need = {1: 0, 2: 1, 3: 2, 4: 0, 5: 1, 6: 2}
    if code not in need:
        raise ValueError(f"code {code} cannot be inverted")
    k = need[code]
    if init.size < k:
        raise ValueError(f"code {code} needs {k} initial values, got {init.size}")
    logged = code >= 4
    start = np.log(init[:k]) if logged else init[:k]
    out = np.empty_like(z)
    out[:k] = start
    if k == 0:
        out = z.copy()
    elif k == 1:
        out[1:] = start[0] + np.cumsum(z[1:])
    else:
        level = np.empty_like(z)
        level[:2] = start
        d1 = start[1] - start[0]
        for t in range(2, z.size):
            d1 = d1 + z[t]
            level[t] = level[t - 1] + d1
        out = level
    return np.exp(out) if logged else out


@dataclass(frozen=True)
class ForecastSpec:
    """Direct-forecast target definition.

    ``target_mode`` is ``"point"`` for ``y_{t+h}`` or ``"average"`` for the
    mean of ``y_{t+1}, ..., y_{t+h}``.
    """

    h: int = 1
    target_mode: str = "point"

    def __post_init__(self):
        if int(self.h) != self.h or self.h < 1:
            raise ValueError(f"horizon must be a positive integer, got {self.h!r}")
        if self.target_mode not in ("point", "average"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")


def build_direct_target(y, spec: ForecastSpec | int) -> np.ndarray:
    """Align the h-step target so that row ``t`` is predicted at time ``t``."""
    if not isinstance(spec, ForecastSpec):
        spec = ForecastSpec(int(spec))
    y = _as_vector(y)
    T, h = y.size, spec.h
    if h >= T:
        raise ValueError(f"horizon {h} must be smaller than the series length {T}")
    out = np.full(T, np.nan)
    if spec.target_mode == "point":
        out[: T - h] = y[h:]
    else:
        csum = np.concatenate([[0.0], np.cumsum(y)])
        idx = np.arange(T - h)
        out[: T - h] = (csum[idx + h + 1] - csum[idx + 1]) / h
    return out


def build_lag_panel(series, P: int) -> np.ndarray:
    """Return the T x P matrix whose column ``p-1`` is the series lagged ``p``."""
    x = _as_vector(series)
    if P < 1:
        raise ValueError(f"number of lags must be >= 1, got {P}")
    T = x.size
    out = np.full((T, P), np.nan)
    for p in range(1, P + 1):
        if p < T:
            out[p:, p - 1] = x[: T - p]
    return out


def complete_rows(*arrays) -> np.ndarray:
    """Boolean mask of rows that are finite in every given array."""
    mask = None
    for a in arrays:
        a = np.asarray(a, dtype=float)
        ok = np.isfinite(a) if a.ndim == 1 else np.isfinite(a).all(axis=1)
        mask = ok if mask is None else mask & ok
    if mask is None:
        raise ValueError("complete_rows needs at least one array")
    return mask


def _parse_periods(labels: Sequence[str], frequency: Frequency | None):
    labels = [str(s).strip() for s in labels]
    freqs = [frequency] if frequency is not None else [Frequency.QUARTERLY, Frequency.MONTHLY]
    last_err: Exception | None = None
    for freq in freqs:
        try:
            per = pd.PeriodIndex([pd.Period(s, freq=freq.pandas_freq) for s in labels])
        except (ValueError, TypeError) as err:
            try:
                dt = pd.to_datetime(pd.Series(labels), format="mixed")
                per = pd.PeriodIndex(dt.dt.to_period(freq.pandas_freq))
            except (ValueError, TypeError):
                last_err = err
                continue
        if per.size < 2 or np.all(np.diff(per.asi8) == 1):
            return per, freq
        last_err = ValueError("dates are not contiguous at the stated frequency")
    raise ValueError(f"cannot parse period labels: {last_err}")


@dataclass(frozen=True)
class SeriesPanel:
    """A T x N block of time series with unique names and contiguous dates."""

    values: np.ndarray
    names: tuple[str, ...]
    frequency: Frequency
    dates: tuple[str, ...]
    tcodes: tuple[int, ...] | None = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("panel values must be a T x N matrix")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))
        object.__setattr__(self, "frequency", Frequency(self.frequency))
        T, N = values.shape
        if T < 1:
            raise ValueError("panel needs at least one observation")
        if len(self.names) != N:
            raise ValueError(f"{len(self.names)} names for {N} columns")
        if len(set(self.names)) != N:
            dup = sorted({n for n in self.names if self.names.count(n) > 1})
            raise ValueError(f"duplicate column names: {dup}")
        if len(self.dates) != T:
            raise ValueError(f"{len(self.dates)} dates for {T} rows")
        per, _ = _parse_periods(self.dates, self.frequency)
        object.__setattr__(self, "dates", tuple(str(p) for p in per))
        if self.tcodes is not None:
            codes = tuple(int(c) for c in self.tcodes)
            if len(codes) != N or any(c not in range(1, 8) for c in codes):
                raise ValueError("tcodes must give one code in 1..7 per column")
            object.__setattr__(self, "tcodes", codes)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.names.index(name)].copy()
        except ValueError:
            raise KeyError(f"no column named {name!r}") from None

    def select(self, names: Sequence[str]) -> "SeriesPanel":
        idx = [self.names.index(n) for n in names]
        codes = None if self.tcodes is None else tuple(self.tcodes[i] for i in idx)
        return SeriesPanel(self.values[:, idx], tuple(names), self.frequency, self.dates, codes)

    def drop(self, names: Sequence[str]) -> "SeriesPanel":
        return self.select([n for n in self.names if n not in set(names)])

    def slice_rows(self, start: int, stop: int) -> "SeriesPanel":
        return SeriesPanel(self.values[start:stop], self.names, self.frequency,
                           self.dates[start:stop], self.tcodes)

    def transformed(self, codes: Sequence[int] | None = None) -> "SeriesPanel":
        """Apply transform codes column by column (stored codes by default)."""
        codes = self.tcodes if codes is None else tuple(codes)
        if codes is None:
            raise ValueError("panel carries no transform codes")
        cols = []
        for name, col, code in zip(self.names, self.values.T, codes):
            try:
                cols.append(apply_tcode(col, code))
            except DomainError as err:
                raise DomainError(f"column {name!r}: {err}") from None
        return SeriesPanel(np.column_stack(cols), self.names, self.frequency, self.dates, None)

    def date_index(self, label: str) -> int:
        """Row position of a period label such as ``"2003Q1"`` or ``"2003-01"``."""
        per, _ = _parse_periods([label], self.frequency)
        key = str(per[0])
        try:
            return self.dates.index(key)
        except ValueError:
            raise KeyError(f"date {label!r} outside the panel") from None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=pd.Index(self.dates, name="date"),
                            columns=list(self.names))


def read_panel_csv(path, frequency: Frequency | str | None = None) -> SeriesPanel:
    """Read a FRED-style CSV.

    The first column holds dates (ISO dates, ``m/d/Y`` or period labels such
    as ``1961Q3``), the first row variable names.  Rows directly below the
    header whose first cell reads ``transform``/``tcode`` supply transform
    codes; a ``factors`` row is skipped.  Empty cells are missing values.
    """
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    if raw.shape[1] < 2:
        raise ValueError(f"{path}: need a date column and at least one series")
    names = [str(c).strip() for c in raw.columns[1:]]
    first = raw.iloc[:, 0].str.strip()
    tcodes = None
    start = 0
    while start < len(raw):
        label = first.iloc[start].lower()
        if label in _TCODE_LABELS:
            tcodes = tuple(int(float(v)) for v in raw.iloc[start, 1:])
        elif label not in _SKIP_LABELS:
            break
        start += 1
    body = raw.iloc[start:]
    body = body[body.iloc[:, 0].str.strip() != ""]
    values = body.iloc[:, 1:].apply(lambda c: pd.to_numeric(c.str.strip().replace("", np.nan)))
    freq = Frequency(frequency) if frequency is not None else None
    per, freq = _parse_periods(list(body.iloc[:, 0]), freq)
    return SeriesPanel(values.to_numpy(dtype=float), tuple(names), freq,
                       tuple(str(p) for p in per), tcodes)


def write_panel_csv(panel: SeriesPanel, path) -> None:
    """Write a panel in the layout :func:`read_panel_csv` accepts."""
    frame = panel.to_frame().reset_index()
    lines = [",".join(["date", *panel.names])]
    if panel.tcodes is not None:
        lines.append(",".join(["transform", *map(str, panel.tcodes)]))
    for row in frame.itertuples(index=False):
        cells = [row[0]] + ["" if np.isnan(v) else repr(float(v)) for v in row[1:]]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
