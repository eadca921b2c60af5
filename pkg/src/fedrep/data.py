"""Smart-meter ingestion and per-retailer dataset preparation.

Raw readings are held as a pandas DataFrame in the long layout (one row per
customer per half-hour) with columns ``customer_id``, ``category``,
``postcode``, ``timestamp``, ``consumption_kwh``. A wide-layout adapter
normalizes the one-row-per-customer-day export with 48 half-hour columns
into the same frame.

Everything downstream of ingestion is numpy: a retailer's series is the
postcode-level sum of its customers, min-max scaled with statistics fitted
on the training split only, then cut into stride-1 sliding windows.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

__all__ = [
    "READING_COLUMNS",
    "RetailerSeries",
    "ScalingParams",
    "WindowedDataset",
    "load_readings",
    "filter_gc",
    "aggregate_by_postcode",
    "split",
    "fit_scaler",
    "apply_scaler",
    "make_windows",
    "concat_windows",
]

READING_COLUMNS = ["customer_id", "category", "postcode", "timestamp", "consumption_kwh"]

GC_CATEGORY = "GC"

HALF_HOUR = np.timedelta64(30, "m")

# Half-hour column labels of the wide layout, in file order. Each label is
# the end of the metering interval; the trailing "0:00" is the midnight that
# closes the day and therefore belongs to the next calendar date.
WIDE_TIME_COLUMNS = [
    f"{h}:{m:02d}" for h in range(0, 24) for m in (30, 0) if not (h == 0 and m == 0)
] + ["0:00"]
_WIDE_ID_COLUMNS = ["Customer", "Postcode", "Consumption Category", "date"]


@dataclass(eq=False)
class RetailerSeries:
    """One retailer's aggregated half-hourly consumption series."""

    postcode: int
    timestamps: np.ndarray  # datetime64[ns], strictly increasing
    values: np.ndarray  # float64, same length

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[ns]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.timestamps.shape != self.values.shape or self.timestamps.ndim != 1:
            raise ValueError("timestamps and values must be 1-D and equally long")
        if len(self.timestamps) > 1 and not (np.diff(self.timestamps) > np.timedelta64(0)).all():
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ScalingParams:
    """Min-max statistics of a training split."""

    min: float
    max: float

    def __post_init__(self) -> None:
        if not self.max > self.min:
            raise ValueError(f"degenerate scaler: max ({self.max}) must exceed min ({self.min})")


@dataclass(eq=False)
class WindowedDataset:
    """Supervised pairs: (lookback-step input window, lookahead-step target)."""

    inputs: np.ndarray  # (count, lookback)
    targets: np.ndarray  # (count, lookahead)

    def __post_init__(self) -> None:
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise ValueError("inputs and targets must be 2-D")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must pair up one to one")

    @property
    def count(self) -> int:
        return len(self.inputs)

    @property
    def lookback(self) -> int:
        return self.inputs.shape[1]

    @property
    def lookahead(self) -> int:
        return self.targets.shape[1]


def _fail_row(path: str | Path, line: int, reason: str) -> DataError:
    return DataError(f"{path}: malformed row at line {line}: {reason}")


def _load_long(path: str | Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in READING_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}; expected header {READING_COLUMNS}")
    frame = frame[READING_COLUMNS]
    # Header is line 1, so data row i sits at line i + 2.
    lines = frame.index.to_numpy() + 2

    ts = pd.to_datetime(frame["timestamp"], format="%Y-%m-%dT%H:%M", errors="coerce")
    bad = ts.isna().to_numpy()
    if bad.any():
        raise _fail_row(path, lines[bad][0], f"unparsable timestamp {frame['timestamp'][bad].iloc[0]!r}")
    off_grid = ((ts.dt.minute % 30 != 0) | (ts.dt.second != 0)).to_numpy()
    if off_grid.any():
        raise _fail_row(path, lines[off_grid][0], "timestamp not on a 30-minute boundary")

    kwh = pd.to_numeric(frame["consumption_kwh"], errors="coerce")
    bad = kwh.isna().to_numpy()
    if bad.any():
        raise _fail_row(path, lines[bad][0], f"unparsable consumption {frame['consumption_kwh'][bad].iloc[0]!r}")
    negative = (kwh < 0).to_numpy()
    if negative.any():
        raise _fail_row(path, lines[negative][0], f"negative consumption {kwh[negative].iloc[0]}")

    postcode = pd.to_numeric(frame["postcode"], errors="coerce")
    bad = (postcode.isna() | (postcode % 1 != 0)).to_numpy()
    if bad.any():
        raise _fail_row(path, lines[bad][0], f"invalid postcode {frame['postcode'][bad].iloc[0]!r}")

    return pd.DataFrame(
        {
            "customer_id": frame["customer_id"].astype(str),
            "category": frame["category"].astype(str),
            "postcode": postcode.astype(np.int64),
            "timestamp": ts,
            "consumption_kwh": kwh.astype(np.float64),
        }
    )


def _load_wide(path: str | Path) -> pd.DataFrame:
    # The export sometimes carries a one-line disclaimer above the header.
    try:
        with open(path, "r", encoding="utf-8-sig") as fh:
            first = fh.readline()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    skiprows = 0 if first.split(",")[0].strip().strip('"') == "Customer" else 1
    try:
        frame = pd.read_csv(path, skiprows=skiprows, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    missing = [c for c in _WIDE_ID_COLUMNS if c not in frame.columns]
    missing += [c for c in WIDE_TIME_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(
            f"{path}: not the expected wide layout; missing columns {missing[:6]}"
            f"{'...' if len(missing) > 6 else ''}"
        )

    long = frame.melt(
        id_vars=_WIDE_ID_COLUMNS,
        value_vars=WIDE_TIME_COLUMNS,
        var_name="interval_end",
        value_name="consumption_kwh",
    )
    date = pd.to_datetime(long["date"], dayfirst=True, errors="coerce")
    if date.isna().any():
        bad = long["date"][date.isna()].iloc[0]
        raise DataError(f"{path}: unparsable date {bad!r} in wide layout")
    offset = pd.to_timedelta(long["interval_end"] + ":00")
    # "0:00" closes the day: shift it to the following midnight.
    offset = offset.where(offset > pd.Timedelta(0), pd.Timedelta(days=1))
    ts = date + offset

    kwh = pd.to_numeric(long["consumption_kwh"], errors="coerce")
    if kwh.isna().any():
        i = int(np.flatnonzero(kwh.isna().to_numpy())[0])
        raise DataError(
            f"{path}: unparsable consumption {long['consumption_kwh'].iloc[i]!r} "
            f"(customer {long['Customer'].iloc[i]}, {long['date'].iloc[i]} {long['interval_end'].iloc[i]})"
        )
    if (kwh < 0).any():
        i = int(np.flatnonzero((kwh < 0).to_numpy())[0])
        raise DataError(f"{path}: negative consumption (customer {long['Customer'].iloc[i]})")

    postcode = pd.to_numeric(long["Postcode"], errors="coerce")
    if postcode.isna().any():
        raise DataError(f"{path}: non-numeric postcode in wide layout")

    out = pd.DataFrame(
        {
            "customer_id": long["Customer"].astype(str),
            "category": long["Consumption Category"].astype(str),
            "postcode": postcode.astype(np.int64),
            "timestamp": ts,
            "consumption_kwh": kwh.astype(np.float64),
        }
    )
    # Melt stacks column blocks; reorder to file order (row 1's 48 cells,
    # then row 2's, ...).
    order = np.argsort(long.index.to_numpy() % len(frame), kind="stable")
    return out.iloc[order].reset_index(drop=True)


def load_readings(path: str | Path, layout: str = "long") -> pd.DataFrame:
    """Load raw smart-meter readings into the canonical long frame.

    layout "long" expects the documented header
    ``customer_id,category,postcode,timestamp,consumption_kwh`` with
    ``YYYY-MM-DDTHH:MM`` timestamps; layout "wide" accepts the
    one-row-per-customer-day export and normalizes it. Malformed rows
    raise :class:`DataError` naming the offending line.
    """
    if layout == "long":
        return _load_long(path)
    if layout == "wide":
        return _load_wide(path)
    raise ValueError(f"unknown layout {layout!r}; expected 'long' or 'wide'")


def filter_gc(readings: pd.DataFrame) -> pd.DataFrame:
    """Keep only General Consumption rows, preserving order."""
    return readings[readings["category"] == GC_CATEGORY].reset_index(drop=True)


def aggregate_by_postcode(
    readings: pd.DataFrame, postcode: int, fill_gaps: bool = False
) -> RetailerSeries:
    """Sum customer consumption per timestamp for one postcode.

    The result must cover a contiguous half-hour grid; missing instants are
    an error unless ``fill_gaps`` is set, which forward-fills them.
    Expects GC-filtered input.
    """
    sub = readings[readings["postcode"] == postcode]
    if len(sub) == 0:
        raise DataError(f"no readings for postcode {postcode}")
    totals = sub.groupby("timestamp", sort=True)["consumption_kwh"].sum()
    full = pd.date_range(totals.index[0], totals.index[-1], freq="30min")
    if len(totals) != len(full):
        if not fill_gaps:
            missing = full.difference(totals.index)
            raise DataError(
                f"postcode {postcode}: {len(missing)} missing half-hour(s), "
                f"first at {missing[0].isoformat()}; pass fill_gaps to forward-fill"
            )
        totals = totals.reindex(full).ffill()
    return RetailerSeries(
        postcode=int(postcode),
        timestamps=totals.index.to_numpy(),
        values=totals.to_numpy(dtype=np.float64),
    )


def split(series: RetailerSeries, train_fraction: float) -> tuple[RetailerSeries, RetailerSeries]:
    """Chronological train/test split: first floor(fraction * L) points train."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(series)
    n_train = int(np.floor(train_fraction * n))
    if n < 2 or n_train == 0 or n_train == n:
        raise ValueError(f"series of length {n} too short for a {train_fraction} split")
    train = RetailerSeries(series.postcode, series.timestamps[:n_train], series.values[:n_train])
    test = RetailerSeries(series.postcode, series.timestamps[n_train:], series.values[n_train:])
    return train, test


def fit_scaler(train: RetailerSeries) -> ScalingParams:
    """Min-max statistics of the training split only."""
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty series")
    lo = float(train.values.min())
    hi = float(train.values.max())
    if hi == lo:
        raise ValueError(f"constant series (all values {lo}); min-max scaling undefined")
    return ScalingParams(min=lo, max=hi)


def apply_scaler(series: RetailerSeries, params: ScalingParams) -> RetailerSeries:
    """Map values through (x - min) / (max - min); never clamps.

    Test-split values outside the training range land outside [0, 1].
    """
    scaled = (series.values - params.min) / (params.max - params.min)
    return RetailerSeries(series.postcode, series.timestamps.copy(), scaled)


def make_windows(series: RetailerSeries, lookback: int = 12, lookahead: int = 5) -> WindowedDataset:
    """Stride-1 sliding windows: L - lookback - lookahead + 1 pairs."""
    if lookback < 1 or lookahead < 1:
        raise ValueError("lookback and lookahead must be positive")
    span = lookback + lookahead
    if len(series) < span:
        raise ValueError(
            f"series of length {len(series)} shorter than lookback + lookahead = {span}"
        )
    view = np.lib.stride_tricks.sliding_window_view(series.values, span)
    return WindowedDataset(inputs=view[:, :lookback].copy(), targets=view[:, lookback:].copy())


def concat_windows(datasets: list[WindowedDataset]) -> WindowedDataset:
    """Pool several windowed datasets into one, in the given order."""
    if not datasets:
        raise ValueError("nothing to concatenate")
    return WindowedDataset(
        inputs=np.concatenate([d.inputs for d in datasets], axis=0),
        targets=np.concatenate([d.targets for d in datasets], axis=0),
    )
