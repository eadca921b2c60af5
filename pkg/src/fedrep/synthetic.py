"""Seeded synthetic smart-meter data.

Generates half-hourly consumption for a set of postcodes as a sum of daily
and weekly sinusoids plus noise, in the same long CSV layout the ingestion
expects. This is stand-in data for tests and dataset-free runs, not real
measurements; per-customer amplitudes and phases derive from the seed so
every run is reproducible.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd

from .data import GC_CATEGORY, READING_COLUMNS
from .rng import derive_seed

__all__ = ["generate_readings", "write_synthetic_csv"]

STEPS_PER_DAY = 48
STEPS_PER_WEEK = 7 * STEPS_PER_DAY


def _customer_series(rng: np.random.Generator, n_steps: int) -> np.ndarray:
    t = np.arange(n_steps, dtype=np.float64)
    base = rng.uniform(0.4, 1.2)
    daily_amp = rng.uniform(0.2, 0.6)
    weekly_amp = rng.uniform(0.05, 0.25)
    daily_phase = rng.uniform(0.0, 2 * np.pi)
    weekly_phase = rng.uniform(0.0, 2 * np.pi)
    noise = rng.normal(0.0, 0.05, size=n_steps)
    values = (
        base
        + daily_amp * np.sin(2 * np.pi * t / STEPS_PER_DAY + daily_phase)
        + weekly_amp * np.sin(2 * np.pi * t / STEPS_PER_WEEK + weekly_phase)
        + noise
    )
    return np.maximum(values, 0.0)


def generate_readings(
    postcodes: list[int],
    days: int = 28,
    customers_per_postcode: int = 3,
    seed: int = 0,
    start: str = "2012-07-01",
) -> pd.DataFrame:
    """Deterministic synthetic readings in the canonical long frame."""
    if days < 1 or customers_per_postcode < 1 or not postcodes:
        raise ValueError("need at least one postcode, one day and one customer")
    n_steps = days * STEPS_PER_DAY
    timestamps = np.datetime64(start) + np.arange(n_steps) * np.timedelta64(30, "m")
    frames = []
    for postcode in postcodes:
        for customer in range(customers_per_postcode):
            rng = np.random.default_rng(derive_seed(seed, postcode, customer))
            frames.append(
                pd.DataFrame(
                    {
                        "customer_id": f"syn-{postcode}-{customer}",
                        "category": GC_CATEGORY,
                        "postcode": np.int64(postcode),
                        "timestamp": timestamps,
                        "consumption_kwh": _customer_series(rng, n_steps),
                    }
                )
            )
    return pd.concat(frames, ignore_index=True)[READING_COLUMNS]


def write_synthetic_csv(path: str | Path, readings: pd.DataFrame) -> None:
    """Write readings in the documented long CSV layout."""
    out = readings.copy()
    out["timestamp"] = out["timestamp"].dt.strftime("%Y-%m-%dT%H:%M")
    out.to_csv(path, index=False, lineterminator="\n")
