from __future__ import annotations

import math
from typing import Iterable, List

import numpy as np
import pandas as pd

from .errors import DomainError
from .models import CycleRecord

SUMMARY_COLUMNS = (
    "cylinder",
    "segment",
    "cycles",
    "settling_cycle",
    "settling_cycles",
    "overshoot",
    "steady_min",
    "steady_max",
    "steady_band",
    "mean_abs_error",
    "misfires",
    "clamped",
)


def settling_cycle(cycles: np.ndarray, errors: np.ndarray, band: float) -> float:
    """Cycle index after which |error| stays within the band; NaN if it never settles."""
    outside = np.flatnonzero(np.abs(errors) > band)
    if outside.size == 0:
        return float(cycles[0])
    last = int(outside[-1])
    return math.nan if last == errors.size - 1 else float(cycles[last + 1])


def overshoot(errors: np.ndarray) -> float:
    if errors.size == 0 or errors[0] == 0:
        return 0.0
    opposite = errors[np.sign(errors) == -np.sign(errors[0])]
    return float(np.max(np.abs(opposite))) if opposite.size else 0.0


def steady_window(times: np.ndarray, errors: np.ndarray, fraction: float = 0.2):
    """(min, max) of the error over the last `fraction` of the time span."""
    start = times[-1] - fraction * (times[-1] - times[0])
    tail = errors[times >= start]
    return float(tail.min()), float(tail.max())


def summarize(
    records: Iterable[CycleRecord],
    *,
    band: float = 1.0,
    steady_fraction: float = 0.2,
    activation_cycle: int = 3,
) -> pd.DataFrame:
    """Per cylinder and segment tracking metrics over fired, controlled cycles."""
    frame = pd.DataFrame([r.as_row() for r in records])
    if frame.empty:
        raise DomainError("cannot summarize an empty record stream")
    rows: List[dict] = []

    controlled = frame[(frame["cycle_index"] >= activation_cycle) & frame["fired"]]
    for (cyl, segment), group in controlled.groupby(["cylinder_index", "segment"], sort=True):
        group = group.sort_values("sim_time")
        burnt = group[~group["misfire"]]
        errors = (burnt["ca50_true"] - burnt["ca50_ref"]).to_numpy(dtype=float)
        times = burnt["sim_time"].to_numpy(dtype=float)
        cycles = burnt["cycle_index"].to_numpy(dtype=float)
        row = {
            "cylinder": int(cyl),
            "segment": int(segment),
            "cycles": int(len(group)),
            "misfires": int(group["misfire"].sum()),
            "clamped": int(group["clamped"].sum()),
        }
        if errors.size:
            lo, hi = steady_window(times, errors, steady_fraction)
            settled = settling_cycle(cycles, errors, band)
            row.update(
                settling_cycle=settled,
                settling_cycles=settled - float(group["cycle_index"].iloc[0]),
                overshoot=overshoot(errors),
                steady_min=lo,
                steady_max=hi,
                steady_band=max(abs(lo), abs(hi)),
                mean_abs_error=float(np.mean(np.abs(errors))),
            )
        rows.append(row)
    return pd.DataFrame(rows, columns=list(SUMMARY_COLUMNS))


__all__ = ["SUMMARY_COLUMNS", "settling_cycle", "overshoot", "steady_window", "summarize"]
