"""Reference predictors that need no training."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from eventflow.datamodel.records import STEPS_PER_DAY, EventWindow, FlowSeries

STEPS_PER_WEEK = 7 * STEPS_PER_DAY
BASELINES = ("persistence", "seasonal_mean")


@dataclass
class BaselinePrediction:
    pred: np.ndarray  # (M, T')
    fallback: bool = False  # seasonal mean lacked history and persistence was used


def persistence(window: EventWindow) -> np.ndarray:
    return np.repeat(window.history[:, -1:], window.target.shape[1], axis=1)


def seasonal_mean(window: EventWindow, flows: FlowSeries, max_weeks: int | None = None) -> np.ndarray | None:
    """Average of the same weekday and clock slot in earlier weeks, or None without any."""
    rows = np.asarray(window.affected.sensor_indices)
    steps = window.target_start + np.arange(window.target.shape[1])
    weeks = steps[0] // STEPS_PER_WEEK
    if max_weeks is not None:
        weeks = min(weeks, max_weeks)
    if weeks < 1:
        return None
    lags = STEPS_PER_WEEK * np.arange(1, weeks + 1)
    idx = steps[None, :] - lags[:, None]  # (weeks, T')
    return flows.values[rows][:, idx].mean(axis=1)


def baseline_predict(kind: str, window: EventWindow, flows: FlowSeries | None = None, max_weeks: int | None = None) -> BaselinePrediction:
    if kind == "persistence":
        return BaselinePrediction(persistence(window))
    if kind == "seasonal_mean":
        if flows is None:
            raise ValueError("seasonal_mean needs the source flow series")
        pred = seasonal_mean(window, flows, max_weeks)
        if pred is None:
            return BaselinePrediction(persistence(window), fallback=True)
        return BaselinePrediction(pred)
    raise ValueError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


def baseline_predictor(kind: str, flows: FlowSeries | None = None):
    """Adapter for ``slice_report``: windows -> predictions."""

    def predict(windows: Sequence[EventWindow]) -> list[np.ndarray]:
        return [baseline_predict(kind, w, flows).pred for w in windows]

    return predict
