"""Error metrics.

Sums use ``math.fsum`` so results do not depend on element order.
"""

from __future__ import annotations

import math

import numpy as np

from eventflow.numerics import DimensionError


def _diff(pred, truth) -> np.ndarray:
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    t = np.asarray(getattr(truth, "data", truth), dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"prediction shape {p.shape} != truth shape {t.shape}")
    if p.size == 0:
        raise ValueError("metrics of an empty array are undefined")
    return (p - t).ravel()


def mae(pred, truth) -> float:
    d = _diff(pred, truth)
    return math.fsum(np.abs(d)) / d.size


def _rms(d: np.ndarray) -> float:
    # scaled by the largest |d| so squares neither underflow nor overflow
    s = float(np.max(np.abs(d)))
    if s == 0.0 or not math.isfinite(s):
        return s
    u = d / s
    return s * math.sqrt(math.fsum(u * u) / d.size)


def rmse(pred, truth) -> float:
    return _rms(_diff(pred, truth))


def pooled(preds, truths) -> tuple[float, float, int]:
    """(MAE, RMSE, element count) over a list of equally weighted arrays."""
    d = np.concatenate([_diff(p, t) for p, t in zip(preds, truths, strict=True)])
    return math.fsum(np.abs(d)) / d.size, _rms(d), int(d.size)


def percent_reduction(baseline: float, ours: float) -> float:
    """Relative improvement of ``ours`` over ``baseline`` in percent."""
    if not baseline > 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return 100.0 * (baseline - ours) / baseline
