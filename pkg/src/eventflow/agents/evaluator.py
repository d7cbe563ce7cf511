"""Error breakdowns and the evaluator agent that revises the screening logic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from eventflow.agents.backend import CompletionBackend
from eventflow.agents.logic import LogicStore
from eventflow.agents.pipeline import StructuredParseError, ask, load_template
from eventflow.numerics import DimensionError

DIMENSIONS = ("weekday", "time_slot", "event_type", "venue")


def window_meta(window) -> dict:
    """Bucket labels of one window: weekday and hour slot of its first target step, event types, venue."""
    ts = window.future_timestamps[0]
    ev = window.event
    return {
        "weekday": ts.strftime("%A"),
        "time_slot": f"{ts.hour:02d}:00",
        "event_type": list(ev.categories) if ev is not None else [],
        "venue": ev.venue_id if ev is not None else window.affected.venue_id,
    }


@dataclass
class ErrorStats:
    """MAE per bucket along each dimension, the worst buckets, and venues flagged for review."""

    buckets: dict[str, dict[str, dict]] = field(default_factory=dict)
    worst: dict[str, list[str]] = field(default_factory=dict)
    flagged_venues: list[str] = field(default_factory=list)
    overall_mae: float = 0.0
    n_windows: int = 0

    @property
    def empty(self) -> bool:
        return self.n_windows == 0

    def table(self, dim: str) -> str:
        rows = sorted(self.buckets.get(dim, {}).items(), key=lambda kv: (-kv[1]["mae"], kv[0]))
        return "\n".join(f"- {b}: MAE {v['mae']:.3f} over {v['n']} values" for b, v in rows) or "(no data)"

    def to_json(self) -> dict:
        return {
            "buckets": self.buckets,
            "worst": self.worst,
            "flagged_venues": self.flagged_venues,
            "overall_mae": self.overall_mae,
            "n_windows": self.n_windows,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ErrorStats":
        return cls(
            {d: dict(v) for d, v in obj.get("buckets", {}).items()},
            {d: list(v) for d, v in obj.get("worst", {}).items()},
            list(obj.get("flagged_venues", [])),
            float(obj.get("overall_mae", 0.0)),
            int(obj.get("n_windows", 0)),
        )


def compute_error_patterns(
    preds: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    metas: Sequence[Mapping],
    top_k: int = 3,
    flag_ratio: float = 1.5,
) -> ErrorStats:
    """Absolute-error statistics bucketed by weekday, time slot, event type and venue.

    A window with several event types counts towards each of them.  The
    ``top_k`` buckets with the largest nonzero MAE are listed per dimension;
    a venue is flagged when its MAE reaches ``flag_ratio`` times the overall MAE.
    """
    if not (len(preds) == len(truths) == len(metas)):
        raise DimensionError(f"{len(preds)} predictions, {len(truths)} truths, {len(metas)} metadata rows")
    sums: dict[str, dict[str, list]] = {d: {} for d in DIMENSIONS}
    all_err = []
    for p, t, meta in zip(preds, truths, metas):
        p = np.asarray(p, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise DimensionError(f"prediction shape {p.shape} != truth shape {t.shape}")
        err = np.abs(p - t).ravel()
        all_err.append(err)
        for dim in DIMENSIONS:
            labels = meta[dim]
            for label in labels if isinstance(labels, (list, tuple)) else [labels]:
                sums[dim].setdefault(str(label), []).append(err)
    stats = ErrorStats(n_windows=len(preds))
    if not preds:
        return stats
    allv = np.concatenate(all_err)
    stats.overall_mae = math.fsum(allv) / allv.size
    for dim in DIMENSIONS:
        table = {}
        for label, errs in sums[dim].items():
            v = np.concatenate(errs)
            table[label] = {"mae": math.fsum(v) / v.size, "n": int(v.size)}
        stats.buckets[dim] = table
        ranked = sorted((b for b in table if table[b]["mae"] > 0), key=lambda b: (-table[b]["mae"], b))
        stats.worst[dim] = ranked[:top_k]
    if stats.overall_mae > 0:
        venues = stats.buckets["venue"]
        stats.flagged_venues = sorted(
            (v for v in venues if venues[v]["mae"] >= flag_ratio * stats.overall_mae),
            key=lambda v: (-venues[v]["mae"], v),
        )[:top_k]
    return stats


def _nonempty(reply: str) -> str:
    text = reply.strip()
    if not text:
        raise StructuredParseError("empty logic text", "logic")
    return text


def run_evaluator(
    stats: ErrorStats,
    logic: LogicStore,
    backend: CompletionBackend,
    venue_names: Mapping[str, str] | None = None,
) -> LogicStore:
    """Ask for a revised global logic (and revised logic for each flagged venue), then commit once.

    Nothing is written unless every backend call succeeds, so a failure
    leaves the store exactly as it was.
    """
    if stats.empty:
        raise ValueError("error statistics are empty; run an evaluation first")
    names = venue_names or {}
    prompt = load_template("evaluator_global").format(
        logic_global=logic.logic_global,
        errors_by_weekday=stats.table("weekday"),
        errors_by_time_of_day=stats.table("time_slot"),
        errors_by_event_type=stats.table("event_type"),
    )
    new_global = ask(
        backend,
        "evaluator_global",
        prompt,
        _nonempty,
        {"logic_global": logic.logic_global, "worst": {d: stats.worst.get(d, []) for d in DIMENSIONS[:3]}},
    )
    venue_updates = {}
    for vid in stats.flagged_venues:
        current = logic.logic_venue.get(vid, "")
        profile = "\n".join(
            [
                f"- venue MAE {stats.buckets['venue'][vid]['mae']:.3f} vs overall {stats.overall_mae:.3f}",
                f"- worst weekdays: {', '.join(stats.worst.get('weekday', [])) or 'none'}",
                f"- worst time slots: {', '.join(stats.worst.get('time_slot', [])) or 'none'}",
                f"- worst event types: {', '.join(stats.worst.get('event_type', [])) or 'none'}",
            ]
        )
        vprompt = load_template("evaluator_venue").format(
            venue_name=names.get(vid, vid), logic_venue=current or "(none yet)", venue_error_profile=profile
        )
        venue_updates[vid] = ask(
            backend,
            "evaluator_venue",
            vprompt,
            _nonempty,
            {"venue_id": vid, "logic_venue": current, "venue_mae": stats.buckets["venue"][vid]["mae"]},
        )
    logic.update(new_global, venue_updates)
    return logic
