"""Sliding event windows over a flow series."""

from __future__ import annotations

import datetime as dt
import logging
import math
from typing import TYPE_CHECKING, Iterable

from eventflow.datamodel.geo import affected_sensors, build_adjacency
from eventflow.datamodel.records import (
    STEPS_PER_HOUR,
    AffectedSet,
    CoverageError,
    EventRecord,
    EventWindow,
    FlowSeries,
    NoCoveredSensorsError,
    SensorGraph,
    ValidationError,
)

if TYPE_CHECKING:
    from eventflow.textctx import TextContext

log = logging.getLogger(__name__)


def impact_span(flows: FlowSeries, event: EventRecord, window_hours: float) -> tuple[int, int]:
    """Half-open step range ``[a, b)`` whose timestamps fall in the impact span.

    The span runs from ``window_hours`` before the start to ``window_hours``
    after the end; the step stamped exactly at the closing bound is excluded.
    """
    pad = dt.timedelta(hours=window_hours)
    lo = flows.position(event.start - pad)
    hi = flows.position(event.end + pad)
    return math.ceil(lo - 1e-9), math.ceil(hi - 1e-9)


def slice_windows(
    flows: FlowSeries,
    event: EventRecord,
    affected: AffectedSet,
    window_hours: int,
    history_steps: int = 12,
    horizon: int = 12,
    context: "TextContext | None" = None,
) -> list[EventWindow]:
    """Every stride-1 window whose targets lie inside the event's impact span."""
    if window_hours <= 0:
        raise ValidationError("window_hours must be positive")
    a, b = impact_span(flows, event, window_hours)
    need_lo, need_hi = a - history_steps, b
    missing = []
    if need_lo < 0:
        missing.append((flows.timestamp(need_lo), min(flows.epoch_start, flows.timestamp(need_hi))))
    if need_hi > flows.n_steps:
        missing.append((max(flows.end, flows.timestamp(need_lo)), flows.timestamp(need_hi)))
    if missing:
        spans = ", ".join(f"[{s:%Y-%m-%d %H:%M}, {e:%Y-%m-%d %H:%M})" for s, e in missing)
        raise CoverageError(
            f"event {event.event_id}: flows do not cover the needed span; missing {spans}", missing
        )

    rows = flows.values[affected.sensor_indices]
    out = []
    for p in range(a, b - horizon + 1):
        out.append(
            EventWindow(
                history=rows[:, p - history_steps : p].copy(),
                target=rows[:, p : p + horizon].copy(),
                future_timestamps=[flows.timestamp(k) for k in range(p, p + horizon)],
                affected=affected,
                window_hours=int(window_hours),
                event=event,
                context=context,
                target_start=p,
            )
        )
    return out


def build_windows(
    graph: SensorGraph,
    flows: FlowSeries,
    events: Iterable[EventRecord],
    radius_km: float,
    window_hours: int,
    contexts: "dict[str, TextContext] | None" = None,
    history_steps: int = 12,
    horizon: int = 12,
) -> list[EventWindow]:
    """Windows for every event that has covered sensors at ``radius_km``.

    Events without covered sensors are skipped with a log line, as are events
    whose impact span runs off the flow record.
    """
    if graph.adjacency is None:
        graph.adjacency = build_adjacency(graph)
    out: list[EventWindow] = []
    for ev in events:
        try:
            aff = affected_sensors(graph, ev.venue_coords, radius_km, venue_id=ev.venue_id)
            ctx = contexts.get(ev.event_id) if contexts else None
            out.extend(slice_windows(flows, ev, aff, window_hours, history_steps, horizon, ctx))
        except (NoCoveredSensorsError, CoverageError) as exc:
            log.info("skipping event %s: %s", ev.event_id, exc)
    return out


def steps_for_hours(hours: float) -> int:
    return int(round(hours * STEPS_PER_HOUR))
