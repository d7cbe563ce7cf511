"""Readers and writers for the on-disk dataset formats.

sensors.csv   ``sensor_id,lat,lon``
flows.csv     ``timestamp_utc,sensor_id,flow`` (long format)
events.jsonl  one EventRecord per line
tweets.jsonl  ``{"id", "text", "created_at"}`` per line
"""

from __future__ import annotations

import csv
import datetime as dt
import json
from typing import Iterable

import numpy as np

from eventflow.datamodel.records import STEP_SECONDS, EventRecord, FlowSeries, SensorGraph, ValidationError


def write_sensors(path, graph: SensorGraph) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sensor_id", "lat", "lon"])
        for sid, (lat, lon) in zip(graph.sensor_ids, graph.coords):
            w.writerow([sid, repr(float(lat)), repr(float(lon))])


def read_sensors(path) -> SensorGraph:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValidationError(f"{path}: no sensors")
    try:
        return SensorGraph([r["sensor_id"] for r in rows], [(float(r["lat"]), float(r["lon"])) for r in rows])
    except KeyError as exc:
        raise ValidationError(f"{path}: missing column {exc}") from None


def write_flows(path, flows: FlowSeries, sensor_ids: list[str] | None = None) -> None:
    ids = sensor_ids or flows.sensor_ids or [str(i) for i in range(flows.values.shape[0])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_utc", "sensor_id", "flow"])
        for k in range(flows.n_steps):
            ts = flows.timestamp(k).strftime("%Y-%m-%dT%H:%M:%SZ")
            for i, sid in enumerate(ids):
                w.writerow([ts, sid, f"{flows.values[i, k]:.6g}"])


def _parse_ts(text: str) -> dt.datetime:
    t = dt.datetime.fromisoformat(text.strip().replace("Z", "+00:00"))
    return t.replace(tzinfo=None) if t.tzinfo else t


def read_flows(path, sensor_ids: list[str], impute: str | None = None, step_seconds: int = STEP_SECONDS) -> FlowSeries:
    """Pivot long-format flows onto a regular grid.

    Missing cells are an error unless ``impute == "ffill"``, which carries the
    previous value of the same sensor forward.
    """
    if impute not in (None, "none", "ffill"):
        raise ValidationError(f"unknown impute mode {impute!r}")
    pos = {s: i for i, s in enumerate(sensor_ids)}
    cells: dict[tuple[int, dt.datetime], float] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            sid = r["sensor_id"]
            if sid not in pos:
                raise ValidationError(f"{path}: unknown sensor id {sid!r}")
            cells[(pos[sid], _parse_ts(r["timestamp_utc"]))] = float(r["flow"])
    if not cells:
        raise ValidationError(f"{path}: no flow rows")
    stamps = sorted({ts for _, ts in cells})
    epoch, last = stamps[0], stamps[-1]
    n_steps = int((last - epoch).total_seconds() // step_seconds) + 1
    values = np.full((len(sensor_ids), n_steps), np.nan)
    for (i, ts), v in cells.items():
        off = (ts - epoch).total_seconds()
        if off % step_seconds:
            raise ValidationError(f"{path}: timestamp {ts} is off the {step_seconds}s grid")
        values[i, int(off // step_seconds)] = v
    holes = np.isnan(values)
    if holes.any():
        if impute != "ffill":
            i, k = np.argwhere(holes)[0]
            raise ValidationError(
                f"{path}: {int(holes.sum())} missing cells (first: sensor {sensor_ids[i]} at "
                f"{epoch + dt.timedelta(seconds=step_seconds * int(k))}); pass impute='ffill' to fill"
            )
        if holes[:, 0].any():
            raise ValidationError(f"{path}: cannot forward-fill leading gaps")
        for k in range(1, n_steps):
            col = holes[:, k]
            values[col, k] = values[col, k - 1]
    return FlowSeries(values, epoch, step_seconds, list(sensor_ids))


def write_jsonl(path, rows: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
    return out


def write_events(path, events: Iterable[EventRecord]) -> None:
    write_jsonl(path, (ev.to_json() for ev in events))


def read_events(path) -> list[EventRecord]:
    return [EventRecord.from_json(obj) for obj in read_jsonl(path)]


def read_tweets(path) -> list[dict]:
    rows = read_jsonl(path)
    for r in rows:
        if "text" not in r or "id" not in r:
            raise ValidationError(f"{path}: tweet rows need 'id' and 'text'")
    return rows
