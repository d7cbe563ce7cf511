"""Record types shared across the package."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from eventflow.textctx import TextContext

CATEGORIES = (
    "Trade&Industry",
    "Entertainment",
    "Celebration",
    "PublicService",
    "PerformingArts",
    "Sports",
)
STEP_SECONDS = 300
STEPS_PER_HOUR = 3600 // STEP_SECONDS
STEPS_PER_DAY = 86400 // STEP_SECONDS


class ValidationError(ValueError):
    """Input data violates a structural invariant."""


class CoverageError(ValueError):
    """Flow data does not cover the span a request needs."""

    def __init__(self, message: str, missing: list[tuple[dt.datetime, dt.datetime]]):
        super().__init__(message)
        self.missing = missing


class NoCoveredSensorsError(ValueError):
    """No sensor lies within the requested radius of a venue."""


def _check_coords(lat, lon) -> None:
    lat = np.asarray(lat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    if not (np.all(np.isfinite(lat)) and np.all(np.isfinite(lon))):
        raise ValidationError("coordinates must be finite")
    if np.any(np.abs(lat) > 90.0):
        raise ValidationError(f"latitude out of range: {lat[np.abs(lat) > 90.0].tolist()}")
    if np.any(np.abs(lon) > 180.0):
        raise ValidationError(f"longitude out of range: {lon[np.abs(lon) > 180.0].tolist()}")


@dataclass
class SensorGraph:
    sensor_ids: list[str]
    coords: np.ndarray  # (N, 2) latitude, longitude in degrees
    adjacency: np.ndarray | None = None

    def __post_init__(self):
        self.sensor_ids = [str(s) for s in self.sensor_ids]
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 2)
        if not self.sensor_ids:
            raise ValidationError("a sensor graph needs at least one sensor")
        if len(set(self.sensor_ids)) != len(self.sensor_ids):
            raise ValidationError("sensor ids must be unique")
        if self.coords.shape[0] != len(self.sensor_ids):
            raise ValidationError(f"{len(self.sensor_ids)} ids but {self.coords.shape[0]} coordinate rows")
        _check_coords(self.coords[:, 0], self.coords[:, 1])

    @property
    def n(self) -> int:
        return len(self.sensor_ids)

    def index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.sensor_ids)}


@dataclass
class FlowSeries:
    """Vehicle counts per 5-minute slice, one row per sensor."""

    values: np.ndarray
    epoch_start: dt.datetime
    step_seconds: int = STEP_SECONDS
    sensor_ids: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError(f"flow values must be (N, T), got shape {self.values.shape}")
        if np.any(self.values < 0):
            raise ValidationError("flow values must be nonnegative")
        if self.sensor_ids is not None and len(self.sensor_ids) != self.values.shape[0]:
            raise ValidationError("sensor_ids length does not match flow rows")

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]

    def timestamp(self, k: int) -> dt.datetime:
        return self.epoch_start + dt.timedelta(seconds=self.step_seconds * int(k))

    def position(self, ts: dt.datetime) -> float:
        """Fractional step index of ``ts``."""
        return (ts - self.epoch_start).total_seconds() / self.step_seconds

    @property
    def end(self) -> dt.datetime:
        return self.timestamp(self.n_steps)


@dataclass
class EventRecord:
    event_id: str
    venue_id: str
    venue_coords: tuple[float, float]
    date: dt.date
    start_time: dt.time
    end_time: dt.time
    categories: tuple[str, ...]
    raw_text: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.date, str):
            self.date = dt.date.fromisoformat(self.date)
        if isinstance(self.start_time, str):
            self.start_time = dt.time.fromisoformat(self.start_time)
        if isinstance(self.end_time, str):
            self.end_time = dt.time.fromisoformat(self.end_time)
        self.venue_coords = (float(self.venue_coords[0]), float(self.venue_coords[1]))
        _check_coords(self.venue_coords[0], self.venue_coords[1])
        self.categories = tuple(self.categories)
        if not self.categories:
            raise ValidationError(f"event {self.event_id}: categories must be nonempty")
        unknown = set(self.categories) - set(CATEGORIES)
        if unknown:
            raise ValidationError(f"event {self.event_id}: unknown categories {sorted(unknown)}")
        if not self.start_time < self.end_time:
            raise ValidationError(f"event {self.event_id}: start_time must precede end_time")

    @property
    def start(self) -> dt.datetime:
        return dt.datetime.combine(self.date, self.start_time)

    @property
    def end(self) -> dt.datetime:
        return dt.datetime.combine(self.date, self.end_time)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id,
            "venue_id": self.venue_id,
            "venue_coords": list(self.venue_coords),
            "date": self.date.isoformat(),
            "start_time": self.start_time.strftime("%H:%M"),
            "end_time": self.end_time.strftime("%H:%M"),
            "categories": list(self.categories),
            "raw_text": dict(self.raw_text),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EventRecord":
        return cls(
            event_id=str(obj["event_id"]),
            venue_id=str(obj["venue_id"]),
            venue_coords=tuple(obj["venue_coords"]),
            date=obj["date"],
            start_time=obj["start_time"],
            end_time=obj["end_time"],
            categories=tuple(obj["categories"]),
            raw_text=dict(obj.get("raw_text", {})),
        )


@dataclass
class AffectedSet:
    venue_id: str
    radius_km: float
    sensor_indices: np.ndarray
    D: np.ndarray  # (M, 3): distance_km, sin(bearing), cos(bearing)
    adjacency: np.ndarray | None = None  # (M, M), row-normalised
    sensor_ids: list[str] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.sensor_indices)


@dataclass
class EventWindow:
    history: np.ndarray  # (M, T)
    target: np.ndarray  # (M, T')
    future_timestamps: list[dt.datetime]
    affected: AffectedSet
    window_hours: int
    event: EventRecord | None = None
    context: "TextContext | None" = None
    target_start: int = 0  # step index of the first target in the source FlowSeries

    @property
    def event_id(self) -> str | None:
        return self.event.event_id if self.event is not None else None

    @property
    def window_id(self) -> str:
        return f"{self.event_id}@{self.window_hours}h@{self.affected.radius_km:g}km@{self.target_start}"


@dataclass
class SplitSpec:
    mode: str = "by_time"
    train_ratio: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("by_time", "by_type"):
            raise ValidationError(f"split mode must be by_time or by_type, got {self.mode!r}")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValidationError("train_ratio must lie in (0, 1)")
