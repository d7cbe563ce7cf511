"""Sensor graphs, flows, events, windows, partitions and the synthetic world."""

from eventflow.datamodel.geo import (
    EARTH_RADIUS_KM,
    affected_sensors,
    bearing_rad,
    build_adjacency,
    haversine_km,
    row_normalize,
)
from eventflow.datamodel.partition import partition, read_splits, write_splits
from eventflow.datamodel.records import (
    CATEGORIES,
    STEP_SECONDS,
    STEPS_PER_DAY,
    STEPS_PER_HOUR,
    AffectedSet,
    CoverageError,
    EventRecord,
    EventWindow,
    FlowSeries,
    NoCoveredSensorsError,
    SensorGraph,
    SplitSpec,
    ValidationError,
)
from eventflow.datamodel.synth import SynthConfig, SynthWorld, synth_generate
from eventflow.datamodel.windows import build_windows, impact_span, slice_windows

__all__ = [
    "EARTH_RADIUS_KM",
    "CATEGORIES",
    "STEP_SECONDS",
    "STEPS_PER_DAY",
    "STEPS_PER_HOUR",
    "AffectedSet",
    "CoverageError",
    "EventRecord",
    "EventWindow",
    "FlowSeries",
    "NoCoveredSensorsError",
    "SensorGraph",
    "SplitSpec",
    "SynthConfig",
    "SynthWorld",
    "ValidationError",
    "affected_sensors",
    "bearing_rad",
    "build_adjacency",
    "build_windows",
    "haversine_km",
    "impact_span",
    "partition",
    "read_splits",
    "row_normalize",
    "slice_windows",
    "synth_generate",
    "write_splits",
]
