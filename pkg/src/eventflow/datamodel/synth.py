"""Seeded synthetic city: sensors, flows, events and their text payloads.

Base flow is a daily plus weekly sinusoid with Gaussian noise.  Each event
adds a bump whose size depends on its category and declared attendance, and
which falls off with sensor distance, with the sensor's bearing relative to
the crowd's approach direction, and with time from the event's start and end.
Attendance and approach direction are written only into the text payloads,
never into any numeric field, so the text carries signal the flows alone
cannot reveal ahead of time.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from eventflow.datamodel.geo import bearing_rad, haversine_km
from eventflow.datamodel.records import (
    CATEGORIES,
    STEP_SECONDS,
    STEPS_PER_DAY,
    EventRecord,
    FlowSeries,
    SensorGraph,
    ValidationError,
)
from eventflow.numerics import make_rng

KM_PER_DEG_LAT = 111.195

VENUE_NAMES = (
    "Harbor Arena",
    "Summit Stadium",
    "Lakeside Bowl",
    "Granite Theatre",
    "Civic Hall",
    "Riverside Pavilion",
    "Orchard Park",
    "Beacon Center",
)

# spoken levels of crowd size; the factor scales the bump
ATTENDANCE_LEVELS = (
    ("small local gathering", 0.25),
    ("moderate turnout", 0.6),
    ("large crowd", 1.1),
    ("massive sellout crowd", 1.8),
)

APPROACH = (("north", 0.0), ("east", math.pi / 2), ("south", math.pi), ("west", -math.pi / 2))

CATEGORY_WORDS = {
    "Trade&Industry": "trade expo exhibition",
    "Entertainment": "entertainment show",
    "Celebration": "festival celebration parade",
    "PublicService": "public service community forum",
    "PerformingArts": "concert performance stage",
    "Sports": "sports game match",
}

_FILLER = (
    "fans keep posting photos and countdowns",
    "people are sharing plans for the weekend",
    "lots of chatter about merchandise and food stands",
    "some complain about ticket prices",
    "a few posts mention the weather forecast",
    "locals debate the best seats",
)


@dataclass
class SynthConfig:
    n_sensors: int = 20
    days: int = 30
    n_venues: int = 3
    event_rate: float = 1.0 / 3.0  # events per day
    noise_sd: float = 6.0
    start_date: str = "2019-01-07"
    center: tuple[float, float] = (34.05, -118.25)
    extent_km: float = 6.0  # half-width of the square sensor field
    base_flow: tuple[float, float] = (80.0, 200.0)
    daily_amp: float = 0.45
    weekly_amp: float = 0.1
    bump_amplitude: float = 120.0
    decay_km: float = 2.5
    directional: float = 0.7
    ingress_width_h: float = 1.0
    egress_width_h: float = 0.75
    plateau: float = 0.35
    plateau_directional: bool = True  # False: the in-event plateau ignores direction
    egress_peak: float = 0.8
    category_factors: dict[str, float] = field(
        default_factory=lambda: {
            "Trade&Industry": 0.9,
            "Entertainment": 1.0,
            "Celebration": 1.0,
            "PublicService": 0.9,
            "PerformingArts": 1.1,
            "Sports": 1.1,
        }
    )
    start_hours: tuple[int, int] = (11, 19)  # half-open range of start hours
    separate_departure: bool = True  # departures leave toward their own, independently drawn side
    text_specifics: bool = True  # exact date and head count in the category texts
    tweets_per_event: int = 6
    noise_tweets: int = 20

    def validate(self) -> None:
        if self.n_sensors < 1:
            raise ValidationError("n_sensors must be at least 1")
        if self.days < 3:
            raise ValidationError("days must be at least 3")
        if self.n_venues < 1:
            raise ValidationError("n_venues must be at least 1")
        lo, hi = self.start_hours
        if not 0 <= lo < hi <= 21:
            raise ValidationError("start_hours must satisfy 0 <= lo < hi <= 21 so events end the same day")
        if self.n_venues > len(VENUE_NAMES):
            raise ValidationError(f"at most {len(VENUE_NAMES)} venues are supported")
        if self.n_sensors < self.n_venues:
            raise ValidationError("need at least one sensor per venue")
        if self.event_rate < 0:
            raise ValidationError("event_rate must be nonnegative")
        if self.noise_sd < 0 or self.bump_amplitude < 0:
            raise ValidationError("noise_sd and bump_amplitude must be nonnegative")
        if self.decay_km <= 0 or self.extent_km <= 0:
            raise ValidationError("decay_km and extent_km must be positive")
        if not 0 <= self.directional < 1:
            raise ValidationError("directional must lie in [0, 1)")
        unknown = set(self.category_factors) - set(CATEGORIES)
        if unknown:
            raise ValidationError(f"unknown categories in category_factors: {sorted(unknown)}")

    @property
    def n_events(self) -> int:
        return int(round(self.event_rate * self.days))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        obj = dict(obj)
        for key in ("center", "base_flow", "start_hours"):
            if key in obj:
                obj[key] = tuple(obj[key])
        known = cls.__dataclass_fields__
        extra = set(obj) - set(known)
        if extra:
            raise ValidationError(f"unknown synth config keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class EventTruth:
    """Hidden generator parameters of one event (never given to models)."""

    attendance_level: int
    attendance: int
    approach: int
    amplitude: float
    departure: int = -1  # index into APPROACH; -1 means the same side as the approach

    @property
    def departure_side(self) -> int:
        return self.approach if self.departure < 0 else self.departure


class SynthWorld(NamedTuple):
    graph: SensorGraph
    flows: FlowSeries
    events: list[EventRecord]
    texts: dict  # event_id -> TextContext
    tweets: list[dict]
    truth: dict[str, EventTruth]


def _offset(center, north_km, east_km):
    lat = center[0] + north_km / KM_PER_DEG_LAT
    lon = center[1] + east_km / (KM_PER_DEG_LAT * math.cos(math.radians(center[0])))
    return lat, lon


def base_pattern(cfg: SynthConfig, base_levels: np.ndarray, n_steps: int, epoch: dt.datetime) -> np.ndarray:
    """Noise-free daily + weekly pattern, shape (N, n_steps)."""
    k = np.arange(n_steps)
    day_frac = (k % STEPS_PER_DAY) / STEPS_PER_DAY
    day_index = k / STEPS_PER_DAY + epoch.weekday()
    shape = 1.0 + cfg.daily_amp * np.sin(2 * math.pi * (day_frac - 0.25)) + cfg.weekly_amp * np.sin(
        2 * math.pi * day_index / 7.0
    )
    return base_levels[:, None] * shape[None, :]


def phase_profiles(cfg: SynthConfig, hours_from_start: np.ndarray, duration_h: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrival, in-event and departure components of the bump over time."""
    t = np.asarray(hours_from_start, dtype=float)
    ingress = np.exp(-((t / cfg.ingress_width_h) ** 2))
    during = np.where((t >= 0) & (t <= duration_h), cfg.plateau, 0.0)
    egress = cfg.egress_peak * np.exp(-(((t - duration_h) / cfg.egress_width_h) ** 2))
    return ingress, during, egress


def time_profile(cfg: SynthConfig, hours_from_start: np.ndarray, duration_h: float) -> np.ndarray:
    """Unit-peak temporal shape of an event bump (1.0 exactly at the start)."""
    ingress, during, egress = phase_profiles(cfg, hours_from_start, duration_h)
    return np.maximum(np.maximum(ingress, during), egress)


def bump(
    cfg: SynthConfig,
    amp: float,
    space_in: np.ndarray,
    space_out: np.ndarray,
    hours: np.ndarray,
    duration_h: float,
    space_mid: np.ndarray | None = None,
) -> np.ndarray:
    """Event increment (N, steps).

    Each step takes the dominant phase; arrivals use the approach-side
    spatial factor, departures the departure-side one and the in-event
    plateau ``space_mid`` (their average unless given).
    """
    ingress, during, egress = phase_profiles(cfg, hours, duration_h)
    if space_mid is None:
        space_mid = 0.5 * (space_in + space_out)
    parts = np.stack(
        [
            space_in[:, None] * ingress[None, :],
            space_mid[:, None] * during[None, :],
            space_out[:, None] * egress[None, :],
        ]
    )
    phase = np.argmax(np.stack([ingress, during, egress]), axis=0)
    return amp * np.take_along_axis(parts, phase[None, None, :].repeat(parts.shape[1], axis=1), axis=0)[0]


def spatial_factor(cfg: SynthConfig, distance_km, bearing, approach_rad: float) -> np.ndarray:
    """Distance decay times a cardioid that favours sensors on the approach side."""
    direction = (1.0 + cfg.directional * np.cos(np.asarray(bearing) - approach_rad)) / (1.0 + cfg.directional)
    return np.exp(-np.asarray(distance_km) / cfg.decay_km) * direction


def event_amplitude(cfg: SynthConfig, categories, attendance_level: int) -> float:
    cat = float(np.mean([cfg.category_factors.get(c, 1.0) for c in categories]))
    return cfg.bump_amplitude * ATTENDANCE_LEVELS[attendance_level][1] * cat


def _event_texts(ev: EventRecord, venue_name: str, truth: EventTruth, rng, specifics: bool = True) -> dict[str, str]:
    cats = " and ".join(CATEGORY_WORDS[c] for c in ev.categories)
    level = ATTENDANCE_LEVELS[truth.attendance_level][0]
    approach = APPROACH[truth.approach][0]
    departure = APPROACH[truth.departure_side][0]
    weekday = ev.date.strftime("%A")
    info = (
        f"{cats} at {venue_name} on {weekday}{' ' + ev.date.isoformat() if specifics else ''}, "
        f"doors at {ev.start_time:%H:%M}, ends around {ev.end_time:%H:%M}; "
        f"afterwards the crowd disperses toward the {departure}."
    )
    chatter = rng.choice(len(_FILLER), size=2, replace=False)
    public = f"Online buzz for the {cats}: {_FILLER[chatter[0]]}; {_FILLER[chatter[1]]}."
    traffic = (
        f"Expect a {level}{f' of about {truth.attendance} attendees' if specifics else ''}; "
        f"most visitors will approach from the {approach} side of the venue."
    )
    return {"event_info": info, "public_reactions": public, "traffic_conditions": traffic}


def synth_generate(cfg: SynthConfig | None = None, seed: int = 0) -> SynthWorld:
    """Build a reproducible synthetic world."""
    from eventflow.textctx import TextContext

    cfg = cfg or SynthConfig()
    cfg.validate()
    epoch = dt.datetime.combine(dt.date.fromisoformat(cfg.start_date), dt.time(0, 0))
    n_steps = cfg.days * STEPS_PER_DAY

    # venues inside the inner half of the field, one anchor sensor near each
    rv = make_rng(seed, "venues")
    venues = []
    for v in range(cfg.n_venues):
        n_km, e_km = rv.uniform(-cfg.extent_km / 2, cfg.extent_km / 2, size=2)
        venues.append((f"V{v}", VENUE_NAMES[v], _offset(cfg.center, n_km, e_km)))

    rs = make_rng(seed, "sensors")
    coords = []
    for i in range(cfg.n_sensors):
        if i < cfg.n_venues:
            r = rs.uniform(0.3, 1.5)
            ang = rs.uniform(-math.pi, math.pi)
            vlat, vlon = venues[i][2]
            n0 = (vlat - cfg.center[0]) * KM_PER_DEG_LAT
            e0 = (vlon - cfg.center[1]) * KM_PER_DEG_LAT * math.cos(math.radians(cfg.center[0]))
            coords.append(_offset(cfg.center, n0 + r * math.cos(ang), e0 + r * math.sin(ang)))
        else:
            n_km, e_km = rs.uniform(-cfg.extent_km, cfg.extent_km, size=2)
            coords.append(_offset(cfg.center, n_km, e_km))
    coords = np.asarray(coords)
    graph = SensorGraph([f"S{i:03d}" for i in range(cfg.n_sensors)], coords)

    base_levels = rs.uniform(cfg.base_flow[0], cfg.base_flow[1], size=cfg.n_sensors)
    values = base_pattern(cfg, base_levels, n_steps, epoch)
    values += make_rng(seed, "noise").normal(0.0, cfg.noise_sd, size=values.shape)

    # events: at most one per (venue, day), leaving room for 4 h windows and history
    re = make_rng(seed, "events")
    slots = [(v, d) for v in range(cfg.n_venues) for d in range(1, cfg.days - 1)]
    n_ev = min(cfg.n_events, len(slots))
    chosen = sorted(re.choice(len(slots), size=n_ev, replace=False).tolist()) if n_ev else []
    rt = make_rng(seed, "texts")
    events, texts, truth, tweets = [], {}, {}, []
    k_axis = np.arange(n_steps)
    for j, si in enumerate(chosen):
        v, d = slots[si]
        vid, vname, vcoords = venues[v]
        start_h = int(re.integers(*cfg.start_hours))
        start_m = int(re.choice([0, 30]))
        dur_h = int(re.integers(2, 4))
        n_cat = int(re.integers(1, 3))
        cats = tuple(sorted(re.choice(CATEGORIES, size=n_cat, replace=False).tolist(), key=CATEGORIES.index))
        level = int(re.integers(len(ATTENDANCE_LEVELS)))
        approach = int(re.integers(len(APPROACH)))
        departure = int(re.integers(len(APPROACH))) if cfg.separate_departure else -1
        attendance = int(round(re.uniform(0.8, 1.2) * [800, 6000, 18000, 45000][level], -2))
        date = (epoch + dt.timedelta(days=d)).date()
        ev_id = f"E{j:03d}"
        amp = event_amplitude(cfg, cats, level)
        ev_truth = EventTruth(level, attendance, approach, amp, departure)
        ev = EventRecord(
            event_id=ev_id,
            venue_id=vid,
            venue_coords=vcoords,
            date=date,
            start_time=dt.time(start_h, start_m),
            end_time=dt.time(start_h + dur_h, start_m),
            categories=cats,
        )
        cat_text = _event_texts(ev, vname, ev_truth, rt, cfg.text_specifics)
        ev.raw_text = {
            "calendar": (
                f"{vname}: {cat_text['event_info']} "
                f"Expected attendance about {attendance} ({ATTENDANCE_LEVELS[level][0]}). "
                f"Main access from the {APPROACH[approach][0]}; "
                f"departures toward the {APPROACH[ev_truth.departure_side][0]}."
            ),
        }
        events.append(ev)
        truth[ev_id] = ev_truth
        texts[ev_id] = TextContext(ev_id, cat_text)

        dist = haversine_km(vcoords[0], vcoords[1], coords[:, 0], coords[:, 1])
        bear = bearing_rad(vcoords[0], vcoords[1], coords[:, 0], coords[:, 1])
        space_in = spatial_factor(cfg, dist, bear, APPROACH[approach][1])
        space_out = spatial_factor(cfg, dist, bear, APPROACH[ev_truth.departure_side][1])
        start_step = (ev.start - epoch).total_seconds() / STEP_SECONDS
        hours = (k_axis - start_step) * STEP_SECONDS / 3600.0
        space_mid = None if cfg.plateau_directional else np.exp(-dist / cfg.decay_km) / (1.0 + cfg.directional)
        values += bump(cfg, amp, space_in, space_out, hours, dur_h, space_mid)

        for t in range(cfg.tweets_per_event):
            when = ev.start - dt.timedelta(days=int(rt.integers(1, 30)), minutes=int(rt.integers(0, 1440)))
            hashtag = "#" + vname.replace(" ", "")
            tweets.append(
                {
                    "id": f"{ev_id}-t{t}",
                    "text": f"{CATEGORY_WORDS[cats[0]].split()[0]} at {vname} {hashtag}: "
                    f"{_FILLER[int(rt.integers(len(_FILLER)))]}",
                    "created_at": when.isoformat(),
                }
            )
    for t in range(cfg.noise_tweets):
        tweets.append(
            {
                "id": f"noise-t{t}",
                "text": f"random thoughts: {_FILLER[int(rt.integers(len(_FILLER)))]}",
                "created_at": (epoch + dt.timedelta(minutes=int(rt.integers(0, n_steps * 5)))).isoformat(),
            }
        )

    np.maximum(values, 0.0, out=values)
    flows = FlowSeries(values, epoch, STEP_SECONDS, list(graph.sensor_ids))
    return SynthWorld(graph, flows, events, texts, tweets, truth)
