"""The extractor, tweet analyser and mobility analyser agents, and the per-event pipeline."""

from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import asdict, dataclass
from importlib import resources
from typing import Callable, Iterable, Mapping, Sequence

from eventflow.agents.backend import BackendError, CompletionBackend
from eventflow.agents.logic import LogicStore
from eventflow.agents.query import QueryAst, QueryParseError, match_tweets, parse_query
from eventflow.datamodel.records import EventRecord
from eventflow.textctx import TextContext

MAX_REPROMPTS = 3
RECENT_DAYS = 7
N_QUERIES = 5

EVENT_INFO_SECTIONS = (
    ("event_type", "Event Type"),
    ("venue", "Event Venue and Location Information"),
    ("time", "Event Time"),
    ("content", "Event Content"),
    ("audience", "Target Audience"),
    ("scale", "Event Scale or Importance"),
)
SOCIAL_SECTIONS = (
    ("attention", "Social Media Attention and Reasons"),
    ("participation", "Public Participation Willingness and Audience Characteristics with Reasons"),
    ("sentiment", "Sentiment Distribution and Reasons"),
    ("topics", "Main Discussion Topics"),
)
MOBILITY_KEYS = (
    ("filtered_event_info", "filtered event info"),
    ("filtered_public_reactions", "filtered public reactions"),
    ("traffic_conditions", "traffic conditions"),
)


class StructuredParseError(ValueError):
    """An agent reply lacks a required part of the output contract."""

    def __init__(self, message: str, section: str | None = None, raw: str = ""):
        self.section = section
        self.raw = raw
        super().__init__(message)


class PipelineError(RuntimeError):
    """An agent failed for good; ``raw`` holds the last reply (if any)."""

    def __init__(self, agent: str, message: str, raw: str | None = None):
        self.agent = agent
        self.raw = raw
        super().__init__(f"{agent}: {message}")


def load_template(name: str) -> str:
    return resources.files("eventflow.agents").joinpath("prompts", f"{name}.txt").read_text()


# ---------------------------------------------------------------------------
# reply types and parsers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BasicEventInfo:
    event_type: str
    venue: str
    time: str
    content: str
    audience: str
    scale: str

    def render(self) -> str:
        return "\n".join(f"{i}. {title}: {getattr(self, key)}" for i, (key, title) in enumerate(EVENT_INFO_SECTIONS, 1))


@dataclass(frozen=True)
class SocialAnalysis:
    attention: str
    participation: str
    sentiment: str
    topics: str

    def render(self) -> str:
        return "\n".join(f"{i}. {title}: {getattr(self, key)}" for i, (key, title) in enumerate(SOCIAL_SECTIONS, 1))


@dataclass(frozen=True)
class MobilityContext:
    filtered_event_info: str
    filtered_public_reactions: str
    traffic_conditions: str

    def to_text_context(self, event_id: str) -> TextContext:
        return TextContext(
            event_id,
            {
                "event_info": self.filtered_event_info,
                "public_reactions": self.filtered_public_reactions,
                "traffic_conditions": self.traffic_conditions,
            },
        )

    def to_json(self) -> dict:
        return {label: getattr(self, key) for key, label in MOBILITY_KEYS}


def parse_sections(reply: str, sections: Sequence[tuple[str, str]]) -> dict[str, str]:
    """Split a reply on its numbered headings (``N. Title:``), matched exactly.

    Markdown emphasis and ``#`` prefixes around a heading are tolerated;
    each section's text runs to the next recognised heading.
    """
    found: dict[str, tuple[int, int]] = {}
    for i, (key, title) in enumerate(sections, 1):
        pat = re.compile(rf"^[ \t#*]*{i}\.[ \t]*\**{re.escape(title)}\**[ \t]*:?\**[ \t]*", re.MULTILINE)
        m = pat.search(reply)
        if m is None:
            raise StructuredParseError(f"missing section '{i}. {title}'", title, reply)
        found[key] = (m.start(), m.end())
    order = sorted(found.items(), key=lambda kv: kv[1][0])
    out = {}
    for n, (key, (_, body_start)) in enumerate(order):
        end = order[n + 1][1][0] if n + 1 < len(order) else len(reply)
        out[key] = reply[body_start:end].strip()
    return out


def parse_event_info(reply: str) -> BasicEventInfo:
    return BasicEventInfo(**parse_sections(reply, EVENT_INFO_SECTIONS))


def parse_social(reply: str) -> SocialAnalysis:
    return SocialAnalysis(**parse_sections(reply, SOCIAL_SECTIONS))


def parse_mobility(reply: str) -> MobilityContext:
    """The first JSON object in the reply, with exactly the three contract keys."""
    start = reply.find("{")
    if start < 0:
        raise StructuredParseError("reply contains no JSON object", None, reply)
    try:
        obj, _ = json.JSONDecoder().raw_decode(reply[start:])
    except json.JSONDecodeError as exc:
        raise StructuredParseError(f"malformed JSON ({exc.msg})", None, reply) from None
    if not isinstance(obj, dict):
        raise StructuredParseError("JSON reply is not an object", None, reply)
    want = {label for _, label in MOBILITY_KEYS}
    if set(obj) != want:
        raise StructuredParseError(
            f"JSON keys {sorted(obj)} differ from {sorted(want)}", ", ".join(sorted(want ^ set(obj))), reply
        )
    return MobilityContext(**{key: str(obj[label]) for key, label in MOBILITY_KEYS})


def parse_query_lines(reply: str, n: int = N_QUERIES) -> list[QueryAst]:
    """Parse every nonblank line; the first ``n`` are returned.

    Lines may carry list markers (``1.``, ``-``).  Any malformed line is an
    error with its position.
    """
    out = []
    for lineno, line in enumerate(reply.splitlines(), 1):
        text = re.sub(r"^\s*(?:\d+[.)]|[-*])\s*", "", line).strip().strip("`")
        if not text:
            continue
        try:
            out.append(parse_query(text))
        except QueryParseError as exc:
            raise QueryParseError(f"line {lineno}: {exc.args[0].rsplit(' at byte', 1)[0]}", exc.offset, text) from None
    if len(out) < n:
        raise StructuredParseError(f"expected {n} queries, got {len(out)}", "queries", reply)
    return out[:n]


def ask(
    backend: CompletionBackend,
    agent: str,
    prompt: str,
    parse: Callable[[str], object],
    inputs: Mapping | None = None,
    max_reprompts: int = MAX_REPROMPTS,
):
    """Call the backend and parse the reply, re-prompting with a reflection note on parse failure."""
    reflection = load_template("reflection")
    current = prompt
    reply = None
    for attempt in range(max_reprompts + 1):
        try:
            reply = backend.complete(current, task=agent, inputs=inputs)
        except BackendError as exc:
            raise PipelineError(agent, str(exc), reply) from exc
        try:
            return parse(reply)
        except (StructuredParseError, QueryParseError) as exc:
            if attempt == max_reprompts:
                raise PipelineError(agent, f"unusable reply after {attempt + 1} attempts: {exc}", reply) from exc
            current = prompt + reflection.format(problem=str(exc))
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# agents
# ---------------------------------------------------------------------------


def _event_fields(event: EventRecord, venue_name: str | None = None) -> dict:
    lat, lon = event.venue_coords
    return {
        "event_id": event.event_id,
        "venue_id": event.venue_id,
        "venue_name": venue_name or event.venue_id,
        "venue_coords": f"{lat:.5f}, {lon:.5f}",
        "date": event.date.isoformat(),
        "weekday": event.date.strftime("%A"),
        "start_time": event.start_time.strftime("%H:%M"),
        "end_time": event.end_time.strftime("%H:%M"),
        "categories": list(event.categories),
        "description": " ".join(str(v) for _, v in sorted(event.raw_text.items())),
    }


def _scale_hint(description: str) -> str:
    """Attendance sentence of a calendar description, if it has one."""
    m = re.search(r"[^.]*attendance[^.]*\.(?:[^.]*access[^.]*\.)?", description, re.IGNORECASE)
    return m.group(0).strip() if m else ""


def run_event_info_extractor(event: EventRecord, backend: CompletionBackend, venue_name: str | None = None) -> BasicEventInfo:
    fields = _event_fields(event, venue_name)
    fields["scale"] = _scale_hint(fields["description"])
    block = "\n".join(f"{k}: {v}" for k, v in fields.items() if k != "scale")
    prompt = load_template("event_info").format(event_fields=block)
    return ask(backend, "event_info", prompt, parse_event_info, fields)


def query_terms(info: BasicEventInfo, event: EventRecord | None = None, venue_name: str | None = None) -> tuple[list[str], list[str]]:
    """Candidate event and location terms the mock uses to fill queries."""
    ev_terms = [w for w in re.findall(r"[A-Za-z&]+", info.event_type.split(".")[0]) if len(w) > 2 and w.lower() not in ("event", "with", "elements")]
    loc = venue_name or (event.venue_id if event else "")
    loc_terms = [loc] if loc else []
    if venue_name:
        loc_terms.append("#" + venue_name.replace(" ", ""))
        ev_terms.append("#" + venue_name.replace(" ", ""))
    return list(dict.fromkeys(ev_terms)) or ["event"], loc_terms or ["venue"]


def build_queries(info: BasicEventInfo, backend: CompletionBackend, event: EventRecord | None = None, venue_name: str | None = None) -> list[QueryAst]:
    ev_terms, loc_terms = query_terms(info, event, venue_name)
    prompt = load_template("queries").format(basic_event_information=info.render())
    return ask(backend, "queries", prompt, parse_query_lines, {"event_terms": ev_terms, "location_terms": loc_terms})


def run_tweet_analyzer(
    info: BasicEventInfo,
    tweets: Sequence[dict],
    queries: Sequence[QueryAst],
    backend: CompletionBackend,
    before: dt.datetime | None = None,
    lookback_days: int = 30,
) -> tuple[SocialAnalysis, list[dict]]:
    """Match tweets (optionally only those in the month before ``before``) and summarise them."""
    pool = list(tweets)
    if before is not None:
        lo = before - dt.timedelta(days=lookback_days)
        pool = [t for t in pool if "created_at" not in t or lo <= _ts(t["created_at"]) < before]
    matched = match_tweets(pool, queries)
    texts = [t["text"] for t in matched]
    prompt = load_template("tweets").format(
        basic_event_information=info.render(), tweets="\n".join(f"- {t}" for t in texts) or "(none)"
    )
    return ask(backend, "tweets", prompt, parse_social, {"tweets": texts}), matched


def _ts(text: str) -> dt.datetime:
    t = dt.datetime.fromisoformat(str(text).replace("Z", "+00:00"))
    return t.replace(tzinfo=None) if t.tzinfo else t


def recent_events(event: EventRecord, events: Iterable[EventRecord], days: int = RECENT_DAYS) -> list[EventRecord]:
    """Other events at the same venue on the same day or up to ``days`` days before, oldest first."""
    out = [
        e
        for e in events
        if e.venue_id == event.venue_id
        and e.event_id != event.event_id
        and 0 <= (event.date - e.date).days <= days
        and e.start < event.start
    ]
    return sorted(out, key=lambda e: (e.start, e.event_id))


def mobility_prompt(info: BasicEventInfo, recent: Sequence[EventRecord], social: SocialAnalysis, logic_text: str) -> str:
    block = ""
    if recent:
        lines = "\n".join(
            f"- {e.date.isoformat()} {e.start_time:%H:%M}-{e.end_time:%H:%M}: {', '.join(e.categories)}" for e in recent
        )
        block = load_template("recent_events").format(recent_events=lines)
    return load_template("mobility").format(
        basic_event_information=info.render(),
        recent_events_block=block,
        social_media_analysis=social.render(),
        logic=logic_text,
    )


def run_mobility_analyzer(
    info: BasicEventInfo,
    recent: Sequence[EventRecord],
    social: SocialAnalysis,
    logic: LogicStore,
    backend: CompletionBackend,
    venue_id: str | None = None,
    venue_name: str | None = None,
) -> MobilityContext:
    if not logic.logic_global.strip():
        raise ValueError("the global screening logic is empty")
    logic_text = logic.logic_for(venue_id)
    prompt = mobility_prompt(info, recent, social, logic_text)
    inputs = {
        "event_type": info.event_type,
        "time": info.time,
        "scale": info.scale,
        "attention": social.attention,
        "venue_name": venue_name or venue_id or "",
        "recent_count": len(recent),
        "logic": logic_text,
    }
    return ask(backend, "mobility", prompt, parse_mobility, inputs)


@dataclass
class PipelineResult:
    event_id: str
    info: BasicEventInfo
    queries: list[QueryAst]
    matched_tweets: list[dict]
    social: SocialAnalysis
    mobility: MobilityContext
    logic_revision: int

    def context(self) -> TextContext:
        return self.mobility.to_text_context(self.event_id)

    def to_json(self) -> dict:
        from eventflow.agents.query import render_query

        return {
            "event_id": self.event_id,
            **self.context().to_json(),
            "logic_revision": self.logic_revision,
            "basic_event_information": asdict(self.info),
            "queries": [render_query(q) for q in self.queries],
            "matched_tweets": [t.get("id") for t in self.matched_tweets],
            "social_media_analysis": asdict(self.social),
        }


def run_pipeline(
    event: EventRecord,
    all_events: Sequence[EventRecord],
    tweets: Sequence[dict],
    logic: LogicStore,
    backend: CompletionBackend,
    venue_names: Mapping[str, str] | None = None,
) -> PipelineResult:
    """Extractor, then query building and tweet analysis, then mobility analysis, for one event."""
    name = (venue_names or {}).get(event.venue_id)
    info = run_event_info_extractor(event, backend, name)
    queries = build_queries(info, backend, event, name)
    social, matched = run_tweet_analyzer(info, tweets, queries, backend, before=event.start)
    recent = recent_events(event, all_events)
    mob = run_mobility_analyzer(info, recent, social, logic, backend, event.venue_id, name)
    return PipelineResult(event.event_id, info, queries, matched, social, mob, logic.revision)
