"""Agent pipeline that turns calendar entries and posts into three category texts per event."""

from eventflow.agents.backend import API_KEY_ENV, BackendError, CompletionBackend, HttpBackend, MockBackend, make_backend
from eventflow.agents.evaluator import ErrorStats, compute_error_patterns, run_evaluator, window_meta
from eventflow.agents.logic import LogicStore
from eventflow.agents.pipeline import (
    BasicEventInfo,
    MobilityContext,
    PipelineError,
    PipelineResult,
    SocialAnalysis,
    StructuredParseError,
    build_queries,
    parse_event_info,
    parse_mobility,
    parse_social,
    recent_events,
    run_event_info_extractor,
    run_mobility_analyzer,
    run_pipeline,
    run_tweet_analyzer,
)
from eventflow.agents.query import QueryAst, QueryParseError, match_tweets, parse_query, render_query

__all__ = [
    "API_KEY_ENV",
    "BackendError",
    "BasicEventInfo",
    "CompletionBackend",
    "ErrorStats",
    "HttpBackend",
    "LogicStore",
    "MobilityContext",
    "MockBackend",
    "PipelineError",
    "PipelineResult",
    "QueryAst",
    "QueryParseError",
    "SocialAnalysis",
    "StructuredParseError",
    "build_queries",
    "compute_error_patterns",
    "make_backend",
    "match_tweets",
    "parse_event_info",
    "parse_mobility",
    "parse_query",
    "parse_social",
    "recent_events",
    "render_query",
    "run_evaluator",
    "run_event_info_extractor",
    "run_mobility_analyzer",
    "run_pipeline",
    "run_tweet_analyzer",
    "window_meta",
]
