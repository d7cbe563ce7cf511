"""Experiment drivers: slice preparation, variant sweeps, text-category runs and timing."""

from __future__ import annotations

import dataclasses
import statistics
import time
from typing import Iterable, Mapping, Sequence

import numpy as np

from eventflow.datamodel import build_windows, partition
from eventflow.datamodel.records import EventRecord, EventWindow, FlowSeries, SensorGraph, SplitSpec
from eventflow.evalharness.report import EvalReport, slice_name, slice_report
from eventflow.fusion import VARIANTS, TstConfig, TstModel, collate, train
from eventflow.textctx import CATEGORY_KEYS, EncoderSpec, TextContext

CONTRIBUTION_ROWS = ("no_text",) + CATEGORY_KEYS

SliceData = Mapping[tuple, tuple[list[EventWindow], list[EventWindow]]]


def prepare_slices(
    graph: SensorGraph,
    flows: FlowSeries,
    events: Sequence[EventRecord],
    contexts: Mapping[str, TextContext],
    radii: Iterable[float] = (3,),
    window_hours: Iterable[int] = (2,),
    splits: Iterable[str] = ("by_time",),
    seed: int = 0,
    train_ratio: float = 0.8,
    history_steps: int = 12,
    horizon: int = 12,
) -> dict[tuple, tuple[list[EventWindow], list[EventWindow]]]:
    """Train/test windows for every (radius, window, split) combination.

    Events without covered sensors or flow coverage at a radius simply
    contribute no windows there.
    """
    contexts = dict(contexts)
    with_text = [e for e in events if e.event_id in contexts]
    out = {}
    parts = {s: partition(with_text, SplitSpec(s, train_ratio, seed)) for s in splits}
    for r in radii:
        for wh in window_hours:
            ws = build_windows(graph, flows, with_text, r, wh, contexts=contexts, history_steps=history_steps, horizon=horizon)
            for s, (tr_ids, te_ids) in parts.items():
                tr, te = set(tr_ids), set(te_ids)
                out[(r, wh, s)] = ([w for w in ws if w.event_id in tr], [w for w in ws if w.event_id in te])
    return out


def with_contexts(windows: Sequence[EventWindow], contexts: Mapping[str, TextContext]) -> list[EventWindow]:
    return [dataclasses.replace(w, context=contexts[w.event_id]) for w in windows]


def keep_categories(ctx: TextContext, keep: Iterable[str]) -> TextContext:
    """Copy of ``ctx`` with every category outside ``keep`` blanked."""
    keep = set(keep)
    return TextContext(ctx.event_id, {k: (v if k in keep else "") for k, v in ctx.category_texts.items()})


def run_variants(
    slices: SliceData,
    config: TstConfig,
    kinds: Sequence[str] = VARIANTS,
    encoder_factory=None,
    seeds: Sequence[int] | None = None,
) -> EvalReport:
    """Train and evaluate every variant on every slice; one report row per (slice, variant).

    With several seeds the row holds the mean and ``notes["per_seed"]`` the
    individual values.
    """
    seeds = list(seeds) if seeds else [config.seed]
    reports = []
    for seed in seeds:
        models = {}
        rep = EvalReport()
        for key, (tr, te) in slices.items():
            if not tr or not te:
                continue
            for kind in kinds:
                cfg = dataclasses.replace(config, seed=seed)
                enc = encoder_factory() if encoder_factory else EncoderSpec(d_h=cfg.d_h)
                model = TstModel(kind, cfg, enc)
                train(tr, model=model)
                models[kind] = model
            rep = rep.merge(slice_report({k: models[k] for k in kinds}, {key: te}, [key]))
        reports.append(rep)
    return _average(reports, seeds, slices)


def _average(reports: Sequence[EvalReport], seeds, slices) -> EvalReport:
    out = EvalReport()
    per_seed = {}
    for name in reports[0].slices:
        for method in reports[0].slices[name]:
            vals = [r.slices[name][method] for r in reports]
            out.add(
                name,
                method,
                float(np.mean([v["MAE"] for v in vals])),
                float(np.mean([v["RMSE"] for v in vals])),
                vals[0]["n"],
            )
            per_seed.setdefault(name, {})[method] = [{"seed": s, "MAE": v["MAE"], "RMSE": v["RMSE"]} for s, v in zip(seeds, vals)]
    out.absent = sorted(slice_name(*k) for k, (tr, te) in slices.items() if not tr or not te)
    out.notes["seeds"] = list(seeds)
    out.notes["per_seed"] = per_seed
    return out


def category_contribution(slices: SliceData, config: TstConfig, encoder_factory=None) -> EvalReport:
    """Four models per slice: text removed entirely, and each single category on its own.

    ``notes["mae_delta"]`` holds each row's MAE minus the no-text MAE
    (negative means the category helps).
    """
    report = EvalReport()
    deltas: dict[str, dict[str, float]] = {}
    for key, (tr, te) in slices.items():
        name = slice_name(*key)
        if not tr or not te:
            report.absent.append(name)
            continue
        for row in CONTRIBUTION_ROWS:
            keep = () if row == "no_text" else (row,)
            tr_r = [dataclasses.replace(w, context=keep_categories(w.context, keep)) for w in tr]
            te_r = [dataclasses.replace(w, context=keep_categories(w.context, keep)) for w in te]
            enc = encoder_factory() if encoder_factory else EncoderSpec(d_h=config.d_h)
            model = TstModel("full", config, enc)
            train(tr_r, model=model)
            report = report.merge(slice_report({row: model}, {key: te_r}, [key]))
        base = report.slices[name]["no_text"]["MAE"]
        deltas[name] = {row: report.slices[name][row]["MAE"] - base for row in CONTRIBUTION_ROWS}
    report.notes["mae_delta"] = deltas
    return report


@dataclasses.dataclass
class TimingStats:
    median_s: float
    min_s: float
    max_s: float
    repeats: int
    sensors: int
    horizon: int

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def timing(model: TstModel, window: EventWindow, repeats: int = 10) -> TimingStats:
    """Wall-clock seconds of one forward pass over ``window`` (median of ``repeats``)."""
    if repeats < 10:
        raise ValueError("repeats must be at least 10")
    batch = collate([model.sample(window)])
    model.forward(batch)  # warm caches
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.forward(batch)
        times.append(time.perf_counter() - t0)
    return TimingStats(statistics.median(times), min(times), max(times), repeats, window.affected.m, window.target.shape[1])


def timing_window(m: int, config: TstConfig, seed: int = 0) -> EventWindow:
    """A random window over ``m`` sensors with a three-category context, for timing and smoke tests."""
    import datetime as dt

    from eventflow.datamodel.geo import row_normalize
    from eventflow.datamodel.records import AffectedSet
    from eventflow.numerics import make_rng

    rng = make_rng(seed, "timing-window", m)
    dist = np.sort(rng.uniform(0.0, 5.0, m))
    ang = rng.uniform(-np.pi, np.pi, m)
    D = np.column_stack([dist, np.sin(ang), np.cos(ang)])
    adj = np.exp(-((dist[:, None] - dist[None, :]) ** 2) / 4.0)
    aff = AffectedSet("V", 5.0, np.arange(m), D, row_normalize(adj), [f"S{i}" for i in range(m)])
    t0 = dt.datetime(2019, 6, 3, 17, 0)
    ctx = TextContext("timing", {k: f"{k} sample text {seed}" for k in CATEGORY_KEYS})
    return EventWindow(
        history=rng.uniform(50, 200, (m, config.history_steps)),
        target=rng.uniform(50, 200, (m, config.horizon)),
        future_timestamps=[t0 + dt.timedelta(minutes=5 * k) for k in range(config.horizon)],
        affected=aff,
        window_hours=2,
        context=ctx,
    )

