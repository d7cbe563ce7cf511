"""``eventflow`` command line: synth, agents, train, eval, ablate, timing, report.

Every subcommand reads one flat JSON config (``--config``), applies flag
overrides, writes the resolved config to ``<out>/resolved_config.json`` and
then does its work.  Outputs are written with fixed ordering so reruns with
the same inputs overwrite them with identical bytes (timing excepted).

Exit codes: 0 success, 2 config error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence


from eventflow.agents import (
    BackendError,
    ErrorStats,
    LogicStore,
    PipelineError,
    StructuredParseError,
    compute_error_patterns,
    make_backend,
    run_evaluator,
    run_pipeline,
    window_meta,
)
from eventflow.datamodel import (
    CoverageError,
    NoCoveredSensorsError,
    SplitSpec,
    SynthConfig,
    ValidationError,
    partition,
    synth_generate,
    write_splits,
)
from eventflow.datamodel import io as dio
from eventflow.datamodel.synth import VENUE_NAMES
from eventflow.evalharness import (
    EvalReport,
    PaperFixture,
    baseline_predictor,
    prepare_slices,
    run_variants,
    slice_name,
    slice_report,
    timing,
    timing_window,
    write_report,
)
from eventflow.fusion import VARIANTS, TstConfig, TstModel, load_checkpoint, save_checkpoint, train
from eventflow.textctx import EncoderSpec, TextContext

log = logging.getLogger("eventflow")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND = 0, 2, 3, 4
MAX_FAIL_FRACTION = 0.10
COMMANDS = ("synth", "agents", "train", "eval", "ablate", "timing", "report")


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


_TST_FIELDS = {f.name for f in dataclasses.fields(TstConfig)}
_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SynthConfig)}


@dataclasses.dataclass
class RunConfig:
    """Resolved settings for one command.

    Model settings are the ``TstConfig`` field names at the top level; synthetic
    world settings carry a ``synth_`` prefix (``synth_n_sensors``, ``synth_days`` ...).
    """

    out: str = "run"
    data_dir: str | None = None  # defaults to ``out``
    contexts: str = "agents"  # "agents", "reference" or a path to a contexts jsonl
    checkpoint: str | None = None  # defaults to <out>/checkpoint.json
    seed: int = 0
    radius_km: list[float] = dataclasses.field(default_factory=lambda: [3.0])
    window_hours: list[int] = dataclasses.field(default_factory=lambda: [2])
    split: str = "by_time"
    train_ratio: float = 0.8
    variant: str = "full"
    backend: str = "mock"
    backend_url: str | None = None
    backend_model: str | None = None
    jobs: int = 1
    impute: str | None = None
    ablate_seeds: int = 1
    timing_sensors: list[int] = dataclasses.field(default_factory=lambda: [4, 131])
    timing_repeats: int = 10
    error_top_k: int = 3
    venue_flag_ratio: float = 1.5
    tst: dict = dataclasses.field(default_factory=dict)
    synth: dict = dataclasses.field(default_factory=dict)

    # -- construction ------------------------------------------------------
    @classmethod
    def from_flat(cls, doc: dict) -> "RunConfig":
        own = {f.name for f in dataclasses.fields(cls)} - {"tst", "synth"}
        kw, tst, synth, unknown = {}, {}, {}, []
        for key, value in doc.items():
            if key in own:
                kw[key] = value
            elif key in _TST_FIELDS:
                tst[key] = value
            elif key.startswith("synth_") and key[6:] in _SYNTH_FIELDS:
                synth[key[6:]] = value
            else:
                unknown.append(key)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**kw, tst=tst, synth=synth)
        cfg.validate()
        return cfg

    def to_flat(self) -> dict:
        doc = {f.name: getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in ("tst", "synth")}
        doc.update(self.tst_config().to_json())
        doc.update({f"synth_{k}": v for k, v in self.synth_config().to_json().items()})
        return doc

    def validate(self) -> None:
        if self.split not in ("by_time", "by_type"):
            raise ConfigError(f"split must be by_time or by_type, got {self.split!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.backend not in ("mock", "http"):
            raise ConfigError(f"backend must be mock or http, got {self.backend!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")
        if self.impute not in (None, "ffill"):
            raise ConfigError(f"impute must be null or 'ffill', got {self.impute!r}")
        if not self.radius_km or any(r <= 0 for r in self.radius_km):
            raise ConfigError("radius_km must be a nonempty list of positive numbers")
        if not self.window_hours or any(w <= 0 for w in self.window_hours):
            raise ConfigError("window_hours must be a nonempty list of positive integers")
        if not 0 < self.train_ratio < 1:
            raise ConfigError("train_ratio must lie strictly between 0 and 1")
        if self.ablate_seeds < 1:
            raise ConfigError("ablate_seeds must be at least 1")
        self.tst_config()
        self.synth_config()

    def tst_config(self) -> TstConfig:
        try:
            return TstConfig.from_json({"seed": self.seed, **self.tst})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model config: {exc}") from None

    def synth_config(self) -> SynthConfig:
        try:
            cfg = SynthConfig.from_json(self.synth)
            cfg.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"synth config: {exc}") from None
        return cfg

    # -- paths ---------------------------------------------------------------
    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else self.out_dir

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else self.out_dir / "checkpoint.json"

    def contexts_path(self) -> Path:
        if self.contexts == "agents":
            return self.out_dir / "contexts.jsonl"
        if self.contexts == "reference":
            return self.data_path / "reference_contexts.jsonl"
        return Path(self.contexts)


def _list(cast):
    def parse(text: str):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a comma-separated list, got {text!r}") from None

    return parse


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eventflow", description="Event-aware traffic forecasting runs.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="flat JSON config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--radius-km", type=_list(float), help="comma-separated radii, e.g. 2,3")
    p.add_argument("--window-hours", type=_list(int), help="comma-separated impact windows, e.g. 2,4")
    p.add_argument("--split", choices=("by_time", "by_type"))
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--backend", choices=("mock", "http"))
    p.add_argument("--jobs", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--data-dir", help="dataset directory (defaults to --out)")
    p.add_argument("--contexts", help="agents, reference, or a contexts jsonl path")
    p.add_argument("--impute", choices=("ffill",), help="fill gaps in flows.csv instead of failing")
    p.add_argument("--evaluate", type=Path, metavar="STATS", help="agents: revise the logic from an error-stats file first")
    p.add_argument("--paper-fixture", action="store_true", help="eval: score the shipped published figures")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if args.config is not None:
        try:
            doc = json.loads(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{args.config}: expected a JSON object")
    overrides = {
        "seed": args.seed,
        "radius_km": args.radius_km,
        "window_hours": args.window_hours,
        "split": args.split,
        "variant": args.variant,
        "backend": args.backend,
        "jobs": args.jobs,
        "out": args.out,
        "data_dir": args.data_dir,
        "contexts": args.contexts,
        "impute": args.impute,
    }
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_flat(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# data loading
# ---------------------------------------------------------------------------


def _need(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {path} ({hint})")
    return path


def load_dataset(cfg: RunConfig):
    d = cfg.data_path
    hint = "run `eventflow synth` or point --data-dir at a dataset"
    graph = dio.read_sensors(_need(d / "sensors.csv", hint))
    flows = dio.read_flows(_need(d / "flows.csv", hint), graph.sensor_ids, impute=cfg.impute)
    events = dio.read_events(_need(d / "events.jsonl", hint))
    return graph, flows, events


def load_venue_names(cfg: RunConfig) -> dict[str, str]:
    path = cfg.data_path / "venues.json"
    return json.loads(path.read_text()) if path.exists() else {}


def load_contexts(cfg: RunConfig) -> dict[str, TextContext]:
    path = _need(cfg.contexts_path(), "run `eventflow agents` first, or use --contexts reference")
    out = {}
    for row in dio.read_jsonl(path):
        ctx = TextContext.from_json(row)
        out[ctx.event_id] = ctx
    return out


def load_slices(cfg: RunConfig, splits: Sequence[str] | None = None):
    graph, flows, events = load_dataset(cfg)
    contexts = load_contexts(cfg)
    tcfg = cfg.tst_config()
    slices = prepare_slices(
        graph,
        flows,
        events,
        contexts,
        cfg.radius_km,
        cfg.window_hours,
        splits or [cfg.split],
        seed=cfg.seed,
        train_ratio=cfg.train_ratio,
        history_steps=tcfg.history_steps,
        horizon=tcfg.horizon,
    )
    return flows, events, contexts, slices


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    scfg = cfg.synth_config()
    world = synth_generate(scfg, cfg.seed)
    d = cfg.out_dir
    d.mkdir(parents=True, exist_ok=True)
    files = {
        "sensors.csv": lambda p: dio.write_sensors(p, world.graph),
        "flows.csv": lambda p: dio.write_flows(p, world.flows, world.graph.sensor_ids),
        "events.jsonl": lambda p: dio.write_events(p, world.events),
        "tweets.jsonl": lambda p: dio.write_jsonl(p, world.tweets),
        "reference_contexts.jsonl": lambda p: dio.write_jsonl(p, (world.texts[e.event_id].to_json() for e in world.events)),
        "venues.json": lambda p: _dump(p, {f"V{i}": VENUE_NAMES[i] for i in range(scfg.n_venues)}),
    }
    for name, write in files.items():
        write(d / name)
    manifest = {
        "seed": cfg.seed,
        "synth": scfg.to_json(),
        "counts": {"sensors": len(world.graph.sensor_ids), "steps": world.flows.n_steps, "events": len(world.events), "tweets": len(world.tweets)},
        "files": {name: _sha256(d / name) for name in files},
    }
    _dump(d / "manifest.json", manifest)
    print(f"wrote {len(world.events)} events, {len(world.graph.sensor_ids)} sensors to {d}")
    return EXIT_OK


def _backend(cfg: RunConfig):
    kw = {}
    if cfg.backend == "http":
        kw = {"url": cfg.backend_url, "model": cfg.backend_model}
    return make_backend(cfg.backend, **kw)


def cmd_agents(cfg: RunConfig, args) -> int:
    graph_events = dio.read_events(_need(cfg.data_path / "events.jsonl", "run `eventflow synth` first"))
    tweets = dio.read_tweets(_need(cfg.data_path / "tweets.jsonl", "run `eventflow synth` first"))
    venues = load_venue_names(cfg)
    store_path = cfg.out_dir / "logic_store.json"
    backend = _backend(cfg)

    if args.evaluate is not None:
        try:
            stats = ErrorStats.from_json(json.loads(_need(args.evaluate, "pass an error_stats.json from `eventflow eval`").read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"{args.evaluate}: invalid JSON ({exc.msg})") from None
        if stats.empty:
            raise DataError(f"{args.evaluate}: error statistics are empty; run `eventflow eval` on a trained model first (logic store left untouched)")
        store = LogicStore.open(store_path)
        run_evaluator(stats, store, backend, venues)
        print(f"logic store revised to revision {store.revision}")
    else:
        store = LogicStore.open(store_path)

    def one(ev):
        try:
            return ev.event_id, run_pipeline(ev, graph_events, tweets, store, backend, venues), None
        except (PipelineError, StructuredParseError, BackendError) as exc:
            return ev.event_id, None, exc

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        results = list(pool.map(one, graph_events))
    rows, failed = [], []
    for eid, res, exc in results:
        if res is None:
            log.warning("event %s failed: %s", eid, exc)
            failed.append(eid)
        else:
            rows.append(res.to_json())
    dio.write_jsonl(cfg.out_dir / "contexts.jsonl", rows)
    print(f"contexts for {len(rows)}/{len(results)} events (logic revision {store.revision})")
    if results and len(failed) > MAX_FAIL_FRACTION * len(results):
        print(f"error: {len(failed)} of {len(results)} events failed", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _encoder(tcfg: TstConfig) -> EncoderSpec:
    return EncoderSpec(d_h=tcfg.d_h)


def cmd_train(cfg: RunConfig, args) -> int:
    _, events, contexts, slices = load_slices(cfg)
    key = (cfg.radius_km[0], cfg.window_hours[0], cfg.split)
    tr, te = slices[key]
    if not tr:
        raise DataError(f"no training windows for slice {slice_name(*key)}")
    tcfg = cfg.tst_config()
    model = TstModel(cfg.variant, tcfg, _encoder(tcfg))
    result = train(tr, model=model)
    save_checkpoint(model, cfg.checkpoint_path)
    _dump(cfg.out_dir / "loss_trace.json", {"epoch_loss": result.loss_trace, "batch_loss": result.batch_losses, "slice": slice_name(*key)})
    with_text = [e for e in events if e.event_id in contexts]
    tr_ids, te_ids = partition(with_text, SplitSpec(cfg.split, cfg.train_ratio, cfg.seed))
    write_splits(cfg.out_dir / "splits.json", tr_ids, te_ids, SplitSpec(cfg.split, cfg.train_ratio, cfg.seed))
    print(f"trained {cfg.variant} on {len(tr)} windows; final loss {result.loss_trace[-1]:.4f}; checkpoint {cfg.checkpoint_path}")
    return EXIT_OK


def _fixture_report() -> EvalReport:
    fx = PaperFixture.load()
    report = EvalReport()
    for r in fx.records:
        if r.group != "baselines":
            continue
        name = slice_name(r.radius_km, r.window_hours, r.split)
        entry = report.slices.setdefault(name, {}).setdefault(r.method, {"MAE": None, "RMSE": None, "n": 0})
        entry[r.metric] = r.value
    report.notes["reductions"] = fixture_reductions(fx)
    return report


def fixture_reductions(fx: PaperFixture | None = None) -> dict:
    fx = fx or PaperFixture.load()
    out = {}
    for metric in ("MAE", "RMSE"):
        base, value = fx.best_baseline(metric, 3, 2, "by_type")
        out[metric] = {"best_baseline": base, "baseline": value, "TST": fx.value("TST", metric), "reduction_pct": fx.reduction(metric)}
    return out


def cmd_eval(cfg: RunConfig, args) -> int:
    if args.paper_fixture:
        report = _fixture_report()
        write_report(report, cfg.out_dir)
        for metric, r in report.notes["reductions"].items():
            print(f"{metric} reduction vs best baseline ({r['best_baseline']}), 3km 2h by_type: {r['reduction_pct']:.2f}%")
        return EXIT_OK
    model = load_checkpoint(_need(cfg.checkpoint_path, "run `eventflow train` first"), cfg.tst_config())
    flows, _, _, slices = load_slices(cfg)
    tests = {k: te for k, (_, te) in slices.items()}
    predictors = {
        model.kind: model,
        "persistence": baseline_predictor("persistence"),
        "seasonal_mean": baseline_predictor("seasonal_mean", flows),
    }
    report = slice_report(predictors, tests)
    write_report(report, cfg.out_dir)
    windows = [w for k in sorted(tests) for w in tests[k]]
    preds = model.predict(windows) if windows else []
    stats = compute_error_patterns(preds, [w.target for w in windows], [window_meta(w) for w in windows], cfg.error_top_k, cfg.venue_flag_ratio)
    _dump(cfg.out_dir / "error_stats.json", stats.to_json())
    for row in report.rows():
        print(f"{row['slice']:<18} {row['method']:<14} MAE {row['MAE']:8.3f}  RMSE {row['RMSE']:8.3f}  n={row['n']}")
    for name in report.absent:
        print(f"{name:<18} (no test windows)")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    _, _, _, slices = load_slices(cfg)
    tcfg = cfg.tst_config()
    seeds = [cfg.seed + k for k in range(cfg.ablate_seeds)]
    report = run_variants(slices, tcfg, VARIANTS, lambda: _encoder(tcfg), seeds)
    write_report(report, cfg.out_dir / "ablation")
    for row in report.rows():
        print(f"{row['slice']:<18} {row['method']:<12} MAE {row['MAE']:8.3f}  RMSE {row['RMSE']:8.3f}")
    return EXIT_OK


def cmd_timing(cfg: RunConfig, args) -> int:
    tcfg = cfg.tst_config()
    if cfg.checkpoint_path.exists():
        model = load_checkpoint(cfg.checkpoint_path, tcfg)
    else:
        log.info("no checkpoint at %s; timing an untrained %s model", cfg.checkpoint_path, cfg.variant)
        model = TstModel(cfg.variant, tcfg, _encoder(tcfg))
    stats = {}
    for m in cfg.timing_sensors:
        s = timing(model, timing_window(m, tcfg, cfg.seed), cfg.timing_repeats)
        stats[f"M{m}"] = s.to_json()
        print(f"M={m:<4} T'={s.horizon}  median {s.median_s * 1e3:8.3f} ms  (min {s.min_s * 1e3:.3f}, max {s.max_s * 1e3:.3f})")
    _dump(cfg.out_dir / "runtime.json", {"variant": model.kind, "stats": stats})
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    d = cfg.out_dir
    report = EvalReport()
    found = []
    for sub in ("report.json", "ablation/report.json"):
        path = d / sub
        if path.exists():
            part = EvalReport.from_json(json.loads(path.read_text()))
            if sub.startswith("ablation"):
                part = EvalReport({n: {f"ablation:{m}": v for m, v in per.items()} for n, per in part.slices.items()}, part.absent)
            report = report.merge(part)
            found.append(sub)
    if (d / "runtime.json").exists():
        report.runtime = json.loads((d / "runtime.json").read_text())["stats"]
        found.append("runtime.json")
    report.notes["published_reductions"] = fixture_reductions()
    report.notes["sources"] = found
    write_report(report, d / "summary")
    for metric, r in report.notes["published_reductions"].items():
        print(f"published {metric} reduction (3km 2h by_type): {r['reduction_pct']:.2f}%")
    for row in report.rows():
        print(f"{row['slice']:<18} {row['method']:<22} MAE {row['MAE']:8.3f}  RMSE {row['RMSE']:8.3f}")
    for key, s in sorted(report.runtime.items()):
        print(f"forward {key}: median {s['median_s'] * 1e3:.3f} ms")
    if not found:
        print(f"no run outputs under {d}; only published figures summarised")
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "agents": cmd_agents,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "timing": cmd_timing,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        _dump(cfg.out_dir / "resolved_config.json", cfg.to_flat())
        return HANDLERS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (DataError, ValidationError, CoverageError, NoCoveredSensorsError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
