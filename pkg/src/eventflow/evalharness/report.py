"""Per-slice evaluation reports and their on-disk forms."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from eventflow.datamodel.records import EventWindow
from eventflow.evalharness.metrics import pooled

RADII = (2, 3, 4, 5)
WINDOW_HOURS = (2, 3, 4)
SPLITS = ("by_time", "by_type")
FULL_GRID = tuple((r, w, s) for r in RADII for w in WINDOW_HOURS for s in SPLITS)

Predictor = Callable[[Sequence[EventWindow]], Sequence[np.ndarray]]


def slice_name(radius_km, window_hours, split) -> str:
    return f"{radius_km:g}km_{window_hours:g}h_{split}"


def parse_slice(name: str) -> tuple[float, int, str]:
    r, w, split = name.split("_", 2)
    return float(r.removesuffix("km")), int(w.removesuffix("h")), split


@dataclass
class EvalReport:
    """MAE/RMSE per slice and method, plus absent slices and runtime statistics."""

    slices: dict[str, dict[str, dict[str, float]]] = field(default_factory=dict)
    absent: list[str] = field(default_factory=list)
    runtime: dict[str, dict] = field(default_factory=dict)
    notes: dict[str, object] = field(default_factory=dict)

    def add(self, name: str, method: str, mae_v: float, rmse_v: float, n: int) -> None:
        self.slices.setdefault(name, {})[method] = {"MAE": mae_v, "RMSE": rmse_v, "n": n}

    def methods(self) -> list[str]:
        seen = []
        for per in self.slices.values():
            for m in per:
                if m not in seen:
                    seen.append(m)
        return seen

    def rows(self) -> list[dict]:
        out = []
        for name in sorted(self.slices):
            r, w, split = parse_slice(name)
            for method, vals in self.slices[name].items():
                out.append(
                    {"slice": name, "radius_km": r, "window_hours": w, "split": split, "method": method, **vals}
                )
        return out

    def figdata(self) -> dict[str, list[dict]]:
        """Plot-ready ``(x, series, value)`` series.

        ``mae_by_radius``/``mae_by_window`` trace error against radius and
        window length (averaged over the other axes); ``mae_by_method`` is one
        bar per method and slice.
        """
        by_radius: dict[tuple[float, str], list[float]] = {}
        by_window: dict[tuple[int, str], list[float]] = {}
        bars = []
        for row in self.rows():
            by_radius.setdefault((row["radius_km"], row["method"]), []).append(row["MAE"])
            by_window.setdefault((row["window_hours"], row["method"]), []).append(row["MAE"])
            bars.append({"x": row["slice"], "series": row["method"], "value": row["MAE"]})
        return {
            "mae_by_radius": [{"x": x, "series": s, "value": float(np.mean(v))} for (x, s), v in sorted(by_radius.items())],
            "mae_by_window": [{"x": x, "series": s, "value": float(np.mean(v))} for (x, s), v in sorted(by_window.items())],
            "mae_by_method": bars,
        }

    def to_json(self) -> dict:
        return {"slices": self.slices, "absent": self.absent, "runtime": self.runtime, "notes": self.notes}

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(obj.get("slices", {}), obj.get("absent", []), obj.get("runtime", {}), obj.get("notes", {}))

    def merge(self, other: "EvalReport") -> "EvalReport":
        out = EvalReport.from_json(json.loads(json.dumps(self.to_json())))
        for name, per in other.slices.items():
            out.slices.setdefault(name, {}).update(per)
        out.absent = sorted(set(out.absent) - set(out.slices) | (set(other.absent) - set(out.slices)))
        out.runtime.update(other.runtime)
        out.notes.update(other.notes)
        return out


def _as_predictors(model) -> dict[str, Predictor]:
    if isinstance(model, Mapping):
        return {str(k): _as_predictors(v)["model"] for k, v in model.items()}
    if hasattr(model, "predict"):
        return {"model": model.predict}
    if callable(model):
        return {"model": model}
    raise TypeError(f"cannot evaluate {type(model).__name__}")


def slice_report(model, datasets: Mapping, grid: Sequence[tuple] | None = None) -> EvalReport:
    """Evaluate one or more predictors on every requested slice.

    ``model`` is a model with ``predict``, a callable mapping windows to
    predictions, or a dict of either keyed by method name.  ``datasets``
    maps ``(radius_km, window_hours, split)`` to test windows.  Requested
    slices without data are reported in ``absent``.
    """
    preds = _as_predictors(model)
    grid = list(grid) if grid is not None else sorted(datasets, key=lambda k: (k[0], k[1], k[2]))
    report = EvalReport()
    for key in grid:
        name = slice_name(*key)
        windows = datasets.get(tuple(key))
        if not windows:
            report.absent.append(name)
            continue
        truths = [w.target for w in windows]
        for method, fn in preds.items():
            m, r, n = pooled(list(fn(windows)), truths)
            report.add(name, method, m, r, n)
    return report


def write_report(report: EvalReport, out_dir) -> dict[str, Path]:
    """report.json, report.csv and figdata/*.csv under ``out_dir``."""
    out = Path(out_dir)
    (out / "figdata").mkdir(parents=True, exist_ok=True)
    paths = {"json": out / "report.json", "csv": out / "report.csv"}
    paths["json"].write_text(json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    with open(paths["csv"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["slice", "radius_km", "window_hours", "split", "method", "MAE", "RMSE", "n"])
        w.writeheader()
        w.writerows(report.rows())
    for name, rows in report.figdata().items():
        p = out / "figdata" / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=["x", "series", "value"])
            w.writeheader()
            w.writerows(rows)
        paths[name] = p
    return paths
