"""Published accuracy figures shipped as read-only data."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from types import MappingProxyType

from eventflow.evalharness.metrics import percent_reduction

GROUPS = ("baselines", "ablation", "text_category")


@dataclass(frozen=True)
class FixtureRecord:
    group: str
    radius_km: int
    window_hours: int
    split: str
    method: str
    metric: str
    value: float


class PaperFixture:
    """Lookup over the shipped records, keyed by (group, radius, window, split, method, metric)."""

    def __init__(self, records):
        self.records = tuple(records)
        index = {}
        for r in self.records:
            key = (r.group, r.radius_km, r.window_hours, r.split, r.method, r.metric)
            if key in index:
                raise ValueError(f"duplicate fixture record {key}")
            index[key] = r.value
        self._index = MappingProxyType(index)

    @classmethod
    def load(cls) -> "PaperFixture":
        text = resources.files("eventflow.data").joinpath("paper_fixture.json").read_text()
        return cls(FixtureRecord(**r) for r in json.loads(text)["records"])

    def value(self, method: str, metric: str, radius_km: int = 3, window_hours: int = 2, split: str = "by_type", group: str = "baselines") -> float:
        try:
            return self._index[(group, radius_km, window_hours, split, method, metric)]
        except KeyError:
            raise KeyError(f"no fixture value for {group}/{radius_km}km/{window_hours}h/{split}/{method}/{metric}") from None

    def methods(self, group: str = "baselines") -> list[str]:
        return sorted({r.method for r in self.records if r.group == group})

    def best_baseline(self, metric: str, radius_km: int = 3, window_hours: int = 2, split: str = "by_type", exclude=("TST",)) -> tuple[str, float]:
        """Lowest-error baseline method for one column."""
        cands = [
            (r.value, r.method)
            for r in self.records
            if r.group == "baselines"
            and (r.radius_km, r.window_hours, r.split, r.metric) == (radius_km, window_hours, split, metric)
            and r.method not in exclude
        ]
        value, method = min(cands)
        return method, value

    def reduction(self, metric: str, radius_km: int = 3, window_hours: int = 2, split: str = "by_type", method: str = "TST") -> float:
        """Percent reduction of ``method`` against the best other baseline in the same column."""
        _, base = self.best_baseline(metric, radius_km, window_hours, split, exclude=(method,))
        return percent_reduction(base, self.value(method, metric, radius_km, window_hours, split))

    def max_reductions(self, radius_km: int = 3) -> dict[str, tuple[float, str, int]]:
        """Largest reduction per metric over all (split, window) columns at ``radius_km``."""
        out = {}
        for metric in ("MAE", "RMSE"):
            best = max(
                (self.reduction(metric, radius_km, wh, split), split, wh)
                for split in ("by_time", "by_type")
                for wh in (2, 3, 4)
            )
            out[metric] = best
        return out
