"""Headline reductions recomputed from the shipped table of published figures."""

from eventflow.evalharness import PaperFixture

fx = PaperFixture.load()
for metric in ("MAE", "RMSE"):
    base, value = fx.best_baseline(metric)
    print(f"{metric}: best baseline {base} {value:.2f}, TST {fx.value('TST', metric):.2f}, reduction {fx.reduction(metric):.2f}%")
for metric, (pct, split, wh) in fx.max_reductions().items():
    print(f"largest {metric} reduction at 3 km: {pct:.2f}% ({split}, {wh} h)")
