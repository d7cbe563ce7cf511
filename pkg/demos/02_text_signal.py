"""How much the model reads from text: real contexts against seed-matched noise, and the variant ordering.

    python demos/02_text_signal.py            # 3 seeds, all kinds (about 10 minutes on one core)
    python demos/02_text_signal.py --quick    # 1 seed, 15 epochs
"""

import argparse
import dataclasses

from eventflow.evalharness import percent_reduction
from eventflow.evalharness.desk import DESK_KINDS, DESK_TST, desk_study

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
ap.add_argument("--seeds", type=int, default=3)
args = ap.parse_args()

seeds = range(1 if args.quick else args.seeds)
config = dataclasses.replace(DESK_TST, epochs=15) if args.quick else DESK_TST
runs, means = desk_study(seeds, DESK_KINDS, config=config)

print(f"{'kind':<8}" + "".join(f"  seed {r.seed:<4}" for r in runs) + "   mean")
for kind in DESK_KINDS:
    print(f"{kind:<8}" + "".join(f"  {r.mae[kind]:9.3f}" for r in runs) + f"  {means[kind]:7.3f}")
print(f"\ntext vs noise: {percent_reduction(means['noise'], means['full']):.1f}% lower MAE")
