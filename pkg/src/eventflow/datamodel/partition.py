"""Train/test partitioning that keeps same-venue same-day events together."""

from __future__ import annotations

import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from eventflow.datamodel.records import EventRecord, SplitSpec, ValidationError
from eventflow.numerics import make_rng


def stratum(event: EventRecord) -> tuple[str, ...]:
    return tuple(sorted(event.categories))


def _groups(events: list[EventRecord]) -> dict[tuple[str, object], list[EventRecord]]:
    groups: dict[tuple[str, object], list[EventRecord]] = defaultdict(list)
    for ev in events:
        groups[(ev.venue_id, ev.date)].append(ev)
    return groups


def _split_by_time(groups, ratio: float) -> set:
    keys = sorted(groups, key=lambda k: (k[1], k[0]))
    n = sum(len(v) for v in groups.values())
    target = ratio * n
    best_cut, best_dev, running = 0, abs(target), 0
    for i, k in enumerate(keys):
        running += len(groups[k])
        dev = abs(running - target)
        if dev < best_dev - 1e-12:
            best_cut, best_dev = i + 1, dev
    return set(keys[:best_cut])


def _split_by_type(groups, ratio: float, seed: int) -> set:
    """Choose training groups so each stratum's train share is as close to ``ratio`` as possible.

    Groups may mix strata, so this is a small integer assignment problem.  A
    greedy pass over seeded-shuffled groups is followed by single-flip and
    pairwise-swap local search on (worst deviation, squared deviation).
    """
    keys = sorted(groups, key=lambda k: (str(k[1]), k[0]))
    rng = make_rng(seed, "partition")
    order = list(rng.permutation(len(keys)))
    strata = sorted({stratum(ev) for g in groups.values() for ev in g})
    sidx = {s: i for i, s in enumerate(strata)}
    counts = np.zeros((len(keys), len(strata)))
    for gi, k in enumerate(keys):
        for ev in groups[k]:
            counts[gi, sidx[stratum(ev)]] += 1
    target = ratio * counts.sum(axis=0)

    def score(train_tot):
        dev = np.abs(train_tot - target)
        return (round(float(dev.max()), 9), round(float((dev**2).sum()), 9))

    in_train = np.zeros(len(keys), dtype=bool)
    tot = np.zeros(len(strata))
    # larger groups first so small ones can fill the remainder
    for gi in sorted(order, key=lambda g: -counts[g].sum()):
        with_g = tot + counts[gi]
        if score(with_g) <= score(tot):
            in_train[gi] = True
            tot = with_g

    improved = True
    while improved:
        improved = False
        current = score(tot)
        for gi in order:
            cand = tot - counts[gi] if in_train[gi] else tot + counts[gi]
            if score(cand) < current:
                in_train[gi] = not in_train[gi]
                tot, current, improved = cand, score(cand), True
        if improved:
            continue
        tr = [g for g in order if in_train[g]]
        te = [g for g in order if not in_train[g]]
        for gi in tr:
            for gj in te:
                cand = tot - counts[gi] + counts[gj]
                if score(cand) < current:
                    in_train[gi], in_train[gj] = False, True
                    tot, current, improved = cand, score(cand), True
                    break
            if improved:
                break
    return {keys[g] for g in range(len(keys)) if in_train[g]}


def partition(events: list[EventRecord], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Split events into (train ids, test ids)."""
    if not events:
        raise ValidationError("partition needs at least one event")
    groups = _groups(events)
    if spec.mode == "by_time":
        train_keys = _split_by_time(groups, spec.train_ratio)
    else:
        train_keys = _split_by_type(groups, spec.train_ratio, spec.seed)
    train, test = [], []
    for ev in events:
        (train if (ev.venue_id, ev.date) in train_keys else test).append(ev.event_id)
    return train, test


def write_splits(path: str | Path, train: list[str], test: list[str], spec: SplitSpec) -> None:
    payload = {
        "mode": spec.mode,
        "train_ratio": spec.train_ratio,
        "seed": spec.seed,
        "train": list(train),
        "test": list(test),
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_splits(path: str | Path) -> tuple[list[str], list[str]]:
    obj = json.loads(Path(path).read_text())
    return list(obj["train"]), list(obj["test"])
