"""Minibatch training, checkpoints and introspection dumps."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from eventflow.datamodel.records import EventWindow
from eventflow.fusion.model import Scaler, TstConfig, TstModel, collate
from eventflow.fusion import layers as L
from eventflow.numerics import AdamState, DimensionError, NumericalError, Tensor, adam_step, make_rng, smooth_l1, tensor
from eventflow.textctx import EncoderSpec, TextContext


class TrainingAborted(NumericalError):
    """Loss became non-finite; carries the epoch and batch that caused it."""

    def __init__(self, epoch: int, batch: int, detail: str = ""):
        self.epoch = epoch
        self.batch = batch
        super().__init__("train", f"epoch {epoch} batch {batch}{': ' + detail if detail else ''}")


@dataclass
class TrainResult:
    model: TstModel
    loss_trace: list[float] = field(default_factory=list)  # mean train loss per epoch
    batch_losses: list[float] = field(default_factory=list)

    @property
    def params(self) -> dict[str, Tensor]:
        return self.model.all_params()


def _windows(dataset: Iterable) -> list[EventWindow]:
    """Accept windows with contexts attached, or (window, context) pairs."""
    out = []
    for item in dataset:
        if isinstance(item, EventWindow):
            out.append(item)
        else:
            w, ctx = item
            if ctx is not None:
                w.context = ctx
            out.append(w)
    return out


def train(dataset: Sequence, config: TstConfig | None = None, model: TstModel | None = None, kind: str = "full") -> TrainResult:
    """Fit a model with shuffled minibatches, masked Smooth L1 and Adam.

    ``model`` defaults to a fresh ``kind`` variant built from ``config``.  The
    flow scaler is fitted on the training windows when normalisation is on.
    """
    windows = _windows(dataset)
    if not windows:
        raise ValueError("train: empty dataset")
    if model is None:
        model = TstModel(kind, config or TstConfig())
    cfg = model.config
    if cfg.normalize:
        model.scaler = Scaler.fit(windows)
    samples = [model.sample(w) for w in windows]
    params = list(model.trainable().values())
    state = AdamState(lr=cfg.lr)
    rng = make_rng(cfg.seed, "shuffle")
    result = TrainResult(model)

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(samples))
        losses, weights = [], []
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = collate([samples[i] for i in order[start : start + cfg.batch_size]])
            for p in params:
                p.zero_grad()
            try:
                pred = model.forward(batch).pred
                mask = np.broadcast_to(batch.mask[..., None], batch.target.shape)
                loss = smooth_l1(pred, batch.target, cfg.loss_beta, mask=mask)
            except NumericalError as exc:
                raise TrainingAborted(epoch, b, str(exc)) from exc
            if not np.isfinite(loss.data):
                raise TrainingAborted(epoch, b, "loss is not finite")
            loss.backward()
            grads = [p.grad_or_zeros() for p in params]
            if not all(np.all(np.isfinite(g)) for g in grads):
                raise TrainingAborted(epoch, b, "gradient is not finite")
            adam_step(params, grads, state)
            losses.append(float(loss.data))
            weights.append(batch.size)
            result.batch_losses.append(float(loss.data))
        result.loss_trace.append(float(np.average(losses, weights=weights)))
    return result


def evaluate_loss(model: TstModel, windows: Sequence[EventWindow]) -> float:
    """Masked Smooth L1 in scaled units over ``windows`` (no update)."""
    batch = collate([model.sample(w) for w in windows])
    mask = np.broadcast_to(batch.mask[..., None], batch.target.shape)
    return float(smooth_l1(model.forward(batch).pred, batch.target, model.config.loss_beta, mask=mask).data)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "eventflow-checkpoint/1"


def save_checkpoint(model: TstModel, path) -> None:
    enc = model.encoder
    doc = {
        "format": CHECKPOINT_FORMAT,
        "kind": model.kind,
        "config": model.config.to_json(),
        "seed": model.config.seed,
        "scaler": {"mean": model.scaler.mean, "std": model.scaler.std},
        "encoder": {
            "kind": enc.kind,
            "d_h": enc.d_h,
            "adapter_enabled": enc.adapter_enabled,
            "adapter_trainable": enc.adapter_trainable,
            "max_ngram": enc.max_ngram,
        },
        "tensors": {
            name: {"shape": list(t.shape), "data": t.data.ravel().tolist()} for name, t in model.all_params().items()
        },
    }
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def load_checkpoint(path, config: TstConfig | None = None) -> TstModel:
    """Rebuild a model from disk.

    With ``config`` the stored dimensions must agree with it; every stored
    tensor must match the shape its variant expects.
    """
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file (format {doc.get('format')!r})")
    stored = TstConfig.from_json(doc["config"])
    if config is not None:
        dims = ("history_steps", "horizon", "d_h", "d_dow", "d_tod", "d_g", "d_k", "d_st", "k_d", "st_source")
        bad = [f"{d}: stored {getattr(stored, d)} vs requested {getattr(config, d)}" for d in dims if getattr(stored, d) != getattr(config, d)]
        if bad:
            raise DimensionError(f"{path}: checkpoint dimensions differ ({'; '.join(bad)})")
    kind = doc["kind"]
    shapes = L.param_shapes(stored, kind)
    tensors = doc["tensors"]
    params = {}
    for name, shape in shapes.items():
        if name not in tensors:
            raise DimensionError(f"{path}: tensor {name} missing")
        entry = tensors[name]
        if tuple(entry["shape"]) != shape:
            raise DimensionError(f"{path}: tensor {name} has shape {tuple(entry['shape'])}, expected {shape}")
        params[name] = Tensor(np.asarray(entry["data"], dtype=np.float64).reshape(shape), requires_grad=True, name=name)
    e = doc["encoder"]
    d_h = e["d_h"]
    W = np.asarray(tensors["adapter_W"]["data"]).reshape(tensors["adapter_W"]["shape"])
    bvec = np.asarray(tensors["adapter_b"]["data"]).reshape(tensors["adapter_b"]["shape"])
    if W.shape != (d_h, d_h) or bvec.shape != (d_h,):
        raise DimensionError(f"{path}: adapter shape {W.shape} does not match d_h={d_h}")
    enc = EncoderSpec(
        kind=e["kind"],
        d_h=d_h,
        adapter_enabled=e["adapter_enabled"],
        adapter_trainable=e["adapter_trainable"],
        max_ngram=e["max_ngram"],
        adapter_W=tensor(W, name="adapter_W"),
        adapter_b=tensor(bvec, name="adapter_b"),
    )
    return TstModel(kind, stored, enc, params, Scaler(**doc["scaler"]))


def dump_introspection(model: TstModel, windows: Sequence[EventWindow], path) -> int:
    """Write one ``{"window_id", "alpha", "influence"}`` line per window; returns the count."""
    n = 0
    with open(path, "w") as fh:
        for w in windows:
            fh.write(json.dumps(model.introspect(w)) + "\n")
            n += 1
    return n


def noise_contexts(contexts: dict[str, TextContext], encoder: EncoderSpec, seed: int) -> EncoderSpec:
    """A file-backed encoder whose vectors are unit-norm Gaussian noise per (event, category).

    Same width and adapter settings as ``encoder``; used as the text-free
    control with identical model capacity.
    """
    from eventflow.textctx import CATEGORY_KEYS

    rng = make_rng(seed, "noise-context")
    vectors = {}
    for eid in sorted(contexts):
        for key in CATEGORY_KEYS:
            v = rng.normal(size=encoder.d_h)
            vectors[(eid, key)] = v / np.linalg.norm(v)
    return EncoderSpec(
        kind="file_backed",
        d_h=encoder.d_h,
        adapter_enabled=encoder.adapter_enabled,
        adapter_trainable=encoder.adapter_trainable,
        max_ngram=encoder.max_ngram,
        vectors=vectors,
    )
