"""The fusion model, its ablation variants, and batching of event windows."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from eventflow.datamodel.records import EventWindow
from eventflow.fusion import layers as L
from eventflow.numerics import (
    DimensionError,
    Tensor,
    add,
    broadcast_to,
    concat,
    make_rng,
    matmul,
    mean,
    reshape,
    scale,
    tensor,
)
from eventflow.textctx import CATEGORY_KEYS, EncoderSpec, MissingEmbeddingError, TextContext, adapter_forward, encode_raw

VARIANTS = ("full", "EF", "LF", "no_TT", "no_TS", "no_finetune", "no_STE")


@dataclass
class TstConfig:
    history_steps: int = 12
    horizon: int = 12
    d_h: int = 32
    d_dow: int = 4
    d_tod: int = 4
    d_g: int = 8
    d_k: int = 8
    d_st: int = 16
    k_d: int = 3
    activation: str = "sigmoid"
    influence_axis: str = "sensors"
    head: str = "shared"
    st_source: str = "builtin"
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0
    loss_beta: float = 1.0
    normalize: bool = True

    def __post_init__(self):
        dims = dict(d_h=self.d_h, d_dow=self.d_dow, d_tod=self.d_tod, d_g=self.d_g, d_k=self.d_k, d_st=self.d_st)
        small = [k for k, v in dims.items() if v < 2]
        if small:
            raise ValueError(f"dimensions must be at least 2: {small}")
        if self.history_steps < 1 or self.horizon < 1:
            raise ValueError("history_steps and horizon must be at least 1")
        if self.activation not in ("sigmoid", "relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.influence_axis not in ("sensors", "time"):
            raise ValueError(f"unknown influence axis {self.influence_axis!r}")
        if self.head not in ("shared", "per_step"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.st_source not in ("builtin", "file_backed"):
            raise ValueError(f"unknown st_source {self.st_source!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0:
            raise ValueError("batch_size must be >= 1, epochs and lr nonnegative")

    @property
    def d_t(self) -> int:
        return self.d_dow + self.d_tod

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TstConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown model config keys: {sorted(extra)}")
        return cls(**obj)


@dataclass
class Scaler:
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, windows: Sequence[EventWindow]) -> "Scaler":
        vals = np.concatenate([np.concatenate([w.history.ravel(), w.target.ravel()]) for w in windows])
        sd = float(vals.std())
        return cls(float(vals.mean()), sd if sd > 0 else 1.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def inverse(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class Sample:
    """Model-ready arrays of one window (flows already scaled)."""

    window_id: str
    history: np.ndarray  # (M, T)
    target: np.ndarray  # (M, T')
    adj: np.ndarray  # (M, M)
    D: np.ndarray  # (M, K_D)
    C_raw: np.ndarray  # (K, d_h)
    dow: np.ndarray  # (T',)
    tod: np.ndarray  # (T',)
    st_emb: np.ndarray | None = None

    @property
    def m(self) -> int:
        return self.history.shape[0]


@dataclass
class Batch:
    history: np.ndarray  # (B, M, T)
    target: np.ndarray  # (B, M, T')
    mask: np.ndarray  # (B, M) bool
    adj: np.ndarray
    D: np.ndarray
    C_raw: np.ndarray  # (B, K, d_h)
    dow: np.ndarray
    tod: np.ndarray
    st_emb: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.history.shape[0]


def collate(samples: Sequence[Sample]) -> Batch:
    """Stack samples, zero-padding the sensor axis to the largest M."""
    B = len(samples)
    M = max(s.m for s in samples)
    T = samples[0].history.shape[1]
    Tp = samples[0].target.shape[1]
    kd = samples[0].D.shape[1]
    hist = np.zeros((B, M, T))
    tgt = np.zeros((B, M, Tp))
    mask = np.zeros((B, M), dtype=bool)
    adj = np.zeros((B, M, M))
    D = np.zeros((B, M, kd))
    st = None
    if samples[0].st_emb is not None:
        st = np.zeros((B, M, samples[0].st_emb.shape[1]))
    for b, s in enumerate(samples):
        m = s.m
        hist[b, :m] = s.history
        tgt[b, :m] = s.target
        mask[b, :m] = True
        adj[b, :m, :m] = s.adj
        D[b, :m] = s.D
        if st is not None:
            st[b, :m] = s.st_emb
    return Batch(
        history=hist,
        target=tgt,
        mask=mask,
        adj=adj,
        D=D,
        C_raw=np.stack([s.C_raw for s in samples]),
        dow=np.stack([s.dow for s in samples]),
        tod=np.stack([s.tod for s in samples]),
        st_emb=st,
    )


@dataclass
class ForwardResult:
    pred: Tensor  # (B, M, T') in scaled units
    alpha: Tensor | None = None  # (B, T', K)
    influence: Tensor | None = None  # (B, M, T')


class TstModel:
    """A fusion model variant: parameters, text encoder and flow scaler."""

    def __init__(
        self,
        kind: str = "full",
        config: TstConfig | None = None,
        encoder: EncoderSpec | None = None,
        params: dict[str, Tensor] | None = None,
        scaler: Scaler | None = None,
    ):
        if kind not in VARIANTS:
            raise ValueError(f"unknown variant {kind!r}; expected one of {VARIANTS}")
        self.kind = kind
        self.config = config or TstConfig()
        cfg = self.config
        self.encoder = encoder or EncoderSpec(d_h=cfg.d_h)
        if self.encoder.d_h != cfg.d_h:
            raise DimensionError(f"encoder width {self.encoder.d_h} != config d_h {cfg.d_h}")
        self.encoder.set_trainable(kind != "no_finetune" and self.encoder.adapter_trainable)
        self.params = params if params is not None else L.init_params(cfg, kind, make_rng(cfg.seed, "init", kind))
        expected = L.param_shapes(cfg, kind)
        for name, shape in expected.items():
            if name not in self.params:
                raise KeyError(f"variant {kind}: missing parameter {name}")
            if self.params[name].shape != shape:
                raise DimensionError(f"parameter {name}: shape {self.params[name].shape}, expected {shape}")
        self.scaler = scaler or Scaler()
        self.st_vectors: dict[str, np.ndarray] = {}
        self._c_cache: dict[tuple[str, ...], np.ndarray] = {}

    # ------------------------------------------------------------------
    def trainable(self) -> dict[str, Tensor]:
        out = dict(self.params)
        if self.encoder.adapter_enabled:
            out["adapter_W"] = self.encoder.adapter_W
            out["adapter_b"] = self.encoder.adapter_b
        return {k: v for k, v in out.items() if v.requires_grad}

    def all_params(self) -> dict[str, Tensor]:
        out = dict(self.params)
        out["adapter_W"] = self.encoder.adapter_W
        out["adapter_b"] = self.encoder.adapter_b
        return out

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.trainable().values()))

    # ------------------------------------------------------------------
    def _text(self, window: EventWindow, ctx: TextContext | None) -> np.ndarray:
        ctx = ctx or window.context
        if ctx is None:
            raise ValueError(f"window {window.window_id} has no text context")
        key = (ctx.event_id,) + tuple(ctx.category_texts[k] for k in CATEGORY_KEYS)
        if key not in self._c_cache:
            self._c_cache[key] = encode_raw(ctx, self.encoder)
        return self._c_cache[key]

    def sample(self, window: EventWindow, ctx: TextContext | None = None) -> Sample:
        cfg = self.config
        if window.history.shape[1] != cfg.history_steps or window.target.shape[1] != cfg.horizon:
            raise DimensionError(
                f"window {window.window_id}: history/target widths {window.history.shape[1]}/"
                f"{window.target.shape[1]} != config {cfg.history_steps}/{cfg.horizon}"
            )
        idx = [L.time_indices(ts) for ts in window.future_timestamps]
        adj = window.affected.adjacency
        if adj is None:
            adj = np.eye(window.affected.m)
        st = None
        if cfg.st_source == "file_backed" and self.kind != "no_STE":
            try:
                st = self.st_vectors[window.window_id]
            except KeyError:
                raise MissingEmbeddingError(f"no spatiotemporal embedding for window {window.window_id!r}") from None
            if st.shape != (window.affected.m, cfg.d_st):
                raise DimensionError(f"embedding for {window.window_id} has shape {st.shape}")
        sc = self.scaler if cfg.normalize else Scaler()
        return Sample(
            window_id=window.window_id,
            history=sc.forward(window.history),
            target=sc.forward(window.target),
            adj=adj,
            D=window.affected.D,
            C_raw=self._text(window, ctx),
            dow=np.array([i[0] for i in idx]),
            tod=np.array([i[1] for i in idx]),
            st_emb=st,
        )

    def load_st_vectors(self, path) -> None:
        import json

        with open(path) as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    self.st_vectors[str(obj["window_id"])] = np.asarray(obj["vectors"], dtype=np.float64)

    # ------------------------------------------------------------------
    def forward(self, batch: Batch, influence_override: np.ndarray | None = None) -> ForwardResult:
        cfg, P, kind = self.config, self.params, self.kind
        B, M = batch.history.shape[:2]
        Tp = cfg.horizon
        C = adapter_forward(tensor(batch.C_raw), self.encoder)  # (B, K, d_h)
        e_time = L.time_embeddings(batch.dow, batch.tod, P)  # (B, T', d_t)

        x = tensor(batch.history)
        if kind == "EF":
            pooled = mean(C, axis=-2, keepdims=True)
            x = concat([x, broadcast_to(pooled, (B, M, cfg.d_h))], axis=-1)
        if kind == "no_STE":
            e_st = L.st_encode(x, None, P, mode="linear")
        elif cfg.st_source == "file_backed":
            e_st = tensor(batch.st_emb)
        else:
            e_st = L.st_encode(x, batch.adj, P)

        alpha = None
        if kind == "EF":
            e_global = add(matmul(e_time, P["fuse_W"]), P["fuse_b"])
        elif kind == "no_TT":
            pooled = broadcast_to(mean(C, axis=-2, keepdims=True), (B, Tp, cfg.d_h))
            e_global = add(matmul(concat([pooled, e_time], axis=-1), P["fuse_W"]), P["fuse_b"])
        else:
            e_global, alpha = L.dynamic_context(C, e_time, P)

        if kind == "LF":
            e_g = broadcast_to(reshape(e_global, (B, 1, Tp, cfg.d_g)), (B, M, Tp, cfg.d_g))
            z = concat([L.expand_steps(e_st, Tp), e_g], axis=-1)
            return ForwardResult(L.head(z, P), alpha, None)
        if kind == "no_TS":
            g_mean = broadcast_to(mean(e_global, axis=-2, keepdims=True), (B, M, cfg.d_g))
            z = matmul(concat([e_st, g_mean], axis=-1), P["W_cat"])
            return ForwardResult(L.head(L.expand_steps(z, Tp), P), alpha, None)

        if influence_override is not None:
            I = tensor(np.broadcast_to(np.asarray(influence_override, dtype=np.float64), (B, M, Tp)).copy())
        else:
            s_loc = concat([e_st, tensor(batch.D)], axis=-1)
            I = L.influence(e_global, s_loc, P, cfg.influence_axis, batch.mask)
        z = L.infuse(e_st, I, P, cfg.activation)
        return ForwardResult(L.head(z, P), alpha, I)

    def text_free(self, batch: Batch) -> Tensor:
        """Prediction of the spatiotemporal path alone (no infusion term)."""
        x = tensor(batch.history)
        if self.kind == "no_STE":
            e_st = L.st_encode(x, None, self.params, mode="linear")
        elif self.config.st_source == "file_backed":
            e_st = tensor(batch.st_emb)
        else:
            e_st = L.st_encode(x, batch.adj, self.params)
        return L.head(L.expand_steps(e_st, self.config.horizon), self.params)

    # ------------------------------------------------------------------
    def predict(self, windows: Sequence[EventWindow], batch_size: int | None = None) -> list[np.ndarray]:
        """Predictions in flow units, one (M, T') array per window."""
        bs = batch_size or self.config.batch_size
        out: list[np.ndarray] = []
        sc = self.scaler if self.config.normalize else Scaler()
        for i in range(0, len(windows), bs):
            chunk = windows[i : i + bs]
            res = self.forward(collate([self.sample(w) for w in chunk]))
            for b, w in enumerate(chunk):
                out.append(sc.inverse(res.pred.data[b, : w.affected.m]))
        return out

    def introspect(self, window: EventWindow, ctx: TextContext | None = None) -> dict:
        """Attention over categories (T' x K) and influence weights (M x T') of one window."""
        res = self.forward(collate([self.sample(window, ctx)]))
        return {
            "window_id": window.window_id,
            "alpha": None if res.alpha is None else res.alpha.data[0].tolist(),
            "influence": None if res.influence is None else res.influence.data[0].tolist(),
        }


def make_variant(kind: str, config: TstConfig | None = None, encoder: EncoderSpec | None = None) -> TstModel:
    """Fresh, seeded model of the named variant."""
    return TstModel(kind, config, encoder)


def tst_forward(
    window: EventWindow,
    ctx: TextContext | None,
    model: TstModel,
    influence_override: np.ndarray | None = None,
) -> Tensor:
    """Prediction X_hat (M, T') for one window, on the tape, in flow units."""
    res = model.forward(collate([model.sample(window, ctx)]), influence_override)
    pred = reshape(res.pred, res.pred.shape[1:])
    if model.config.normalize and (model.scaler.mean != 0.0 or model.scaler.std != 1.0):
        pred = add(scale(pred, model.scaler.std), model.scaler.mean)
    return pred

