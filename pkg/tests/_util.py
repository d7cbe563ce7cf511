"""Shared builders for tests: tiny configs, random windows, and a loop-based model oracle."""

from __future__ import annotations

import datetime as dt
import math

import numpy as np

from eventflow.datamodel.geo import row_normalize
from eventflow.datamodel.records import AffectedSet, EventRecord, EventWindow
from eventflow.fusion import TstConfig
from eventflow.fusion.layers import TOD_BINS, time_indices
from eventflow.textctx import CATEGORY_KEYS, TextContext

WORDS = "arena crowd concert traffic north parking sellout game festival delay road exit".split()


def tiny_config(**kw) -> TstConfig:
    base = dict(history_steps=4, horizon=3, d_h=4, d_dow=2, d_tod=2, d_g=4, d_k=3, d_st=4, k_d=3, normalize=False)
    base.update(kw)
    return TstConfig(**base)


def random_text(rng, n=5) -> str:
    return " ".join(rng.choice(WORDS, size=n))


def random_context(rng, event_id="E") -> TextContext:
    return TextContext(event_id, {k: random_text(rng) for k in CATEGORY_KEYS})


def random_window(rng, m: int, cfg: TstConfig, event_id: str = "E", start=None, ctx=None) -> EventWindow:
    dist = rng.uniform(0.1, 3.0, m)
    ang = rng.uniform(-math.pi, math.pi, m)
    D = np.column_stack([dist, np.sin(ang), np.cos(ang)])
    adj = np.exp(-((dist[:, None] - dist[None, :]) ** 2))
    aff = AffectedSet("V0", 3.0, np.arange(m), D, row_normalize(adj), [f"S{i}" for i in range(m)])
    if start is None:
        start = dt.datetime(2019, 1, 7) + dt.timedelta(minutes=5 * int(rng.integers(0, 7 * 288)))
    ev = EventRecord(event_id, "V0", (34.05, -118.25), start.date(), "10:00", "12:00", ("Sports",))
    return EventWindow(
        history=rng.normal(size=(m, cfg.history_steps)),
        target=rng.normal(size=(m, cfg.horizon)),
        future_timestamps=[start + dt.timedelta(minutes=5 * k) for k in range(cfg.horizon)],
        affected=aff,
        window_hours=2,
        event=ev,
        context=ctx if ctx is not None else random_context(rng, event_id),
        target_start=int(rng.integers(0, 10_000)),
    )


# ---------------------------------------------------------------------------
# pure-Python reimplementation of the full model (lists and math only)
# ---------------------------------------------------------------------------


def _mat(a):
    return [list(map(float, row)) for row in np.asarray(a)]


def _vec(a):
    return list(map(float, np.asarray(a).ravel()))


def _dot(u, v):
    s = 0.0
    for a, b in zip(u, v):
        s += a * b
    return s


def _vm(v, W):
    """Row vector times matrix."""
    return [_dot(v, [W[r][c] for r in range(len(W))]) for c in range(len(W[0]))]


def _softmax(xs):
    mx = max(xs)
    e = [math.exp(x - mx) for x in xs]
    s = sum(e)
    return [x / s for x in e]


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


_ACT = {"sigmoid": _sigmoid, "relu": lambda x: max(x, 0.0), "tanh": math.tanh}


def oracle_forward(model, window, ctx=None):
    """Prediction (M x T') of the ``full`` variant, one scalar at a time.

    Written independently of the tensor code: no numpy arithmetic, only
    Python floats.  Requires an untrained identity scaler or ``normalize=False``.
    """
    from eventflow.textctx import encode_raw

    cfg = model.config
    P = {k: v.data for k, v in model.params.items()}
    ctx = ctx or window.context
    M, Tp = window.affected.m, cfg.horizon

    # text: frozen embedding then the adapter
    C_raw = _mat(encode_raw(ctx, model.encoder))
    if model.encoder.adapter_enabled:
        AW, Ab = _mat(model.encoder.adapter_W.data), _vec(model.encoder.adapter_b.data)
        C = [[x + b for x, b in zip(_vm(row, AW), Ab)] for row in C_raw]
    else:
        C = C_raw

    # time embedding per future step
    dow_t, tod_t = _mat(P["dow_table"]), _mat(P["tod_table"])
    e_time = []
    for ts in window.future_timestamps:
        d, t = time_indices(ts)
        assert 0 <= t < TOD_BINS
        e_time.append(dow_t[d] + tod_t[t])

    # spatiotemporal encoder
    X, A = _mat(window.history), _mat(window.affected.adjacency)
    W1, b1, W2, b2 = _mat(P["st_W1"]), _vec(P["st_b1"]), _mat(P["st_W2"]), _vec(P["st_b2"])
    h = [[max(x + b, 0.0) for x, b in zip(_vm(X[i], W1), b1)] for i in range(M)]
    hW2 = [_vm(h[i], W2) for i in range(M)]
    E_st = []
    for i in range(M):
        row = []
        for c in range(cfg.d_st):
            hop = 0.0
            for j in range(M):
                hop += A[i][j] * hW2[j][c]
            row.append(h[i][c] + hop + b2[c])
        E_st.append(row)

    # attention over categories, then the global signature
    Wq, Wk, Wv = _mat(P["att_Wq"]), _mat(P["att_Wk"]), _mat(P["att_Wv"])
    Wf, bf = _mat(P["fuse_W"]), _vec(P["fuse_b"])
    keys = [_vm(c, Wk) for c in C]
    vals = [_vm(c, Wv) for c in C]
    dk = len(Wq[0])
    E_g = []
    for t in range(Tp):
        q = _vm(e_time[t], Wq)
        alpha = _softmax([_dot(q, k) / math.sqrt(dk) for k in keys])
        c_sum = [sum(alpha[j] * vals[j][c] for j in range(len(C))) for c in range(len(vals[0]))]
        E_g.append([x + b for x, b in zip(_vm(c_sum + e_time[t], Wf), bf)])

    # influence: softmax over sensors for every step
    fq, fk = _mat(P["f_q"]), _mat(P["f_k"])
    dq = len(fq[0])
    D = _mat(window.affected.D)
    kloc = [_vm(E_st[i] + D[i], fk) for i in range(M)]
    I = [[0.0] * Tp for _ in range(M)]
    for t in range(Tp):
        q = _vm(E_g[t], fq)
        w = _softmax([_dot(q, kloc[i]) / math.sqrt(dq) for i in range(M)])
        for i in range(M):
            I[i][t] = w[i]

    # gated infusion and the head
    fv, fvb = _mat(P["f_value"]), _vec(P["f_value_b"])
    act = _ACT[cfg.activation]
    hW, hb = P["head_W"], _vec(P["head_b"])
    out = []
    for i in range(M):
        gate = [act(x + b) for x, b in zip(_vm(E_st[i], fv), fvb)]
        row = []
        for t in range(Tp):
            z = [E_st[i][c] + I[i][t] * gate[c] for c in range(cfg.d_st)]
            if hW.shape[-1] == 1:
                row.append(_dot(z, _vec(hW)) + hb[0])
            else:
                row.append(_dot(z, _vec(hW[t])) + hb[t])
        out.append(row)
    return out


def relu_margin(model, window) -> float:
    """Smallest |pre-activation| of the encoder ReLU for this window (inf without one)."""
    from eventflow.textctx import adapter_forward, encode_raw

    if "st_W1" not in model.params:
        return math.inf
    x = window.history
    if model.kind == "EF":
        C = adapter_forward(encode_raw(window.context, model.encoder), model.encoder).data
        x = np.hstack([x, np.repeat(C.mean(axis=0, keepdims=True), x.shape[0], axis=0)])
    pre = x @ model.params["st_W1"].data + model.params["st_b1"].data
    return float(np.abs(pre).min())


def gradcheck_instance(kind: str, seed: int, m: int = 4, scale_p: float = 0.5, margin: float = 1e-3):
    """A tiny model and window whose loss is smooth around the sampled point.

    Parameters and windows are redrawn until no ReLU pre-activation lies
    within ``margin`` of zero, no residual lies within ``margin`` of the
    Smooth L1 threshold (so central differences never straddle a kink), and
    no attention or influence weight falls below ``margin`` (a saturated
    softmax leaves gradients at roundoff level).
    """
    from eventflow.fusion import TstModel, tst_forward
    from eventflow.numerics import make_rng
    from eventflow.textctx import EncoderSpec

    rng = make_rng(seed, "gradcheck", kind)
    cfg = tiny_config(seed=seed)
    for _ in range(100):
        enc = EncoderSpec(d_h=cfg.d_h)
        enc.adapter_W.data[:] = np.eye(cfg.d_h) + 0.3 * rng.normal(size=(cfg.d_h, cfg.d_h))
        enc.adapter_b.data[:] = 0.3 * rng.normal(size=cfg.d_h)
        model = TstModel(kind, cfg, enc)
        for p in model.params.values():
            p.data[:] = rng.normal(size=p.shape) * scale_p
        w = random_window(rng, m, cfg)
        resid = np.abs(tst_forward(w, None, model).data - w.target)
        probe = model.introspect(w)
        weights = [np.asarray(probe[k]) for k in ("alpha", "influence") if probe[k] is not None]
        saturated = any(a.min() < margin for a in weights)
        if relu_margin(model, w) > margin and np.abs(resid - cfg.loss_beta).min() > margin and not saturated:
            return model, w
    raise RuntimeError("could not draw a smooth instance")
