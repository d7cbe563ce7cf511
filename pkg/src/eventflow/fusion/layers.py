"""Building blocks of the text/spatiotemporal fusion model.

Every function accepts unbatched operands or operands with any number of
leading batch axes; matrix products broadcast over them.
"""

from __future__ import annotations

import datetime as dt
import math
from typing import Mapping, Sequence

import numpy as np

from eventflow.numerics import (
    DimensionError,
    Tensor,
    activation,
    add,
    concat,
    gather,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    softmax,
    tensor,
    transpose,
)

TOD_BINS = 288
MASK_LOGIT = -1e9

Params = Mapping[str, Tensor]


def time_indices(ts: dt.datetime) -> tuple[int, int]:
    """(day of week with Monday = 0, 5-minute bin of the day)."""
    seconds = ts.hour * 3600 + ts.minute * 60 + ts.second + ts.microsecond / 1e6
    frac = seconds / 86400.0
    return ts.weekday(), min(int(math.floor(frac * TOD_BINS)), TOD_BINS - 1)


def time_embedding(ts: dt.datetime, params: Params) -> Tensor:
    """Concatenated day-of-week and time-of-day embedding rows, shape (d_t,)."""
    dow, tod = time_indices(ts)
    return concat([gather(params["dow_table"], dow), gather(params["tod_table"], tod)], axis=-1)


def time_embeddings(dow: np.ndarray, tod: np.ndarray, params: Params) -> Tensor:
    """Vectorised ``time_embedding`` over index arrays of any shape."""
    return concat([gather(params["dow_table"], dow), gather(params["tod_table"], tod)], axis=-1)


def st_encode(history, adj, params: Params, mode: str = "builtin") -> Tensor:
    """Per-sensor spatiotemporal embedding E_st, shape (..., M, d_st).

    ``builtin``: one temporal projection and one graph-diffusion hop,
    ``h = relu(X W1 + b1); E = h + A (h W2) + b2``.
    ``linear``: ``E = X W + b`` with no encoder at all.
    """
    history = tensor(history)
    if mode == "linear":
        return add(matmul(history, params["lin_W"]), params["lin_b"])
    if mode != "builtin":
        raise ValueError(f"unknown st_encode mode {mode!r}")
    adj = tensor(adj)
    if adj.shape[-1] != history.shape[-2] or adj.shape[-2] != history.shape[-2]:
        raise DimensionError(f"st_encode: adjacency {adj.shape} does not match history {history.shape}")
    h = relu(add(matmul(history, params["st_W1"]), params["st_b1"]))
    hop = matmul(adj, matmul(h, params["st_W2"]))
    return add(add(h, hop), params["st_b2"])


def attend(e_time: Tensor, C: Tensor, params: Params) -> tuple[Tensor, Tensor]:
    """Time-queried attention over category rows.

    Returns ``(c_sum, alpha)`` with shapes (..., T', d_g) and (..., T', K).
    """
    d_k = params["att_Wq"].shape[-1]
    q = matmul(e_time, params["att_Wq"])
    k = matmul(C, params["att_Wk"])
    v = matmul(C, params["att_Wv"])
    alpha = softmax(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k)), axis=-1)
    return matmul(alpha, v), alpha


def dynamic_context(C, e_time: Tensor, params: Params) -> tuple[Tensor, Tensor]:
    """Event signature per future step, (..., T', d_g), plus the attention weights."""
    C = tensor(C)
    if C.shape[-1] != params["att_Wk"].shape[0]:
        raise DimensionError(f"dynamic_context: C has width {C.shape[-1]}, expected {params['att_Wk'].shape[0]}")
    c_sum, alpha = attend(e_time, C, params)
    e_global = add(matmul(concat([c_sum, e_time], axis=-1), params["fuse_W"]), params["fuse_b"])
    return e_global, alpha


def influence(
    e_global: Tensor,
    s_loc: Tensor,
    params: Params,
    axis: str = "sensors",
    sensor_mask: np.ndarray | None = None,
) -> Tensor:
    """Influence weights I, shape (..., M, T').

    The logits are ``(E_global f_q)(S_loc f_k)^T / sqrt(d_k)`` laid out as
    (..., T', M).  ``axis="sensors"`` normalises each step over sensors;
    ``axis="time"`` normalises each sensor over steps.  ``sensor_mask``
    (..., M) removes padded sensors from the sensor-axis softmax.
    """
    if s_loc.shape[-1] != params["f_k"].shape[0]:
        raise DimensionError(f"influence: S_loc width {s_loc.shape[-1]} != f_k rows {params['f_k'].shape[0]}")
    d_k = params["f_q"].shape[-1]
    q = matmul(e_global, params["f_q"])
    k = matmul(s_loc, params["f_k"])
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))  # (..., T', M)
    if axis == "sensors":
        if sensor_mask is not None:
            bias = np.where(np.asarray(sensor_mask, dtype=bool), 0.0, MASK_LOGIT)
            logits = add(logits, np.expand_dims(bias, -2))
        return transpose(softmax(logits, axis=-1))
    if axis == "time":
        return transpose(softmax(logits, axis=-2))
    raise ValueError(f"unknown influence axis {axis!r}")


def infuse(e_st: Tensor, I, params: Params, sigma: str = "sigmoid") -> Tensor:
    """Event-infused representation Z, shape (..., M, T', d_st).

    ``Z[i, t] = E_st[i] + I[i, t] * sigma(E_st[i] f_value + b)``; the value
    projection is shared across steps.
    """
    I = tensor(I)
    if I.shape[-2] != e_st.shape[-2]:
        raise DimensionError(f"infuse: I {I.shape} does not match E_st {e_st.shape}")
    d = e_st.shape[-1]
    gate = activation(sigma)(add(matmul(e_st, params["f_value"]), params["f_value_b"]))
    lead = e_st.shape[:-1]
    base = reshape(e_st, lead + (1, d))
    return add(base, mul(reshape(I, I.shape + (1,)), reshape(gate, lead + (1, d))))


def head(z: Tensor, params: Params) -> Tensor:
    """Linear read-out of Z (..., M, T', d) to (..., M, T').

    A (d, 1) weight is one map shared by every step; a (T', d) weight gives
    each horizon step its own map (with a (T',) bias).
    """
    W = params["head_W"]
    if W.shape[-1] == 1:
        out = matmul(z, W)
        return add(reshape(out, out.shape[:-1]), params["head_b"])
    if z.shape[-2:] != W.shape:
        raise DimensionError(f"head: Z {z.shape} does not match per-step weight {W.shape}")
    return add(scale(mean(mul(z, W), axis=-1), float(W.shape[-1])), params["head_b"])


def expand_steps(x: Tensor, steps: int) -> Tensor:
    """(..., M, d) -> (..., M, steps, d) by repetition along a new step axis."""
    from eventflow.numerics import broadcast_to

    lead = x.shape[:-1]
    return broadcast_to(reshape(x, lead + (1, x.shape[-1])), lead + (steps, x.shape[-1]))


def param_shapes(cfg, kind: str) -> dict[str, tuple[int, ...]]:
    """Shapes of every learnable tensor of a variant (adapter excluded)."""
    d_t = cfg.d_dow + cfg.d_tod
    T, d_h, d_g, d_k, d_st, k_d = cfg.history_steps, cfg.d_h, cfg.d_g, cfg.d_k, cfg.d_st, cfg.k_d
    shapes: dict[str, tuple[int, ...]] = {
        "dow_table": (7, cfg.d_dow),
        "tod_table": (TOD_BINS, cfg.d_tod),
    }
    if kind == "no_STE":
        shapes.update(lin_W=(T, d_st), lin_b=(d_st,))
    elif cfg.st_source == "builtin":
        t_in = T + d_h if kind == "EF" else T
        shapes.update(st_W1=(t_in, d_st), st_b1=(d_st,), st_W2=(d_st, d_st), st_b2=(d_st,))

    if kind == "EF":
        shapes.update(fuse_W=(d_t, d_g), fuse_b=(d_g,))
    elif kind == "no_TT":
        shapes.update(fuse_W=(d_h + d_t, d_g), fuse_b=(d_g,))
    else:
        shapes.update(
            att_Wq=(d_t, d_k), att_Wk=(d_h, d_k), att_Wv=(d_h, d_g), fuse_W=(d_g + d_t, d_g), fuse_b=(d_g,)
        )

    per_step = getattr(cfg, "head", "shared") == "per_step"

    def head_shapes(d):
        if per_step:
            return dict(head_W=(cfg.horizon, d), head_b=(cfg.horizon,))
        return dict(head_W=(d, 1), head_b=(1,))

    if kind == "LF":
        shapes.update(head_shapes(d_st + d_g))
    elif kind == "no_TS":
        shapes.update(W_cat=(d_st + d_g, d_st), **head_shapes(d_st))
    else:
        shapes.update(f_q=(d_g, d_k), f_k=(d_st + k_d, d_k), f_value=(d_st, d_st), f_value_b=(d_st,), **head_shapes(d_st))
    return shapes


def init_params(cfg, kind: str, rng: np.random.Generator) -> dict[str, Tensor]:
    from eventflow.numerics import embedding_init, linear_init

    out = {}
    for name, shape in param_shapes(cfg, kind).items():
        if name in ("dow_table", "tod_table"):
            arr = embedding_init(rng, *shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        elif name == "head_W" and shape[-1] != 1:
            arr = rng.uniform(-1.0, 1.0, size=shape) / math.sqrt(shape[-1])
        else:
            arr = linear_init(rng, shape[0], shape[1])
        out[name] = Tensor(arr, requires_grad=True, name=name)
    return out


def check_names(params: Params, names: Sequence[str]) -> None:
    missing = [n for n in names if n not in params]
    if missing:
        raise KeyError(f"missing parameters: {missing}")
