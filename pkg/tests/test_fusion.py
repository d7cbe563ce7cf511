import dataclasses
import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from _util import oracle_forward, random_context, random_window, tiny_config

from eventflow.datamodel import SynthConfig, build_windows, synth_generate
from eventflow.fusion import (
    VARIANTS,
    TrainingAborted,
    TstModel,
    collate,
    dump_introspection,
    dynamic_context,
    infuse,
    influence,
    load_checkpoint,
    make_variant,
    noise_contexts,
    save_checkpoint,
    st_encode,
    time_embedding,
    time_indices,
    train,
    tst_forward,
)
from eventflow.fusion.layers import attend, init_params
from eventflow.numerics import DimensionError, Tensor, make_rng
from eventflow.textctx import CATEGORY_KEYS, EncoderSpec, MissingEmbeddingError, TextContext


def randomize(model, rng, s=0.5):
    for p in model.params.values():
        p.data[:] = rng.normal(size=p.shape) * s
    return model


# --- layers ------------------------------------------------------------------


def test_time_indices():
    assert time_indices(dt.datetime(2019, 1, 7, 0, 0)) == (0, 0)  # a Monday
    assert time_indices(dt.datetime(2019, 1, 9, 12, 0)) == (2, 144)
    assert time_indices(dt.datetime(2019, 1, 6, 23, 59)) == (6, 287)


def test_time_embedding_repeats_weekly():
    P = init_params(tiny_config(), "full", make_rng(0))
    a = time_embedding(dt.datetime(2019, 1, 8, 17, 35), P).data
    b = time_embedding(dt.datetime(2019, 3, 5, 17, 35), P).data
    assert np.array_equal(a, b)
    assert a.shape == (4,)


def test_st_encode_single_sensor_closed_form():
    rng = make_rng(1)
    P = init_params(tiny_config(), "full", rng)
    P["st_b1"].data[:] = 0
    P["st_b2"].data[:] = 0
    x = rng.normal(size=(1, 4))
    h = np.maximum(x @ P["st_W1"].data, 0)
    expected = h @ (np.eye(4) + P["st_W2"].data)
    np.testing.assert_allclose(st_encode(x, np.ones((1, 1)), P).data, expected, atol=1e-12)


def test_st_encode_zero_input_zero_output():
    P = init_params(tiny_config(), "full", make_rng(2))
    out = st_encode(np.zeros((3, 4)), np.eye(3), P).data
    assert np.all(out == 0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 6))
def test_st_encode_permutation_equivariant(seed, m):
    rng = make_rng(seed)
    P = init_params(tiny_config(), "full", rng)
    x = rng.normal(size=(m, 4))
    A = rng.uniform(size=(m, m))
    perm = rng.permutation(m)
    a = st_encode(x, A, P).data[perm]
    b = st_encode(x[perm], A[np.ix_(perm, perm)], P).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_dynamic_context_single_category():
    rng = make_rng(3)
    P = init_params(tiny_config(), "full", rng)
    C = rng.normal(size=(1, 4))
    e_time = Tensor(rng.normal(size=(3, 4)))
    c_sum, alpha = attend(e_time, Tensor(C), P)
    assert np.all(alpha.data == 1.0)
    np.testing.assert_allclose(c_sum.data, np.repeat(C @ P["att_Wv"].data, 3, axis=0), atol=1e-15)


def test_dynamic_context_identical_rows_collapse():
    rng = make_rng(4)
    P = init_params(tiny_config(), "full", rng)
    row = rng.normal(size=(1, 4))
    c_sum, _ = attend(Tensor(rng.normal(size=(5, 4))), Tensor(np.repeat(row, 3, axis=0)), P)
    np.testing.assert_allclose(c_sum.data, np.repeat(row @ P["att_Wv"].data, 5, axis=0), atol=1e-12)


def test_dynamic_context_loop_oracle():
    rng = make_rng(5)
    P = randomize_dict(init_params(tiny_config(), "full", rng), rng)
    C = rng.normal(size=(3, 4))
    e_time = rng.normal(size=(3, 4))
    E, alpha = dynamic_context(C, Tensor(e_time), P)
    Wq, Wk, Wv, Wf, bf = (P[k].data for k in ("att_Wq", "att_Wk", "att_Wv", "fuse_W", "fuse_b"))
    for t in range(3):
        q = [sum(e_time[t, a] * Wq[a, j] for a in range(4)) for j in range(3)]
        logits = []
        for r in range(3):
            k = [sum(C[r, a] * Wk[a, j] for a in range(4)) for j in range(3)]
            logits.append(sum(qi * ki for qi, ki in zip(q, k)) / np.sqrt(3))
        w = np.exp(np.array(logits) - max(logits))
        w /= w.sum()
        assert np.max(np.abs(alpha.data[t] - w)) < 1e-12
        c = [sum(w[r] * sum(C[r, a] * Wv[a, j] for a in range(4)) for r in range(3)) for j in range(4)]
        x = c + list(e_time[t])
        g = [sum(x[a] * Wf[a, j] for a in range(8)) + bf[j] for j in range(4)]
        assert np.max(np.abs(E.data[t] - g)) < 1e-12


def randomize_dict(P, rng, s=0.5):
    for p in P.values():
        p.data[:] = rng.normal(size=p.shape) * s
    return P


def test_influence_uniform_when_query_zero():
    rng = make_rng(6)
    P = init_params(tiny_config(), "full", rng)
    P["f_q"].data[:] = 0
    I = influence(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(5, 7))), P).data
    assert np.allclose(I, 1 / 5, atol=1e-15)


def test_influence_single_sensor_is_one():
    rng = make_rng(7)
    P = randomize_dict(init_params(tiny_config(), "full", rng), rng)
    I = influence(Tensor(rng.normal(size=(3, 4))), Tensor(rng.normal(size=(1, 7))), P).data
    assert np.all(I == 1.0)


def test_influence_masked_sensors_get_zero_weight():
    rng = make_rng(8)
    P = randomize_dict(init_params(tiny_config(), "full", rng), rng)
    e = Tensor(rng.normal(size=(1, 3, 4)))
    s = rng.normal(size=(1, 5, 7))
    mask = np.array([[True, True, True, False, False]])
    I = influence(e, Tensor(s), P, sensor_mask=mask).data
    assert np.all(I[0, 3:] == 0)
    small = influence(Tensor(e.data[0]), Tensor(s[0, :3]), P).data
    np.testing.assert_allclose(I[0, :3], small, atol=1e-15)


def test_infuse_identity_cases():
    rng = make_rng(9)
    P = randomize_dict(init_params(tiny_config(), "full", rng), rng)
    e_st = Tensor(rng.normal(size=(4, 4)))
    I = rng.uniform(size=(4, 3))
    I[1, 2] = 0.0
    Z = infuse(e_st, I, P).data
    assert np.array_equal(Z[1, 2], e_st.data[1])
    P["f_value"].data[:] = 0
    P["f_value_b"].data[:] = 0
    Z = infuse(e_st, I, P).data
    np.testing.assert_allclose(Z, e_st.data[:, None, :] + 0.5 * I[:, :, None], atol=1e-15)


def test_infuse_shape_check():
    P = init_params(tiny_config(), "full", make_rng(0))
    with pytest.raises(DimensionError):
        infuse(Tensor(np.ones((4, 4))), np.ones((3, 3)), P)


# --- full forward --------------------------------------------------------------


@pytest.mark.parametrize("act", ["sigmoid", "relu", "tanh"])
@pytest.mark.parametrize("head", ["shared", "per_step"])
def test_forward_matches_scalar_oracle(act, head):
    rng = make_rng(10, act, head)
    cfg = tiny_config(activation=act, head=head)
    model = randomize(TstModel("full", cfg, EncoderSpec(d_h=4)), rng)
    w = random_window(rng, 5, cfg)
    got = tst_forward(w, None, model).data
    assert np.max(np.abs(got - np.array(oracle_forward(model, w)))) < 1e-10


def test_zero_head_gives_bias_everywhere():
    rng = make_rng(11)
    cfg = tiny_config()
    model = randomize(TstModel("full", cfg), rng)
    model.params["head_W"].data[:] = 0
    model.params["head_b"].data[:] = 2.5
    assert np.all(tst_forward(random_window(rng, 4, cfg), None, model).data == 2.5)


def test_text_reaches_output():
    rng = make_rng(12)
    cfg = tiny_config()
    model = randomize(TstModel("full", cfg), rng)
    w = random_window(rng, 4, cfg)
    base = tst_forward(w, None, model).data
    model.encoder.adapter_W.data[:] = 2 * np.eye(4)  # doubles C
    assert not np.allclose(base, tst_forward(w, None, model).data)


def test_zero_influence_equals_text_free_path():
    rng = make_rng(13)
    cfg = tiny_config()
    model = randomize(TstModel("full", cfg), rng)
    w = random_window(rng, 4, cfg)
    gated = tst_forward(w, None, model, influence_override=np.zeros((4, 3))).data
    plain = model.text_free(collate([model.sample(w)])).data[0]
    assert np.array_equal(gated, plain)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(VARIANTS))
def test_sensor_permutation_equivariance(seed, kind):
    rng = make_rng(seed)
    cfg = tiny_config()
    model = randomize(TstModel(kind, cfg), rng)
    w = random_window(rng, 5, cfg)
    perm = rng.permutation(5)
    aff = dataclasses.replace(
        w.affected,
        sensor_indices=w.affected.sensor_indices[perm],
        D=w.affected.D[perm],
        adjacency=w.affected.adjacency[np.ix_(perm, perm)],
    )
    wp = dataclasses.replace(w, history=w.history[perm], target=w.target[perm], affected=aff)
    np.testing.assert_allclose(tst_forward(wp, None, model).data, tst_forward(w, None, model).data[perm], atol=1e-12)


def test_forward_is_deterministic():
    cfg = tiny_config(seed=4)
    w = random_window(make_rng(1), 4, cfg)
    a = tst_forward(w, None, TstModel("full", cfg)).data
    b = tst_forward(w, None, TstModel("full", cfg)).data
    assert np.array_equal(a, b)


def test_padded_batch_matches_single_windows():
    rng = make_rng(14)
    cfg = tiny_config()
    model = randomize(TstModel("full", cfg), rng)
    ws = [random_window(rng, m, cfg, event_id=f"E{m}") for m in (2, 5, 3)]
    batched = model.predict(ws)
    for w, p in zip(ws, batched):
        np.testing.assert_allclose(p, tst_forward(w, None, model).data, atol=1e-12)


# --- variants ------------------------------------------------------------------


def test_variant_parameter_sets_differ():
    cfg = tiny_config()
    names = {k: set(make_variant(k, cfg).params) for k in VARIANTS}
    assert "att_Wq" not in names["EF"] and "att_Wq" not in names["no_TT"]
    assert "f_q" not in names["LF"] and "W_cat" in names["no_TS"]
    assert "lin_W" in names["no_STE"] and "st_W1" not in names["no_STE"]
    assert names["no_finetune"] == names["full"]
    assert not make_variant("no_finetune", cfg).encoder.adapter_W.requires_grad


def test_full_and_no_tt_agree_when_categories_identical():
    rng = make_rng(15)
    cfg = tiny_config()
    full = randomize(TstModel("full", cfg), rng)
    no_tt = TstModel("no_TT", cfg)
    for name, p in full.params.items():
        if name in no_tt.params and no_tt.params[name].shape == p.shape:
            no_tt.params[name].data[:] = p.data
    Wv, Wf = full.params["att_Wv"].data, full.params["fuse_W"].data
    # pooled C through Wv then the text block of fuse_W, time block unchanged
    no_tt.params["fuse_W"].data[:] = np.vstack([Wv @ Wf[: cfg.d_g], Wf[cfg.d_g :]])
    same = TextContext("E", {k: "north gate sellout" for k in CATEGORY_KEYS})
    w = random_window(rng, 4, cfg, ctx=same)
    np.testing.assert_allclose(tst_forward(w, None, full).data, tst_forward(w, None, no_tt).data, atol=1e-12)


def test_no_ts_has_no_influence():
    cfg = tiny_config()
    w = random_window(make_rng(16), 3, cfg)
    assert make_variant("no_TS", cfg).introspect(w)["influence"] is None
    probe = make_variant("full", cfg).introspect(w)
    assert np.array(probe["influence"]).shape == (3, 3)
    assert np.array(probe["alpha"]).shape == (3, 3)


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        make_variant("bogus")


def test_file_backed_st_source_requires_vectors(tmp_path):
    cfg = tiny_config(st_source="file_backed")
    model = TstModel("full", cfg)
    w = random_window(make_rng(17), 3, cfg)
    with pytest.raises(MissingEmbeddingError):
        model.sample(w)
    path = tmp_path / "st.jsonl"
    path.write_text(json.dumps({"window_id": w.window_id, "vectors": np.ones((3, 4)).tolist()}) + "\n")
    model.load_st_vectors(path)
    assert tst_forward(w, None, model).shape == (3, 3)


# --- training --------------------------------------------------------------------


@pytest.fixture(scope="module")
def desk_windows():
    world = synth_generate(SynthConfig(), seed=0)
    ws = build_windows(world.graph, world.flows, world.events, 3.0, 2, contexts=world.texts)
    return ws, world


def test_lr_zero_leaves_parameters(desk_windows):
    ws, _ = desk_windows
    cfg = dataclasses.replace(tiny_config(history_steps=12, horizon=12, d_h=8), lr=0.0, epochs=1, normalize=True)
    model = TstModel("full", cfg)
    before = {k: v.data.copy() for k, v in model.all_params().items()}
    train(ws[:100], model=model)
    assert all(np.array_equal(before[k], v.data) for k, v in model.all_params().items())


def test_training_reduces_loss_and_is_reproducible(desk_windows):
    ws, _ = desk_windows
    cfg = tiny_config(history_steps=12, horizon=12, d_h=16, normalize=True, epochs=5, lr=3e-3)
    r1 = train(ws, config=cfg)
    r2 = train(ws, config=cfg)
    assert r1.loss_trace[-1] < r1.loss_trace[0]
    assert r1.loss_trace == r2.loss_trace
    assert len(r1.loss_trace) == 5


@pytest.mark.parametrize("kind,moves", [("full", True), ("no_finetune", False)])
def test_adapter_trains_only_when_finetuned(desk_windows, kind, moves):
    ws, _ = desk_windows
    cfg = tiny_config(history_steps=12, horizon=12, d_h=8, normalize=True, epochs=1)
    model = TstModel(kind, cfg)
    W0 = model.encoder.adapter_W.data.copy()
    train(ws[:64], model=model)
    assert (not np.array_equal(model.encoder.adapter_W.data, W0)) == moves


def test_training_aborts_on_overflow(desk_windows):
    ws, _ = desk_windows
    cfg = tiny_config(history_steps=12, horizon=12, d_h=8, epochs=1)
    model = TstModel("full", cfg)
    model.params["head_W"].data[:] = 1e307
    model.params["st_b1"].data[:] = 1e307
    with np.errstate(all="ignore"), pytest.raises(TrainingAborted) as info:
        train(ws[:10], model=model)
    assert info.value.epoch == 0 and info.value.batch == 0


def test_checkpoint_round_trip(tmp_path, desk_windows):
    ws, _ = desk_windows
    cfg = tiny_config(history_steps=12, horizon=12, d_h=8, normalize=True, epochs=1)
    model = TstModel("LF", cfg)
    train(ws[:50], model=model)
    save_checkpoint(model, tmp_path / "ck.json")
    back = load_checkpoint(tmp_path / "ck.json", cfg)
    assert back.kind == "LF" and back.scaler == model.scaler
    for a, b in zip(model.predict(ws[:5]), back.predict(ws[:5])):
        assert np.array_equal(a, b)
    with pytest.raises(DimensionError):
        load_checkpoint(tmp_path / "ck.json", dataclasses.replace(cfg, d_st=6))


def test_introspection_dump(tmp_path):
    cfg = tiny_config()
    rng = make_rng(18)
    ws = [random_window(rng, 3, cfg, event_id=f"E{i}") for i in range(3)]
    n = dump_introspection(TstModel("full", cfg), ws, tmp_path / "i.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "i.jsonl").read_text().splitlines()]
    assert n == 3 and len(rows) == 3
    assert np.allclose(np.array(rows[0]["influence"]).sum(axis=0), 1.0)


def test_noise_contexts_are_unit_gaussian_and_seeded():
    rng = make_rng(19)
    ctxs = {f"E{i}": random_context(rng, f"E{i}") for i in range(4)}
    a = noise_contexts(ctxs, EncoderSpec(d_h=16), seed=1)
    b = noise_contexts(ctxs, EncoderSpec(d_h=16), seed=1)
    assert a.kind == "file_backed"
    assert len(a.vectors) == 4 * len(CATEGORY_KEYS)
    for key, v in a.vectors.items():
        assert abs(np.linalg.norm(v) - 1) < 1e-12
        assert np.array_equal(v, b.vectors[key])
