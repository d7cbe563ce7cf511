import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eventflow.numerics import (
    AdamState,
    DimensionError,
    NumericalError,
    Tensor,
    adam_step,
    add,
    broadcast_to,
    concat,
    embedding_init,
    gather,
    grad_check,
    linear_init,
    make_rng,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    smooth_l1,
    softmax,
    softmax_rows,
    sub,
    tanh,
    tensor,
    total,
    transpose,
)

dims = st.integers(1, 8)
seeds = st.integers(0, 2**32 - 1)


def rand(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


# --- matmul ---------------------------------------------------------------


def test_matmul_identity():
    out = matmul(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert out.data.tolist() == [[1, 2], [3, 4]]


def test_matmul_masking_row():
    out = matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0], [7.0]]))
    assert out.data.tolist() == [[5], [0]]


def triple_loop(a, b):
    m, k = len(a), len(a[0])
    n = len(b[0])
    return [[sum(a[i][p] * b[p][j] for p in range(k)) for j in range(n)] for i in range(m)]


def test_matmul_random_matches_loop():
    rng = make_rng(0, "mm")
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    assert np.max(np.abs(matmul(a, b).data - np.array(triple_loop(a.tolist(), b.tolist())))) < 1e-12


@settings(max_examples=60, deadline=None)
@given(dims, dims, dims, seeds)
def test_matmul_loop_oracle_property(m, k, n, seed):
    rng = make_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    assert np.max(np.abs(matmul(a, b).data - np.array(triple_loop(a.tolist(), b.tolist())))) < 1e-12


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_batched_matmul_broadcasts_weights():
    rng = make_rng(1)
    x, W = rng.normal(size=(5, 3, 4)), rng.normal(size=(4, 2))
    np.testing.assert_allclose(matmul(x, W).data, np.einsum("bik,kj->bij", x, W), atol=1e-12)


# --- softmax ----------------------------------------------------------------


def test_softmax_uniform():
    np.testing.assert_allclose(softmax_rows(np.zeros((1, 3))).data, [[1 / 3] * 3], atol=1e-15)


def test_softmax_shift_invariance():
    row = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(softmax_rows(row + 5).data, softmax_rows(row).data, atol=1e-15)


def test_softmax_log_ratio():
    out = softmax_rows(np.log([[1.0, 2.0, 3.0]])).data
    np.testing.assert_allclose(out, [[1 / 6, 1 / 3, 1 / 2]], atol=1e-15)


@settings(max_examples=80, deadline=None)
@given(dims, dims, seeds, st.floats(0.1, 30))
def test_softmax_rows_simplex(r, c, seed, spread):
    x = make_rng(seed).normal(size=(r, c)) * spread
    out = softmax_rows(x).data
    assert np.all(np.abs(out.sum(axis=1) - 1) < 1e-12)
    assert np.all((out > 0) & (out <= 1))
    if c > 1:
        assert np.all(out < 1) or spread > 10  # saturation is only possible for wide logits


def test_softmax_large_logits_stable():
    out = softmax(np.array([1000.0, 1000.0, -1000.0])).data
    np.testing.assert_allclose(out, [0.5, 0.5, 0.0], atol=1e-15)


# --- smooth L1 --------------------------------------------------------------


def test_smooth_l1_zero():
    assert smooth_l1(np.ones(4), np.ones(4)).item() == 0.0


@pytest.mark.parametrize("d,expected", [(0.5, 0.125), (2.0, 1.5), (-2.0, 1.5)])
def test_smooth_l1_piecewise(d, expected):
    assert smooth_l1(np.array([d]), np.array([0.0])).item() == pytest.approx(expected, abs=1e-15)


def test_smooth_l1_mask_ignores_padding():
    pred = np.array([[1.0, 50.0]])
    target = np.array([[0.0, 0.0]])
    masked = smooth_l1(pred, target, mask=np.array([[1.0, 0.0]])).item()
    assert masked == pytest.approx(0.5)


def test_smooth_l1_shape_mismatch():
    with pytest.raises(DimensionError):
        smooth_l1(np.ones(3), np.ones(4))


def test_smooth_l1_gradcheck_off_kink():
    rng = make_rng(2)
    d = rng.uniform(0.2, 0.8, 6) * rng.choice([-1, 1], 6)
    d[:3] *= 4  # some in the linear region
    target = rng.normal(size=6)
    x = Tensor(target + d, requires_grad=True)
    assert grad_check(lambda: smooth_l1(x, target), [x]) < 1e-6


# --- Adam -------------------------------------------------------------------


def test_adam_zero_grads_leave_params():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    st_ = AdamState()
    adam_step([p], [np.zeros(2)], st_)
    assert p.data.tolist() == [1.0, -2.0]
    assert np.all(st_.first_moment[0] == 0) and np.all(st_.second_moment[0] == 0)


def test_adam_first_step_hand_value():
    p = Tensor(np.array([0.0]), requires_grad=True)
    adam_step([p], [np.array([1.0])], AdamState(lr=1e-3))
    # bias-corrected m = v = 1, so the step is lr / (1 + eps)
    assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
    assert p.data[0] == pytest.approx(-9.99999e-4, rel=1e-5)


def test_adam_second_step_not_larger():
    p = Tensor(np.array([0.0]), requires_grad=True)
    state = AdamState()
    adam_step([p], [np.array([1.0])], state)
    d1 = p.data[0]
    adam_step([p], [np.array([1.0])], state)
    d2 = p.data[0] - d1
    assert abs(d2) <= abs(d1) * 1.01
    assert state.step_count == 2


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 5))
def test_adam_lr_zero_is_identity(seed, steps):
    rng = make_rng(seed)
    ps = [rand(rng, 3, 2), rand(rng, 4)]
    before = [p.data.copy() for p in ps]
    state = AdamState(lr=0.0)
    for k in range(steps):
        adam_step(ps, [rng.normal(size=p.shape) for p in ps], state)
        assert state.step_count == k + 1
        assert all(m.shape == p.shape for m, p in zip(state.first_moment, ps))
    for p, b in zip(ps, before):
        assert np.array_equal(p.data, b)


def test_adam_rejects_wrong_grad_shape():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(DimensionError):
        adam_step([p], [np.zeros(4)], AdamState())


# --- grad_check and per-op backward rules ----------------------------------


def test_grad_check_quadratic_exact():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    assert grad_check(lambda: total(mul(x, x)), [x]) < 1e-8


def test_grad_check_needs_scalar():
    x = Tensor(np.ones(2), requires_grad=True)
    with pytest.raises(DimensionError):
        grad_check(lambda: mul(x, x), [x])


OPS = {
    "add_broadcast": (lambda a, b: total(mul(add(a, b), add(a, b))), [(3, 4), (4,)]),
    "sub": (lambda a, b: total(mul(sub(a, b), a)), [(2, 3), (2, 3)]),
    "mul_broadcast": (lambda a, b: total(mul(mul(a, b), a)), [(2, 3), (1, 3)]),
    "scale": (lambda a: total(mul(scale(a, -2.5), a)), [(3,)]),
    "relu": (lambda a: total(mul(relu(a), a)), [(4, 2)]),
    "sigmoid": (lambda a: total(sigmoid(mul(a, a))), [(3, 3)]),
    "tanh": (lambda a: total(mul(tanh(a), a)), [(5,)]),
    "matmul_batched": (lambda a, b: total(mul(matmul(a, b), matmul(a, b))), [(2, 3, 4), (4, 2)]),
    "transpose": (lambda a, b: total(mul(transpose(a), b)), [(2, 3, 4), (2, 4, 3)]),
    "reshape": (lambda a, b: total(mul(reshape(a, (6, 2)), b)), [(3, 4), (6, 2)]),
    "broadcast_to": (lambda a, b: total(mul(broadcast_to(a, (5, 3)), b)), [(1, 3), (5, 3)]),
    "concat": (lambda a, b, c: total(mul(concat([a, b], axis=-1), c)), [(2, 3), (2, 2), (2, 5)]),
    "softmax_last": (lambda a, b: total(mul(softmax(a, axis=-1), b)), [(3, 4), (3, 4)]),
    "softmax_first": (lambda a, b: total(mul(softmax(a, axis=0), b)), [(3, 4), (3, 4)]),
    "mean_axis": (lambda a: total(mul(mean(a, axis=1), mean(a, axis=1))), [(3, 4)]),
    "mean_keepdims": (lambda a, b: total(mul(mean(a, axis=-2, keepdims=True), b)), [(2, 3, 4), (2, 1, 4)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=8, deadline=None)
@given(seed=seeds)
def test_op_backward_matches_finite_differences(name, seed):
    fn, shapes = OPS[name]
    rng = make_rng(seed, name)
    xs = [rand(rng, *s) for s in shapes]
    if name == "relu":
        # keep away from the kink at zero
        xs[0].data = np.where(np.abs(xs[0].data) < 1e-2, 0.5, xs[0].data)
    assert grad_check(lambda: fn(*xs), xs) < 1e-4


def test_gather_backward_scatters_rows():
    table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
    out = gather(table, np.array([1, 1, 3]))
    total(out).backward()
    assert table.grad.tolist() == [[0, 0, 0], [2, 2, 2], [0, 0, 0], [1, 1, 1]]


def test_concat_matches_numpy():
    rng = make_rng(3)
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    assert np.array_equal(concat([a, b], axis=-1).data, np.concatenate([a, b], axis=-1))


def test_elementwise_loop_oracle():
    rng = make_rng(4)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    out = add(mul(a, b), a).data
    for i in range(3):
        for j in range(5):
            assert abs(out[i, j] - (a[i, j] * b[i, j] + a[i, j])) < 1e-12


def test_gradient_shapes_match_tensors():
    rng = make_rng(5)
    a, b = rand(rng, 2, 3), rand(rng, 3)
    total(mul(add(a, b), a)).backward()
    assert a.grad.shape == a.shape and b.grad.shape == b.shape


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = mul(x, x)
    total(add(y, y)).backward()
    assert x.grad[0] == pytest.approx(12.0)


def test_non_finite_result_raises():
    with np.errstate(over="ignore"), pytest.raises(NumericalError):
        mul(np.array([1e308]), np.array([1e308]))


def test_op_on_nan_input_raises():
    with pytest.raises(NumericalError):
        add(tensor(np.array([np.nan])), 1.0)


# --- seeding and init -------------------------------------------------------


def test_make_rng_streams_are_reproducible_and_distinct():
    a = make_rng(7, "init", "full").normal(size=5)
    b = make_rng(7, "init", "full").normal(size=5)
    c = make_rng(7, "init", "EF").normal(size=5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_init_ranges():
    rng = make_rng(0)
    W = linear_init(rng, 16, 5)
    assert W.shape == (16, 5) and np.all(np.abs(W) <= 1 / math.sqrt(16))
    E = embedding_init(rng, 2000, 4)
    assert abs(E.std() - 0.02) < 0.002
