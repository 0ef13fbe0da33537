from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clmeta.errors import DimensionError, GraphError, InvalidInputError
from clmeta.tensor import (
    Tensor,
    add,
    add_bias,
    backward,
    bmm,
    clamp_min,
    dropout,
    exp,
    gather_rows,
    grad,
    layer_norm_rows,
    log,
    matmul,
    mean_all,
    mul,
    neg,
    permute,
    put_per_row,
    recip,
    relu,
    reshape,
    rsqrt,
    scale,
    scatter_rows,
    shift,
    softmax,
    softmax_rows,
    sub,
    sum_all,
    sum_cols,
    sum_rows,
    take_per_row,
    tanh,
    tile_cols,
    tile_rows,
    transpose,
)

from .gradcheck import assert_grads_match


def test_matmul_identity():
    out = matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_hand_value():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 2))))


def test_matmul_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    assert_grads_match(lambda: sum_all(matmul(a, b)), [a, b], rtol=1e-5)


def test_backward_sum_gives_ones():
    x = Tensor([1.0, 5.0, -2.0], requires_grad=True)
    backward(sum_all(x))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_backward_sum_of_squares_closed_form():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    backward(sum_all(mul(x, x)))
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_backward_rejects_non_scalar_root():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(GraphError):
        backward(mul(x, x))


def test_gradients_accumulate_across_backward_calls():
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(sum_all(x))
    backward(sum_all(x))
    np.testing.assert_array_equal(x.grad, [2.0, 2.0])


def test_double_use_accumulation():
    # x feeds the loss via two paths; gradient is the sum of the single-path ones.
    x = Tensor([1.0, 2.0], requires_grad=True)
    backward(add(sum_all(mul(x, x)), sum_all(scale(x, 3.0))))
    np.testing.assert_allclose(x.grad, 2.0 * x.data + 3.0)

    y = Tensor([1.0, 2.0], requires_grad=True)
    backward(sum_all(mul(y, y)))
    g1 = y.grad.copy()
    y.grad = None
    backward(sum_all(scale(y, 3.0)))
    np.testing.assert_allclose(x.grad, g1 + y.grad)


def test_softmax_equal_inputs_is_uniform():
    out = softmax(Tensor([0.7, 0.7, 0.7]))
    np.testing.assert_allclose(out.data, np.ones(3) / 3, atol=1e-15)


def test_softmax_log_integers_closed_form():
    out = softmax(Tensor([np.log(1.0), np.log(2.0), np.log(3.0)]))
    np.testing.assert_allclose(out.data, [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_softmax_single_unmasked_position():
    out = softmax(Tensor([5.0, 2.0]), mask=np.array([True, False]))
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_softmax_all_masked_is_an_error():
    with pytest.raises(InvalidInputError):
        softmax(Tensor([1.0, 2.0]), mask=np.array([False, False]))


def test_softmax_masked_positions_exactly_zero_despite_huge_logits():
    mask = np.array([[True, False, True, False]])
    out = softmax_rows(Tensor([[0.0, 1e6, 1.0, 900.0]]), mask=mask)
    assert out.data[0, 1] == 0.0 and out.data[0, 3] == 0.0
    assert abs(out.data[0].sum() - 1.0) < 1e-9
    assert np.isfinite(out.data).all()


@settings(max_examples=60, deadline=None)
@given(
    n=st.integers(2, 12),
    shift_c=st.floats(-50, 50),
    seed=st.integers(0, 2**32 - 1),
)
def test_softmax_shift_invariance_and_normalization(n, shift_c, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) * 5
    mask = rng.random(n) < 0.7
    mask[rng.integers(n)] = True
    a = softmax(Tensor(x), mask=mask).data
    b = softmax(Tensor(x + shift_c), mask=mask).data
    assert abs(a[mask].sum() - 1.0) <= 1e-9
    np.testing.assert_allclose(a, b, atol=1e-9)
    assert (a[~mask] == 0.0).all()


def test_forward_determinism_is_bitwise():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 7))
    w = rng.normal(size=(7, 4))

    def run():
        h = tanh(matmul(Tensor(x), Tensor(w)))
        return softmax_rows(h).data.tobytes()

    assert run() == run()


def test_elementwise_ops_require_identical_shapes():
    for op in (add, sub, mul):
        with pytest.raises(DimensionError):
            op(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_add_bias_is_rowwise():
    x = Tensor(np.zeros((2, 3)))
    b = Tensor([1.0, 2.0, 3.0])
    np.testing.assert_array_equal(add_bias(x, b).data, [[1, 2, 3], [1, 2, 3]])


def test_gradcheck_composite_dense_stack():
    rng = np.random.default_rng(1)
    w1 = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    b1 = Tensor(rng.normal(size=4), requires_grad=True)
    w2 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    x = Tensor(rng.normal(size=(6, 5)))

    def f():
        h = tanh(add_bias(matmul(x, w1), b1))
        p = softmax_rows(matmul(h, w2))
        return neg(mean_all(log(clamp_min(p, 1e-12))))

    assert_grads_match(f, {"w1": w1, "b1": b1, "w2": w2})


def test_gradcheck_layer_norm():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    gamma = Tensor(rng.normal(size=6) + 1.0, requires_grad=True)
    beta = Tensor(rng.normal(size=6), requires_grad=True)

    def f():
        return sum_all(tanh(layer_norm_rows(x, gamma, beta)))

    assert_grads_match(f, {"x": x, "gamma": gamma, "beta": beta})


def test_gradcheck_gather_scatter_take_put():
    rng = np.random.default_rng(4)
    table = Tensor(rng.normal(size=(7, 3)), requires_grad=True)
    ids = np.array([0, 3, 3, 6, 1])
    idx = np.array([2, 0, 1, 1, 0])

    def f():
        rows = gather_rows(table, ids)
        picked = take_per_row(rows, idx)
        spread = put_per_row(picked, idx, 3)
        back = scatter_rows(spread, ids, 7)
        return sum_all(mul(back, back))

    assert_grads_match(f, {"table": table})


def test_gradcheck_bmm_permute_reshape():
    rng = np.random.default_rng(5)
    a = Tensor(rng.normal(size=(3, 2, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 4, 2)), requires_grad=True)

    def f():
        prod = bmm(a, b)
        flat = reshape(permute(prod, (1, 0, 2)), (2, 6))
        return sum_all(mul(flat, flat))

    assert_grads_match(f, {"a": a, "b": b})


def test_gradcheck_scalar_ops_and_reductions():
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(0.5, 2.0, size=(3, 4)), requires_grad=True)

    def f():
        a = recip(shift(x, 3.0))
        b = rsqrt(shift(mul(x, x), 1.0))
        c = exp(scale(x, 0.3))
        d = relu(sub(x, Tensor(np.full((3, 4), 1.2))))
        stack = add(add(a, b), add(c, d))
        t = tile_cols(sum_rows(stack), 4)
        u = tile_rows(sum_cols(stack), 3)
        return mean_all(mul(t, u))

    assert_grads_match(f, {"x": x})


def test_transpose_roundtrip_and_grad():
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    np.testing.assert_array_equal(transpose(transpose(x)).data, x.data)
    assert_grads_match(lambda: sum_all(mul(transpose(x), transpose(x))), [x])


def test_second_order_grads_cubic_closed_form():
    x = Tensor([1.0, 2.0, -3.0], requires_grad=True)
    y = sum_all(mul(mul(x, x), x))
    (g,) = grad(y, [x], create_graph=True)
    backward(sum_all(g))
    np.testing.assert_allclose(x.grad, 6.0 * x.data)


def test_second_order_through_softmax_and_layernorm():
    # Finite differences of the analytic first-order gradient.
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    gamma = Tensor(np.ones(5), requires_grad=True)
    beta = Tensor(np.zeros(5), requires_grad=True)
    w = Tensor(rng.normal(size=(5, 5)))

    def first_grad_sum():
        h = layer_norm_rows(matmul(softmax_rows(x), w), gamma, beta)
        loss = mean_all(mul(h, h))
        (gx,) = grad(loss, [x], create_graph=True)
        return sum_all(mul(gx, gx))

    assert_grads_match(first_grad_sum, {"x": x}, rtol=2e-4)


def test_no_grad_blocks_recording():
    from clmeta.tensor import no_grad

    x = Tensor([1.0, 2.0], requires_grad=True)
    with no_grad():
        y = mul(x, x)
    assert y.is_leaf and not y.requires_grad


def test_dropout_inverted_scaling_and_determinism():
    x = Tensor(np.ones((200, 50)))
    out1 = dropout(x, 0.3, np.random.default_rng(11)).data
    out2 = dropout(x, 0.3, np.random.default_rng(11)).data
    np.testing.assert_array_equal(out1, out2)
    vals = np.unique(out1)
    np.testing.assert_allclose(vals, [0.0, 1.0 / 0.7])
    assert abs(out1.mean() - 1.0) < 0.02
    assert dropout(x, 0.0, np.random.default_rng(1)) is x
