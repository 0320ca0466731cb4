"""Gradient and algebra checks for the tensor substrate.

Every differentiable primitive is checked against central finite
differences in float64; softmax gets its algebraic identities checked
directly.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from insgen import autodiff as ad

from conftest import central_difference_grad, max_rel_error


def _gradcheck(build_loss, params, tol=1e-6, eps=1e-6):
    """Compare tape gradients of build_loss() against the finite-difference oracle."""
    with ad.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    for p in params:
        numeric = central_difference_grad(lambda: _loss_value(build_loss), p.data, eps=eps)
        assert p.grad is not None
        assert max_rel_error(p.grad, numeric) < tol


def _loss_value(build_loss) -> float:
    return build_loss().item()


def test_matmul_identity():
    a = ad.tensor(np.arange(9.0).reshape(3, 3))
    out = ad.matmul(ad.tensor(np.eye(3)), a)
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_hand_value():
    out = ad.matmul(ad.tensor([[1.0, 2.0], [3.0, 4.0]]), ad.tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        ad.matmul(ad.tensor(np.zeros((2, 3))), ad.tensor(np.zeros((2, 2))))


def test_matmul_gradcheck():
    rng = np.random.default_rng(0)
    a = ad.tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = ad.tensor(rng.normal(size=(5, 3)), requires_grad=True)
    _gradcheck(lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])


def test_softmax_symmetry():
    out = ad.softmax(ad.tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-15)


def test_softmax_hand_value():
    out = ad.softmax(ad.tensor([-1.0, 0.0, -1.0]))
    np.testing.assert_allclose(out.data, [0.21194, 0.57612, 0.21194], atol=1e-5)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance_and_normalization(xs, c):
    base = ad.softmax(ad.tensor(np.array(xs))).data
    shifted = ad.softmax(ad.tensor(np.array(xs) + c)).data
    np.testing.assert_allclose(base, shifted, atol=1e-12)
    assert np.all(base >= 0)
    assert abs(base.sum() - 1.0) < 1e-12


def test_softmax_empty_axis_errors():
    with pytest.raises(ad.ShapeError):
        ad.softmax(ad.tensor(np.zeros((0,))))


def test_softmax_gradcheck():
    rng = np.random.default_rng(1)
    x = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    _gradcheck(lambda: ad.tsum(ad.mul(ad.softmax(x, axis=-1), w)), [x])


def test_log_softmax_matches_log_of_softmax():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 5))
    np.testing.assert_allclose(
        ad.log_softmax(ad.tensor(x)).data, np.log(ad.softmax(ad.tensor(x)).data), atol=1e-12
    )


def test_log_softmax_gradcheck():
    rng = np.random.default_rng(3)
    x = ad.tensor(rng.normal(size=(2, 6)), requires_grad=True)
    w = rng.normal(size=(2, 6))
    _gradcheck(lambda: ad.tsum(ad.mul(ad.log_softmax(x, axis=-1), w)), [x])


def test_attention_single_position_returns_value_row():
    rng = np.random.default_rng(4)
    q = ad.tensor(rng.normal(size=(1, 4)))
    k = ad.tensor(rng.normal(size=(1, 4)))
    v = ad.tensor(rng.normal(size=(1, 4)))
    out = ad.attention(q, k, v, num_heads=2)
    np.testing.assert_allclose(out.data, v.data, atol=1e-12)


def test_attention_zero_logits_averages_values():
    v = ad.tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    q = ad.tensor(np.zeros((2, 2)))
    k = ad.tensor(np.zeros((3, 2)))
    out = ad.attention(q, k, v)
    np.testing.assert_allclose(out.data, np.tile(v.data.mean(axis=0), (2, 1)), atol=1e-12)


def test_attention_gradcheck_two_heads():
    rng = np.random.default_rng(5)
    q = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    k = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    v = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    w = rng.normal(size=(3, 4))
    _gradcheck(
        lambda: ad.tsum(ad.mul(ad.attention(q, k, v, num_heads=2), w)), [q, k, v], tol=1e-5
    )


def test_attention_mask_blocks_keys():
    rng = np.random.default_rng(6)
    k = ad.tensor(rng.normal(size=(3, 2)))
    v = ad.tensor(rng.normal(size=(3, 2)))
    q = ad.tensor(rng.normal(size=(1, 2)))
    mask = np.array([[True, True, False]])
    out = ad.attention(q, k, v, mask=mask)
    out_trunc = ad.attention(q, ad.tensor(k.data[:2]), ad.tensor(v.data[:2]))
    np.testing.assert_allclose(out.data, out_trunc.data, atol=1e-9)


def test_attention_mask_shape_mismatch_errors():
    q = ad.tensor(np.zeros((2, 2)))
    kv = ad.tensor(np.zeros((3, 2)))
    with pytest.raises(ad.ShapeError):
        ad.attention(q, kv, kv, mask=np.ones((5, 4), dtype=bool))


def test_attention_masked_gradcheck():
    rng = np.random.default_rng(7)
    q = ad.tensor(rng.normal(size=(2, 4)), requires_grad=True)
    k = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    v = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    mask = np.array([[True, False, True], [True, True, True]])
    w = rng.normal(size=(2, 4))
    _gradcheck(
        lambda: ad.tsum(ad.mul(ad.attention(q, k, v, num_heads=2, mask=mask), w)),
        [q, k, v],
        tol=1e-5,
    )


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(8)
    x = ad.tensor(rng.normal(size=(3, 5)), requires_grad=True)
    gain = ad.tensor(rng.normal(size=5), requires_grad=True)
    bias = ad.tensor(rng.normal(size=5), requires_grad=True)
    w = rng.normal(size=(3, 5))
    _gradcheck(lambda: ad.tsum(ad.mul(ad.layer_norm(x, gain, bias), w)), [x, gain, bias])


def test_embedding_gradcheck_scatter():
    rng = np.random.default_rng(9)
    table = ad.tensor(rng.normal(size=(6, 3)), requires_grad=True)
    ids = np.array([[0, 2, 2], [5, 1, 0]])
    w = rng.normal(size=(2, 3, 3))
    _gradcheck(lambda: ad.tsum(ad.mul(ad.embedding(table, ids), w)), [table])


def test_adjacent_pairs_layout_and_grad():
    rng = np.random.default_rng(10)
    x = ad.tensor(rng.normal(size=(4, 3)), requires_grad=True)
    out = ad.adjacent_pairs(x)
    assert out.shape == (3, 6)
    np.testing.assert_array_equal(out.data[1], np.concatenate([x.data[1], x.data[2]]))
    w = rng.normal(size=(3, 6))
    _gradcheck(lambda: ad.tsum(ad.mul(ad.adjacent_pairs(x), w)), [x])


def test_max_over_axis_grad_routes_to_argmax():
    x = ad.tensor(np.array([[1.0, -2.0], [0.0, 3.0]]), requires_grad=True)
    out = ad.max_over_axis(x, axis=0)
    np.testing.assert_array_equal(out.data, [1.0, 3.0])
    with ad.Tape() as tape:
        loss = ad.tsum(ad.max_over_axis(x, axis=0))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [[1.0, 0.0], [0.0, 1.0]])


def test_take_gradcheck():
    rng = np.random.default_rng(11)
    x = ad.tensor(rng.normal(size=(3, 4)), requires_grad=True)
    idx = (np.array([0, 2, 2]), np.array([1, 3, 3]))
    w = rng.normal(size=3)
    _gradcheck(lambda: ad.tsum(ad.mul(ad.take(x, idx), w)), [x])


def test_logsumexp_and_stack_gradcheck():
    rng = np.random.default_rng(12)
    a = ad.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = ad.tensor(rng.normal(size=(2, 3)), requires_grad=True)
    w = rng.normal(size=(2, 3))
    _gradcheck(
        lambda: ad.tsum(ad.mul(ad.logsumexp(ad.stack([a, b], axis=0), axis=0), w)), [a, b]
    )


def test_backward_sum_gives_ones():
    x = ad.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_sum_of_squares():
    x = ad.tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(ad.mul(x, x))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_accumulates_until_zeroed():
    x = ad.tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(x)
    tape.backward(loss)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * np.ones(3))
    x.zero_grad()
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_backward_rejects_nonscalar_loss():
    x = ad.tensor(np.ones(3), requires_grad=True)
    with ad.Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ValueError, match="scalar"):
        tape.backward(y)


def test_shared_input_grads_do_not_alias():
    # z = x + x: both branches feed the same tensor; grads must sum to 2.
    x = ad.tensor(np.ones(4), requires_grad=True)
    with ad.Tape() as tape:
        loss = ad.tsum(ad.add(x, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * np.ones(4))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_ops_stay_finite_on_bounded_inputs(seed):
    rng = np.random.default_rng(seed)
    x = ad.tensor(rng.uniform(-1e3, 1e3, size=(3, 4)))
    y = ad.tensor(rng.uniform(-1e3, 1e3, size=(4, 3)))
    gain = ad.tensor(np.ones(4))
    bias = ad.tensor(np.zeros(4))
    for out in (
        ad.matmul(x, y),
        ad.softmax(x, axis=-1),
        ad.log_softmax(x, axis=-1),
        ad.layer_norm(x, gain, bias),
        ad.attention(x, x, x, num_heads=2),
        ad.relu(x),
        ad.tanh(x),
    ):
        assert np.all(np.isfinite(out.data))
