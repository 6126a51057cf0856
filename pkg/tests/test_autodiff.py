import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gcl import autodiff as ad
from gcl.errors import ContractError, DegenerateInputError, LabelError, ShapeError
from gcl.graph import from_edge_list
from gcl.selfcheck import gradient_cases

from conftest import random_graph

finite = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def fd_check(fn, inputs, tol=1e-4):
    assert ad.gradcheck(fn, inputs) < tol


# ---------------------------------------------------------------- matmul / spmm


def test_matmul_identity():
    m = ad.constant([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.matmul(ad.constant(np.eye(2)), m).values, m.values)


def test_matmul_selection_row():
    out = ad.matmul(ad.constant([[1.0, 0.0]]), ad.constant([[2.0], [5.0]]))
    assert out.values.tolist() == [[2.0]]


def test_matmul_gradient_fd(rng):
    a = ad.parameter(rng.standard_normal((3, 4)))
    b = ad.parameter(rng.standard_normal((4, 2)))
    fd_check(lambda: ad.sum_all(ad.matmul(a, b)), [a, b])


def test_matmul_gradient_closed_form(rng):
    a = ad.parameter(rng.standard_normal((3, 4)))
    b = ad.parameter(rng.standard_normal((4, 2)))
    g = rng.standard_normal((3, 2))
    ad.backward(ad.sum_all(ad.mul(ad.matmul(a, b), ad.constant(g))))
    np.testing.assert_allclose(a.grad, g @ b.values.T, atol=1e-12)
    np.testing.assert_allclose(b.grad, a.values.T @ g, atol=1e-12)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((2, 3))))


def test_spmm_identity(rng):
    x = rng.standard_normal((4, 3))
    out = ad.spmm(sp.identity(4, format="csr"), ad.constant(x))
    assert np.array_equal(out.values, x)


def test_spmm_two_node_path():
    g = from_edge_list(2, [(0, 1)])
    out = ad.spmm(g.gcn_operator, ad.constant([[1.0], [3.0]]))
    np.testing.assert_allclose(out.values, [[2.0], [2.0]], atol=1e-15)


def test_spmm_gradient_fd(rng):
    g = random_graph(rng, 5, 0.5)
    d = ad.parameter(rng.standard_normal((5, 3)))
    w = ad.constant(rng.standard_normal((5, 3)))
    fd_check(lambda: ad.sum_all(ad.mul(ad.spmm(g.gcn_operator, d), w)), [d])


def test_spmm_shape_error():
    with pytest.raises(ShapeError):
        ad.spmm(sp.identity(3, format="csr"), ad.constant(np.ones((4, 2))))


# ---------------------------------------------------------------- activations


def test_relu_values():
    assert ad.relu(ad.constant([[-1.0, 2.0]])).values.tolist() == [[0.0, 2.0]]


def test_relu_left_derivative_at_zero():
    x = ad.parameter([[0.0]])
    ad.backward(ad.sum_all(ad.relu(x)))
    assert x.grad[0, 0] == 0.0


def test_sigmoid_symmetry_point():
    assert ad.sigmoid(ad.constant([[0.0]])).values[0, 0] == 0.5


def test_sigmoid_stable_for_large_inputs():
    v = ad.sigmoid(ad.constant([[-800.0, 800.0]])).values
    assert np.all(np.isfinite(v)) and v[0, 0] == 0.0 and v[0, 1] == 1.0


def test_leaky_relu_default_slope():
    assert ad.leaky_relu(ad.constant([[-1.0, 3.0]])).values.tolist() == [[-0.2, 3.0]]


@pytest.mark.parametrize("kind", ["relu", "leaky_relu", "elu", "sigmoid", "tanh"])
def test_activation_gradients_fd(kind, rng):
    v = rng.standard_normal((4, 5))
    v[np.abs(v) < 1e-3] = 0.5  # stay clear of the kinks
    x = ad.parameter(v)
    w = ad.constant(rng.standard_normal((4, 5)))
    fd_check(lambda: ad.sum_all(ad.mul(ad.ewise(kind, x), w)), [x])


def test_ewise_unknown_kind():
    with pytest.raises(ValueError):
        ad.ewise("swish", ad.constant([[1.0]]))


# ---------------------------------------------------------------- softmax family


def test_softmax_uniform():
    assert ad.softmax_rows(ad.constant([[0.0, 0.0]])).values.tolist() == [[0.5, 0.5]]


def test_softmax_rows_sum_to_one(rng):
    p = ad.softmax_rows(ad.constant(rng.standard_normal((6, 5)) * 10)).values
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_softmax_shift_invariance(rng):
    x = rng.standard_normal((3, 4))
    a = ad.softmax_rows(ad.constant(x)).values
    b = ad.softmax_rows(ad.constant(x + np.array([[3.0], [-7.0], [100.0]]))).values
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_softmax_no_overflow():
    p = ad.softmax_rows(ad.constant([[1000.0, 0.0]])).values
    assert np.all(np.isfinite(p)) and p[0, 0] == 1.0


def test_segment_softmax_one_segment():
    out = ad.segment_softmax(ad.constant([[0.0], [0.0]]), [0, 0])
    assert out.values[:, 0].tolist() == [0.5, 0.5]


def test_segment_softmax_singleton():
    assert ad.segment_softmax(ad.constant([[-17.3]]), [0]).values[0, 0] == 1.0


def test_segment_softmax_empty():
    out = ad.segment_softmax(ad.constant(np.zeros((0, 1))), np.zeros(0, dtype=int))
    assert out.values.size == 0


def test_segment_softmax_matches_dense_oracle(rng):
    g = random_graph(rng, 4, 0.7)
    src, dst = g.attention_edges
    scores = rng.standard_normal(src.size)
    got = ad.segment_softmax(ad.constant(scores[:, None]), dst, g.n).values[:, 0]
    for v in range(g.n):
        sel = dst == v
        e = np.exp(scores[sel])
        np.testing.assert_allclose(got[sel], e / e.sum(), atol=1e-12)


def test_segment_softmax_gradient_fd(rng):
    g = random_graph(rng, 6, 0.5)
    src, dst = g.attention_edges
    e = ad.parameter(rng.standard_normal((src.size, 1)))
    w = ad.constant(rng.standard_normal((src.size, 1)))
    fd_check(lambda: ad.sum_all(ad.mul(ad.segment_softmax(e, dst, g.n), w)), [e])


def test_edge_aggregate_matches_dense(rng):
    g = random_graph(rng, 5, 0.5)
    src, dst = g.attention_edges
    w = rng.random(src.size)
    h = rng.standard_normal((5, 3))
    dense = np.zeros((5, 5))
    np.add.at(dense, (dst, src), w)
    got = ad.edge_aggregate(ad.constant(w[:, None]), ad.constant(h), src, dst, 5).values
    np.testing.assert_allclose(got, dense @ h, atol=1e-12)


# ---------------------------------------------------------------- losses


def test_cross_entropy_uniform_is_log_c():
    loss = ad.masked_cross_entropy(ad.constant(np.zeros((3, 4))), [0, 1, 3], [0, 1, 2])
    assert loss.item() == pytest.approx(math.log(4), abs=1e-12)


def test_cross_entropy_peaked_is_zero():
    logits = np.zeros((2, 3))
    logits[0, 1] = logits[1, 2] = 100.0
    assert ad.masked_cross_entropy(ad.constant(logits), [1, 2], [0, 1]).item() < 1e-40


def test_cross_entropy_gradient_fd(rng):
    logits = ad.parameter(rng.standard_normal((6, 3)))
    labels = rng.integers(0, 3, size=6)
    mask = np.array([True, False, True, True, False, True])
    fd_check(lambda: ad.masked_cross_entropy(logits, labels, mask), [logits])


def test_cross_entropy_only_reads_masked_labels():
    loss = ad.masked_cross_entropy(ad.constant(np.zeros((2, 2))), [0, 99], [0])
    assert loss.item() == pytest.approx(math.log(2))


def test_cross_entropy_empty_mask():
    with pytest.raises(DegenerateInputError):
        ad.masked_cross_entropy(ad.constant(np.zeros((2, 2))), [0, 1], np.zeros(2, dtype=bool))


@pytest.mark.parametrize("bad", [-1, 2])
def test_cross_entropy_label_out_of_range(bad):
    with pytest.raises(LabelError):
        ad.masked_cross_entropy(ad.constant(np.zeros((2, 2))), [0, bad], [0, 1])


def test_mse_values():
    assert ad.mse(ad.constant([[1.0, 2.0]]), [[1.0, 2.0]]).item() == 0.0
    assert ad.mse(ad.constant([[2.0]]), [[0.0]]).item() == 4.0


def test_mse_gradient_analytic(rng):
    a = ad.parameter(rng.standard_normal((3, 4)))
    b = rng.standard_normal((3, 4))
    ad.backward(ad.mse(a, b))
    np.testing.assert_allclose(a.grad, 2 * (a.values - b) / 12, atol=1e-12)


def test_mse_shape_error():
    with pytest.raises(ShapeError):
        ad.mse(ad.constant(np.ones((2, 2))), np.ones((2, 3)))


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones(rng):
    x = ad.parameter(rng.standard_normal((3, 2)))
    ad.backward(ad.sum_all(x))
    assert np.array_equal(x.grad, np.ones((3, 2)))


def test_backward_twice_accumulates(rng):
    x = ad.parameter(rng.standard_normal((2, 2)))
    loss = ad.sum_all(ad.mul(x, x))
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    np.testing.assert_allclose(x.grad, 2 * first, atol=1e-15)


def test_backward_relu_chain_fd(rng):
    v = rng.standard_normal((3, 3))
    v[np.abs(v) < 1e-3] = 0.3
    x = ad.parameter(v)
    fd_check(lambda: ad.sum_all(ad.relu(x)), [x])


def test_backward_rejects_non_scalar():
    with pytest.raises(ContractError):
        ad.backward(ad.parameter(np.ones((2, 1))))


def test_shared_subexpression_counted_once_per_path():
    # y = x * x reused twice: L = sum(y) + sum(y * x) -> dL/dx = 2x + 3x^2
    x = ad.parameter([[1.0, -2.0, 0.5]])
    y = ad.mul(x, x)
    loss = ad.add(ad.sum_all(y), ad.sum_all(ad.mul(y, x)))
    ad.backward(loss)
    v = x.values
    np.testing.assert_allclose(x.grad, 2 * v + 3 * v**2, atol=1e-12)


def test_grad_shape_tracks_values(rng):
    x = ad.parameter(rng.standard_normal((4, 3)))
    out = ad.matmul(x, ad.constant(np.ones((3, 2))))
    ad.backward(ad.sum_all(out))
    assert x.grad.shape == x.values.shape and out.grad.shape == out.values.shape


# ---------------------------------------------------------------- adam


def test_adam_zero_gradient_leaves_parameter():
    p = ad.parameter([[1.5, -2.0]])
    before = p.values.copy()
    ad.adam_step([p], [ad.AdamState.like(p)], lr=0.1)
    assert np.array_equal(p.values, before)


def test_adam_first_step_moves_by_lr():
    # scalar hand simulation: g = 2, m = 0.2, v = 0.004, m_hat = 2, v_hat = 4
    w = ad.parameter([[1.0]])
    state = ad.AdamState.like(w)
    ad.backward(ad.sum_all(ad.mul(w, w)))
    ad.adam_step([w], [state], lr=0.1)
    assert w.values[0, 0] == pytest.approx(1.0 - 0.1 * 2 / (2 + 1e-8), abs=1e-15)
    assert state.t == 1
    assert np.all(w.grad == 0)


def test_adam_quadratic_monotone_after_warmup():
    w = ad.parameter([[3.0]])
    opt = ad.Adam([w], lr=0.05)
    losses = []
    for _ in range(40):
        loss = ad.sum_all(ad.mul(w, w))
        losses.append(loss.item())
        ad.backward(loss)
        opt.step()
    assert all(b < a for a, b in zip(losses[2:], losses[3:]))


def test_adam_matches_scalar_recurrence(rng):
    w0 = rng.standard_normal((2, 2))
    w = ad.parameter(w0.copy())
    opt = ad.Adam([w], lr=0.01)
    ref, m, v = w0.copy(), 0.0, 0.0
    for t in range(1, 6):
        ad.backward(ad.sum_all(ad.mul(ad.mul(w, w), w)))
        opt.step()
        g = 3 * ref**2
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.01 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    np.testing.assert_allclose(w.values, ref, atol=1e-14)


# ---------------------------------------------------------------- properties


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite))
def test_softmax_property(x):
    p = ad.softmax_rows(ad.constant(x)).values
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=1, max_size=12), st.integers(1, 4), st.integers(0, 10_000))
def test_segment_softmax_property(scores, k, seed):
    seg = np.random.default_rng(seed).integers(0, k, size=len(scores))
    p = ad.segment_softmax(ad.constant(np.array(scores)[:, None]), seg, k).values[:, 0]
    assert np.all(p >= 0)
    for s in np.unique(seg):
        assert abs(p[seg == s].sum() - 1.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite), st.data())
def test_cross_entropy_nonnegative(x, data):
    labels = data.draw(st.lists(st.integers(0, x.shape[1] - 1), min_size=x.shape[0], max_size=x.shape[0]))
    assert ad.masked_cross_entropy(ad.constant(x), labels, np.arange(x.shape[0])).item() >= 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_every_operation_gradchecks(seed):
    for name, (fn, inputs) in gradient_cases(np.random.default_rng(seed)).items():
        assert ad.gradcheck(fn, inputs) < 1e-4, name
