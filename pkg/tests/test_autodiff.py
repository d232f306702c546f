"""Tape engine: primitive values, gradients and the finite-difference oracle."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from senerf import autodiff as ad


def test_add_elementwise():
    out = ad.record("add", ad.Value([1.0, 2.0]), ad.Value([3.0, 4.0]))
    np.testing.assert_allclose(out.data, [4.0, 6.0])


def test_mul_by_zero_has_zero_gradient():
    x = ad.Parameter(np.array([3.0, -2.0], dtype=np.float64), "x")
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.mul(x, 0.0))
    tape.backward(out)
    assert float(out.data) == 0.0
    np.testing.assert_array_equal(x.grad, np.zeros(2))


def test_shape_mismatch_reports_op_and_shapes():
    with pytest.raises(ad.AutodiffError, match=r"add.*\(2,\).*\(3,\)"):
        ad.add(ad.Value([1.0, 2.0]), ad.Value([1.0, 2.0, 3.0]))


def test_unknown_kind_rejected():
    with pytest.raises(ad.AutodiffError, match="unknown op-kind"):
        ad.record("conv2d", ad.Value([1.0]))


def test_sum_of_squares_gradient():
    x = ad.Parameter(np.array([1.0, 2.0, 3.0], dtype=np.float64), "x")
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.mul(x, x))
    tape.backward(out)
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])


def test_sigmoid_at_zero_value_and_gradient():
    z = ad.Parameter(np.array(0.0, dtype=np.float64), "z")
    with ad.Tape() as tape:
        out = ad.sigmoid(z)
    tape.backward(out)
    assert float(out.data) == pytest.approx(0.5)
    assert float(z.grad) == pytest.approx(0.25)


def test_bilinear_gather_node_identity():
    grid = ad.Value(np.arange(12.0).reshape(3, 4))
    out = ad.bilinear_gather(grid, np.array([[2.0, 3.0], [0.0, 0.0]]))
    np.testing.assert_allclose(out.data, [11.0, 0.0])


def test_bilinear_cell_center_spreads_gradient_equally():
    grid = ad.Parameter(np.zeros((2, 2), dtype=np.float64), "g")
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.bilinear_gather(grid, np.array([[0.5, 0.5]])))
    tape.backward(out)
    np.testing.assert_allclose(grid.grad, np.full((2, 2), 0.25))


def test_backward_requires_scalar():
    x = ad.Parameter(np.ones(3), "x")
    with ad.Tape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ad.AutodiffError, match="scalar"):
        tape.backward(y)


def test_backward_on_empty_tape_leaves_gradients_zero():
    x = ad.Parameter(np.ones(4, dtype=np.float64), "x")
    x.reset_grad()
    with ad.Tape() as tape:
        pass
    tape.backward(ad.Value(np.array(1.0)))
    np.testing.assert_array_equal(x.grad, np.zeros(4))


def test_gradient_accumulates_across_backward_calls():
    x = ad.Parameter(np.array([1.0, 1.0], dtype=np.float64), "x")
    for _ in range(2):
        with ad.Tape() as tape:
            out = ad.reduce_sum(ad.mul(x, x))
        tape.backward(out)
    np.testing.assert_allclose(x.grad, [4.0, 4.0])


def test_fixed_replay_is_bit_reproducible():
    rng = np.random.default_rng(0)
    x = ad.Parameter(rng.normal(size=(5, 3)), "x", dtype=np.float64)
    w = ad.Parameter(rng.normal(size=(3, 2)), "w", dtype=np.float64)

    def run():
        x.reset_grad()
        w.reset_grad()
        with ad.Tape() as tape:
            out = ad.sqnorm(ad.sigmoid(ad.matmul(x, w)))
        tape.backward(out)
        return x.grad.copy(), w.grad.copy()

    gx1, gw1 = run()
    gx2, gw2 = run()
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


def test_grad_check_constant_function_is_exactly_zero():
    p = ad.Parameter(np.ones(3, dtype=np.float64), "p")

    def fn():
        return ad.reduce_sum(ad.mul(ad.Value(np.zeros(3), dtype=np.float64), p))

    assert ad.grad_check(fn, [p], eps=1e-6) == 0.0


def test_grad_check_quadratic_double_precision():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(5, 5))
    a = (a + a.T) / 2.0
    p = ad.Parameter(rng.normal(size=5), "p", dtype=np.float64)

    def fn():
        return ad.reduce_sum(ad.mul(p, ad.matmul(ad.Value(a, dtype=np.float64), p)))

    assert ad.grad_check(fn, [p], eps=1e-6) < 1e-6


def test_grad_check_flags_nonfinite_with_offending_record():
    p = ad.Parameter(np.array([2.0], dtype=np.float64), "p")

    def fn():
        return ad.reduce_sum(ad.exp(ad.mul(p, 1e6)))

    with pytest.raises(ad.AutodiffError, match="exp"):
        ad.grad_check(fn, [p], eps=1e-6)


def test_log_guard_keeps_trace_finite():
    x = ad.Parameter(np.array([0.0, 1e-20, 2.0], dtype=np.float64), "x")
    with ad.Tape() as tape:
        out = ad.reduce_sum(ad.log(x))
    tape.backward(out)
    assert np.all(np.isfinite(out.data))
    np.testing.assert_allclose(x.grad, [0.0, 0.0, 0.5])


def test_cumsum_exclusive_values_and_gradient():
    x = ad.Parameter(np.array([[1.0, 2.0, 4.0]], dtype=np.float64), "x")
    with ad.Tape() as tape:
        y = ad.cumsum_exclusive(x, axis=1)
        out = ad.reduce_sum(ad.mul(y, ad.Value([[1.0, 10.0, 100.0]], dtype=np.float64)))
    np.testing.assert_allclose(y.data, [[0.0, 1.0, 3.0]])
    tape.backward(out)
    np.testing.assert_allclose(x.grad, [[110.0, 100.0, 0.0]])


_UNARY_CASES = [
    ("exp", lambda r: r.uniform(-2, 2, size=(4, 3))),
    ("log", lambda r: r.uniform(0.1, 3, size=(4, 3))),
    ("relu", lambda r: r.uniform(-2, 2, size=(4, 3)) + 0.01),
    ("softplus", lambda r: r.uniform(-4, 4, size=(4, 3))),
    ("sigmoid", lambda r: r.uniform(-4, 4, size=(4, 3))),
    ("tanh", lambda r: r.uniform(-3, 3, size=(4, 3))),
    ("cos", lambda r: r.uniform(-3, 3, size=(4, 3))),
    ("sin", lambda r: r.uniform(-3, 3, size=(4, 3))),
    ("mean", lambda r: r.normal(size=(4, 3))),
    ("sqnorm", lambda r: r.normal(size=(4, 3))),
]


@pytest.mark.parametrize("kind,sampler", _UNARY_CASES)
def test_unary_primitives_match_central_differences(kind, sampler):
    rng = np.random.default_rng(hash(kind) % 2**31)
    p = ad.Parameter(sampler(rng), kind, dtype=np.float64)

    def fn():
        out = ad.record(kind, p)
        return out if out.data.ndim == 0 else ad.reduce_sum(ad.mul(out, out))

    assert ad.grad_check(fn, [p], eps=1e-6) < 1e-6


@pytest.mark.parametrize("kind", ["add", "sub", "mul"])
def test_binary_primitives_match_central_differences(kind):
    rng = np.random.default_rng(11)
    a = ad.Parameter(rng.normal(size=(3, 4)), "a", dtype=np.float64)
    b = ad.Parameter(rng.normal(size=(3, 4)), "b", dtype=np.float64)

    def fn():
        return ad.sqnorm(ad.record(kind, a, b))

    assert ad.grad_check(fn, [a, b], eps=1e-6) < 1e-6


def test_matmul_concat_reshape_match_central_differences():
    rng = np.random.default_rng(5)
    a = ad.Parameter(rng.normal(size=(4, 3)), "a", dtype=np.float64)
    b = ad.Parameter(rng.normal(size=(3, 2)), "b", dtype=np.float64)

    def fn():
        prod = ad.matmul(a, b)
        both = ad.concat([prod, ad.mul(prod, 2.0)], axis=1)
        return ad.sqnorm(ad.reshape(both, (-1,)))

    assert ad.grad_check(fn, [a, b], eps=1e-6) < 1e-6


def test_bilinear_gather_matches_central_differences():
    rng = np.random.default_rng(9)
    grid = ad.Parameter(rng.normal(size=(5, 6, 2)), "grid", dtype=np.float64)
    pts = rng.uniform(0, [4.0, 5.0], size=(7, 2))

    def fn():
        return ad.sqnorm(ad.bilinear_gather(grid, pts))

    assert ad.grad_check(fn, [grid], eps=1e-6) < 1e-6


def test_cumsum_exclusive_matches_central_differences():
    rng = np.random.default_rng(13)
    x = ad.Parameter(rng.normal(size=(3, 5)), "x", dtype=np.float64)

    def fn():
        return ad.sqnorm(ad.exp(ad.mul(ad.cumsum_exclusive(x, axis=1), -1.0)))

    assert ad.grad_check(fn, [x], eps=1e-6) < 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_randomized_composite_graph_gradients(seed):
    rng = np.random.default_rng(seed)
    x = ad.Parameter(rng.normal(size=(3, 3)), "x", dtype=np.float64)

    def fn():
        h = ad.tanh(ad.mul(x, 0.7))
        h = ad.add(h, ad.sigmoid(x))
        return ad.sqnorm(h)

    assert ad.grad_check(fn, [x], eps=1e-6) < 1e-6
