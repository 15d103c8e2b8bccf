import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rectflow import autodiff as ad
from rectflow.errors import ConfigError, DimensionError

from conftest import numeric_grad, rel_err


def check_unary(op, x0):
    x = ad.Node(x0)
    y = ad.total(op(x))
    y.backward()
    num = numeric_grad(lambda: float(op(ad.Node(x0)).value.sum()), x0)
    return rel_err(x.grad, num)


def test_matmul_identity_and_selection():
    a = ad.Node([[1, 2], [3, 4]])
    assert np.array_equal(ad.matmul(a, ad.Node(np.eye(2))).value, [[1, 2], [3, 4]])
    assert np.array_equal(ad.matmul(ad.Node([[1, 0]]), ad.Node([[2], [5]])).value, [[2]])


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        ad.matmul(ad.Node(np.ones((2, 3))), ad.Node(np.ones((2, 3))))


def test_matmul_gradients_match_finite_differences(rng):
    A0, B0 = rng.uniform(-2, 2, (3, 4)), rng.uniform(-2, 2, (4, 2))
    A, B = ad.Node(A0), ad.Node(B0)
    ad.total(ad.matmul(A, B)).backward()
    f = lambda: float((A0 @ B0).sum())
    assert rel_err(A.grad, numeric_grad(f, A0)) < 1e-5
    assert rel_err(B.grad, numeric_grad(f, B0)) < 1e-5


def test_sigmoid_values():
    x = ad.Node([[0.0]])
    y = ad.sigmoid(x)
    assert y.value[0, 0] == 0.5
    y.backward()
    assert x.grad[0, 0] == 0.25


def test_sigmoid_extremes_finite():
    y = ad.sigmoid(ad.Node([[-1000.0, 1000.0]]))
    assert np.all(np.isfinite(y.value))
    assert y.value[0, 0] == 0.0 and y.value[0, 1] == 1.0


def test_silu_values():
    assert ad.silu(ad.Node([[0.0]])).value[0, 0] == 0.0
    assert abs(ad.silu(ad.Node([[20.0]])).value[0, 0] - 20.0) < 1e-7


@pytest.mark.parametrize("op", [ad.sigmoid, ad.silu], ids=["sigmoid", "silu"])
def test_unary_gradients(op, rng):
    assert check_unary(op, rng.uniform(-2, 2, (3, 3))) < 1e-5


def test_hadamard_values_and_gradient(rng):
    assert np.array_equal(ad.hadamard(ad.Node([1, 2, 3]), ad.Node([1, 1, 1])).value, [[1, 2, 3]])
    assert np.array_equal(ad.hadamard(ad.Node([2, 3]), ad.Node([0, 5])).value, [[0, 15]])
    a0, b0 = rng.uniform(-2, 2, (2, 3)), rng.uniform(-2, 2, (2, 3))
    a, b = ad.Node(a0), ad.Node(b0)
    ad.total(ad.hadamard(a, b)).backward()
    f = lambda: float((a0 * b0).sum())
    assert rel_err(a.grad, numeric_grad(f, a0)) < 1e-5
    assert rel_err(b.grad, numeric_grad(f, b0)) < 1e-5
    with pytest.raises(DimensionError):
        ad.hadamard(ad.Node([1, 2]), ad.Node([1, 2, 3]))


def test_dropout_identity_cases(rng):
    x = ad.Node(rng.normal(size=(4, 5)))
    assert np.array_equal(ad.dropout(x, 0.0, True, rng).value, x.value)
    assert np.array_equal(ad.dropout(x, 0.7, False, rng).value, x.value)


def test_dropout_is_unbiased(rng):
    y = ad.dropout(ad.Node(np.ones((1, 100_000))), 0.5, True, rng)
    assert 0.98 <= y.value.mean() <= 1.02
    assert set(np.unique(y.value)) <= {0.0, 2.0}


@pytest.mark.parametrize("p", [-0.1, 1.0, 1.5])
def test_dropout_rejects_bad_probability(p, rng):
    with pytest.raises(ConfigError):
        ad.dropout(ad.Node([[1.0]]), p, True, rng)


def test_dropout_gradient_uses_mask(rng):
    x = ad.Node(np.ones((3, 4)))
    y = ad.dropout(x, 0.5, True, rng)
    ad.total(y).backward()
    assert np.array_equal(x.grad, y.value)


def test_mse_loss_values(rng):
    assert ad.mse_loss(ad.Node([[1.0, 2.0]]), [[1.0, 2.0]]).value[0, 0] == 0.0
    assert ad.mse_loss(ad.Node([[0.0, 0.0]]), [[1.0, 2.0]]).value[0, 0] == 2.5
    p0, t = rng.uniform(-2, 2, (3, 2)), rng.uniform(-2, 2, (3, 2))
    p = ad.Node(p0)
    ad.mse_loss(p, t).backward()
    num = numeric_grad(lambda: float(np.mean((p0 - t) ** 2)), p0)
    assert rel_err(p.grad, num) < 1e-5
    with pytest.raises(DimensionError):
        ad.mse_loss(ad.Node([[1.0]]), [[1.0, 2.0]])


def test_shared_node_accumulates():
    x = ad.Node([[3.0]])
    ad.add(x, x).backward()
    assert x.grad[0, 0] == 2.0


def test_diamond_dag_visits_once(rng):
    # y = sum(sigmoid(x) * silu(x)): x feeds two branches that rejoin
    x0 = rng.uniform(-2, 2, (2, 2))
    x = ad.Node(x0)
    ad.total(ad.hadamard(ad.sigmoid(x), ad.silu(x))).backward()
    f = lambda: float((1 / (1 + np.exp(-x0)) * x0 / (1 + np.exp(-x0))).sum())
    assert rel_err(x.grad, numeric_grad(f, x0)) < 1e-5


def test_backward_twice_does_not_double_count():
    x = ad.Node([[2.0]])
    y = ad.hadamard(x, x)
    y.backward()
    y.backward()
    assert x.grad[0, 0] == 4.0


def test_broadcast_bias_and_concat_gradients(rng):
    x0, b0, c0 = rng.uniform(-2, 2, (4, 3)), rng.uniform(-2, 2, (1, 3)), rng.uniform(-2, 2, (4, 2))
    x, b, c = ad.Node(x0), ad.Node(b0), ad.Node(c0)
    w = rng.uniform(-2, 2, (5, 1))
    out = ad.matmul(ad.concat_cols([ad.silu(ad.add(x, b)), c]), ad.constant(w))
    ad.total(out).backward()

    def f():
        h = (x0 + b0) / (1 + np.exp(-(x0 + b0)))
        return float((np.concatenate([h, c0], axis=1) @ w).sum())

    for node, arr in ((x, x0), (b, b0), (c, c0)):
        assert rel_err(node.grad, numeric_grad(f, arr)) < 1e-5


def test_broadcast_rows_gradient():
    x = ad.Node([[1.0, 2.0]])
    y = ad.broadcast_rows(x, 3)
    assert y.shape == (3, 2)
    ad.total(ad.hadamard(y, y)).backward()
    assert np.array_equal(x.grad, [[6.0, 12.0]])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_forward_stays_finite(values):
    x = ad.Node(np.array(values))
    for op in (ad.sigmoid, ad.silu):
        assert np.all(np.isfinite(op(x).value))
    assert np.isfinite(ad.mse_loss(x, np.zeros_like(x.value)).value).all()
