import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from auxctr import kernels as K
from auxctr.errors import DegenerateRowError, DimensionError
from helpers import max_rel_error, numeric_grad

TOL = 1e-4


def test_matmul_examples():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(K.matmul(np.eye(2), m), m)
    np.testing.assert_array_equal(K.matmul(np.array([[1.0, 2.0]]), np.array([[3.0], [4.0]])), [[11.0]])
    np.testing.assert_array_equal(K.matmul(np.zeros((2, 3)), np.random.default_rng(0).normal(size=(3, 5))), np.zeros((2, 5)))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
        K.matmul(np.zeros((2, 3)), np.zeros((2, 2)))


def test_softmax_examples():
    for c in (-50.0, 0.0, 3.7):
        np.testing.assert_allclose(K.softmax_rows(np.array([[c, c]])), [[0.5, 0.5]])
    np.testing.assert_allclose(K.softmax_rows(np.array([[0.0, math.log(3.0)]])), [[0.25, 0.75]], atol=1e-15)
    out = K.softmax_rows(np.array([[0.0, 1000.0]]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [[0.0, 1.0]], atol=1e-300)


def test_softmax_mask():
    a = np.array([[1.0, 2.0, 3.0]])
    out = K.softmax_rows(a, np.array([[True, False, True]]))
    assert out[0, 1] == 0.0
    np.testing.assert_allclose(out[0, [0, 2]], K.softmax_rows(np.array([[1.0, 3.0]]))[0])
    with pytest.raises(DegenerateRowError):
        K.softmax_rows(a, np.array([[False, False, False]]))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 6), elements=st.floats(-30, 30)), st.floats(-100, 100))
def test_softmax_rows_sum_to_one_and_shift_invariant(a, c):
    out = K.softmax_rows(a)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(K.softmax_rows(a + c), out, atol=1e-12)


def test_cosine_examples():
    v = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(K.cosine_sim_matrix(v, v), [[1.0]])
    assert K.cosine_sim_matrix(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))[0, 0] == 0.0
    np.testing.assert_allclose(K.cosine_sim_matrix(np.array([[1.0, 0.0]]), np.array([[-2.0, 0.0]])), [[-1.0]])


def test_cosine_zero_vector_is_finite():
    out = K.cosine_sim_matrix(np.zeros((1, 3)), np.ones((2, 3)))
    np.testing.assert_array_equal(out, np.zeros((1, 2)))
    da, db = K.cosine_sim_matrix_backward(np.ones((1, 2)), np.zeros((1, 3)), np.ones((2, 3)))
    assert np.all(np.isfinite(da)) and np.all(np.isfinite(db))


@settings(max_examples=60, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-5, 5)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)),
    arrays(np.float64, (5, 4), elements=st.floats(-5, 5)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)),
    st.floats(1e-2, 1e3),
    st.floats(1e-2, 1e3),
)
def test_cosine_scale_invariance_and_range(a, b, alpha, beta):
    c = K.cosine_sim_matrix(a, b)
    assert np.all(np.abs(c) <= 1.0 + 1e-12)
    np.testing.assert_allclose(K.cosine_sim_matrix(alpha * a, beta * b), c, atol=1e-12)


def test_elementwise_examples():
    np.testing.assert_array_equal(K.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])
    assert K.sigmoid(np.array([0.0]))[0] == 0.5
    a, b = np.ones((3, 2)), 2 * np.ones((3, 3))
    out = K.concat_cols([a, b])
    assert out.shape == (3, 5)
    np.testing.assert_array_equal(out[:, :2], a)
    np.testing.assert_array_equal(out[:, 2:], b)
    with pytest.raises(DimensionError):
        K.affine(np.ones((2, 3)), np.ones((4, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        K.concat_cols([np.ones((2, 2)), np.ones((3, 2))])


def test_sigmoid_extremes_are_finite():
    out = K.sigmoid(np.array([-800.0, 800.0]))
    np.testing.assert_array_equal(out, [0.0, 1.0])


# gradient checks: L = sum(R * op(x)) for a random upstream R

def _check(f, grads_fn, inputs):
    analytic = grads_fn()
    errors = []
    for x, g in zip(inputs, analytic):
        errors.append(max_rel_error(g, numeric_grad(f, x)))
    return max(errors)


def kernel_gradient_errors(trials: int = 100, seed: int = 0) -> dict[str, float]:
    """Max relative FD error per kernel over ``trials`` random N(0,1) cases."""
    rng = np.random.default_rng(seed)
    worst = {}

    def record(name, err):
        worst[name] = max(worst.get(name, 0.0), err)

    for _ in range(trials):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        R = rng.normal(size=(3, 2))
        record("matmul", _check(lambda: np.sum(R * K.matmul(a, b)), lambda: K.matmul_backward(R, a, b), [a, b]))

        s = rng.normal(size=(3, 5))
        mask = rng.random((3, 5)) < 0.7
        mask[:, 0] = True
        Rs = rng.normal(size=(3, 5))
        record("softmax_rows", _check(
            lambda: np.sum(Rs * K.softmax_rows(s, mask)),
            lambda: [K.softmax_backward(Rs, K.softmax_rows(s, mask))], [s]))

        ca, cb = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        Rc = rng.normal(size=(3, 5))
        record("cosine_sim_matrix", _check(
            lambda: np.sum(Rc * K.cosine_sim_matrix(ca, cb)),
            lambda: K.cosine_sim_matrix_backward(Rc, ca, cb), [ca, cb]))

        x, W, bias = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=2)
        Ra = rng.normal(size=(3, 2))
        record("affine", _check(
            lambda: np.sum(Ra * K.affine(x, W, bias)),
            lambda: K.affine_backward(Ra, x, W), [x, W, bias]))

        xr = rng.normal(size=(3, 4))
        xr[np.abs(xr) < 1e-3] = 0.5  # keep away from the kink
        Rr = rng.normal(size=(3, 4))
        record("relu", _check(lambda: np.sum(Rr * K.relu(xr)), lambda: [K.relu_backward(Rr, xr)], [xr]))

        xs = rng.normal(size=(3, 4))
        record("sigmoid", _check(
            lambda: np.sum(Rr * K.sigmoid(xs)), lambda: [K.sigmoid_backward(Rr, K.sigmoid(xs))], [xs]))

        p1, p2 = rng.normal(size=(3, 2)), rng.normal(size=(3, 3))
        Rk = rng.normal(size=(3, 5))
        record("concat_cols", _check(
            lambda: np.sum(Rk * K.concat_cols([p1, p2])),
            lambda: K.concat_cols_backward(Rk, [2, 3]), [p1, p2]))
    return worst


def test_kernel_gradients_match_finite_differences():
    worst = kernel_gradient_errors(trials=100)
    for name, err in worst.items():
        assert err < TOL, f"{name}: {err:.2e}"
