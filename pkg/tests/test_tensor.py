import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rnsent import tensor as T
from rnsent.errors import DimensionError, DomainError, NumericError, SingularMatrixError
from rnsent.gradcheck import finite_difference_check
from rnsent.tensor import Parameter, Tape

from conftest import params_of


def grad_of(f, *arrays):
    ps = params_of(*arrays)
    with Tape() as tape:
        loss = f(*ps)
    tape.backward(loss)
    return [p.grad for p in ps]


# matmul


def test_matmul_identity(rng):
    M = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(T.matmul(np.eye(3), M).data, M)


def test_matmul_hand_case():
    out = T.matmul([[1.0, 2.0], [3.0, 4.0]], [[0.0], [1.0]])
    np.testing.assert_array_equal(out.data, [[2.0], [4.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matmul_gradient(rng):
    a, b = params_of(rng.normal(size=(4, 5)), rng.normal(size=(5, 3)))
    w = rng.normal(size=(4, 3))
    err = finite_difference_check(lambda: T.reduce_sum(T.mul(T.matmul(a, b), w)), [a, b])
    assert err <= 1e-6


def test_batched_matmul_matches_loop(rng):
    a, b = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4, 5))
    out = T.matmul(a, b).data
    for i in range(3):
        np.testing.assert_allclose(out[i], a[i] @ b[i])


# elementwise


def test_relu_values_and_zero_subgradient():
    np.testing.assert_array_equal(T.relu([-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])
    (g,) = grad_of(lambda x: T.reduce_sum(T.relu(x)), [-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])


def test_tanh_zero():
    assert T.tanh(0.0).data == 0.0


def test_product_rule():
    gx, gy = grad_of(lambda x, y: T.reduce_sum(T.mul(x, y)), [1.0, 2.0], [3.0, 4.0])
    np.testing.assert_array_equal(gx, [3.0, 4.0])
    np.testing.assert_array_equal(gy, [1.0, 2.0])


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log([1.0, 0.0])
    with pytest.raises(DomainError):
        T.log([-2.0])


def test_elementwise_dispatch():
    np.testing.assert_allclose(T.elementwise("add", [1.0], [2.0]).data, [3.0])
    np.testing.assert_allclose(T.elementwise("abs", [-2.0]).data, [2.0])
    with pytest.raises(ValueError):
        T.elementwise("cosh", [1.0])


def test_trailing_vector_broadcast(rng):
    x, b = params_of(rng.normal(size=(3, 4)), rng.normal(size=4))
    err = finite_difference_check(lambda: T.reduce_sum(T.tanh(T.add(x, b))), [x, b])
    assert err <= 1e-6


def test_incompatible_shapes_raise():
    with pytest.raises(DimensionError):
        T.add(np.zeros((2, 3)), np.zeros((4,)))


@pytest.mark.parametrize("op", ["tanh", "sigmoid", "exp", "abs"])
def test_unary_gradients(op, rng):
    (x,) = params_of(rng.normal(size=6) + 0.1)
    fn = getattr(T, op)
    assert finite_difference_check(lambda: T.reduce_sum(T.mul(fn(x), np.arange(1.0, 7.0))), [x]) <= 1e-6


def test_log_and_div_gradients(rng):
    x, y = params_of(rng.uniform(0.5, 2.0, size=5), rng.uniform(0.5, 2.0, size=5))
    assert finite_difference_check(lambda: T.reduce_sum(T.log(T.div(x, y))), [x, y]) <= 1e-6


# reductions


def test_sum_axis0():
    np.testing.assert_array_equal(T.reduce("sum", [[1.0, 2.0], [3.0, 4.0]], axis=0).data, [4.0, 6.0])


def test_max_axis0():
    np.testing.assert_array_equal(T.reduce("max", [[1.0, 5.0], [3.0, 4.0]], axis=0).data, [3.0, 5.0])


def test_max_tie_routes_to_lowest_index():
    (g,) = grad_of(lambda x: T.reduce_max(x), [2.0, 2.0, 1.0])
    np.testing.assert_array_equal(g, [1.0, 0.0, 0.0])


def test_reduce_empty_axis_raises():
    with pytest.raises(ValueError):
        T.reduce_max(np.zeros((0, 3)), axis=0)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.integers(-3, 3).map(float)))
def test_max_backward_conserves_mass(x):
    (g,) = grad_of(lambda p: T.reduce_sum(T.mul(T.reduce_max(p, axis=0), [1.0, 2.0, 3.0])), x)
    np.testing.assert_allclose(g.sum(axis=0), [1.0, 2.0, 3.0])
    assert ((g != 0).sum(axis=0) == 1).all()


# softmax


def test_softmax_uniform():
    np.testing.assert_allclose(T.softmax_log_normalize([0.0, 0.0, 0.0]).data, [1 / 3] * 3)


def test_softmax_no_overflow():
    out = T.softmax([1000.0, 0.0]).data
    assert np.isfinite(out).all()
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-300)


def test_softmax_gradient(rng):
    (x,) = params_of(rng.normal(size=3))
    w = rng.normal(size=3)
    assert finite_difference_check(lambda: T.reduce_sum(T.mul(T.softmax(x), w)), [x]) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_rows_sum_to_one(x):
    np.testing.assert_allclose(T.softmax(x, axis=1).data.sum(axis=1), 1.0, atol=1e-12)


# matrix inverse


def test_inverse_identity():
    np.testing.assert_array_equal(T.matrix_inverse(np.eye(4)).data, np.eye(4))


def test_inverse_diagonal():
    np.testing.assert_allclose(T.matrix_inverse([[2.0, 0.0], [0.0, 4.0]]).data, [[0.5, 0.0], [0.0, 0.25]])


def test_inverse_gradient(rng):
    (A,) = params_of(rng.normal(size=(5, 5)) + 5 * np.eye(5))
    assert finite_difference_check(lambda: T.reduce_sum(T.matrix_inverse(A)), [A]) <= 1e-5


def test_singular_matrix_raises_with_condition():
    with pytest.raises(SingularMatrixError) as info:
        T.matrix_inverse([[1.0, 2.0], [2.0, 4.0]])
    assert info.value.condition > 1e12


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_inverse_times_matrix_is_identity(n, seed):
    r = np.random.default_rng(seed)
    U, _ = np.linalg.qr(r.normal(size=(n, n)))
    V, _ = np.linalg.qr(r.normal(size=(n, n)))
    s = np.logspace(0, 6, n) if n > 1 else np.ones(1)
    A = U @ np.diag(s) @ V.T  # condition number 1e6
    np.testing.assert_allclose(T.matrix_inverse(A).data @ A, np.eye(n), atol=1e-8)


def test_logdet_gradient(rng):
    (A,) = params_of(rng.normal(size=(4, 4)) + 4 * np.eye(4))
    assert finite_difference_check(lambda: T.logdet(A), [A]) <= 1e-6


# concat


def test_concat_shape_and_round_trip(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 5))
    out = T.concat([a, b], axis=1).data
    assert out.shape == (2, 8)
    np.testing.assert_array_equal(out[:, :3], a)
    np.testing.assert_array_equal(out[:, 3:], b)


def test_concat_single_part_is_identity(rng):
    a = rng.normal(size=(2, 3))
    np.testing.assert_array_equal(T.concat([a], axis=0).data, a)


def test_concat_extent_mismatch():
    with pytest.raises(DimensionError):
        T.concat([np.zeros((2, 3)), np.zeros((3, 3))], axis=1)


def test_concat_gradient(rng):
    a, b = params_of(rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))
    w = rng.normal(size=(2, 5))
    assert finite_difference_check(lambda: T.reduce_sum(T.mul(T.concat([a, b], axis=1), w)), [a, b]) <= 1e-6


# backward


def test_backward_sum_gives_ones():
    (g,) = grad_of(lambda p: T.reduce_sum(p), np.zeros((2, 3)))
    np.testing.assert_array_equal(g, np.ones((2, 3)))


def test_backward_zero_times_param():
    (g,) = grad_of(lambda p: T.reduce_sum(T.mul(p, 0.0)), np.ones(4))
    np.testing.assert_array_equal(g, np.zeros(4))


def test_backward_rejects_non_scalar():
    (p,) = params_of(np.ones(3))
    with Tape() as tape:
        y = T.mul(p, 2.0)
    with pytest.raises(DimensionError):
        tape.backward(y)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_backward_names_first_nonfinite_op():
    (p,) = params_of(np.array([1e300]))
    with Tape() as tape:
        y = T.reduce_sum(T.mul(T.mul(p, 1e10), 0.0))
    with pytest.raises(NumericError, match="mul#0"):
        tape.backward(y)


def test_shared_subexpression_accumulates():
    (g,) = grad_of(lambda p: T.reduce_sum(T.add(T.mul(p, p), p)), [3.0])
    np.testing.assert_allclose(g, [7.0])


def test_no_recording_outside_tape():
    p = Parameter(np.ones(2))
    y = T.mul(p, 2.0)
    assert y.node is None


def test_getitem_gradient_with_repeats():
    (g,) = grad_of(lambda p: T.reduce_sum(p[np.array([0, 0, 2])]), np.zeros(3))
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])


def test_operator_sugar(rng):
    x, y = params_of(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
    err = finite_difference_check(lambda: ((x @ y) * x - y / 3.0 + 1.0).sum(), [x, y])
    assert err <= 1e-6


# dropout


def test_dropout_identity_without_rng(rng):
    x = T.Tensor(rng.normal(size=5))
    assert T.dropout(x, 0.5, None) is x


def test_dropout_is_inverted_and_seeded():
    x = np.ones(20000)
    a = T.dropout(x, 0.5, np.random.default_rng(3)).data
    b = T.dropout(x, 0.5, np.random.default_rng(3)).data
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) <= {0.0, 2.0}
    assert abs(a.mean() - 1.0) < 0.05


# gradcheck itself


def test_fd_check_quadratic():
    (x,) = params_of([1.0, 2.0, 3.0])
    assert finite_difference_check(lambda: T.reduce_sum(T.mul(x, x)), [x]) <= 1e-9


def test_fd_check_detects_wrong_gradient():
    (x,) = params_of([1.0, 2.0])

    def bad():
        out = T.reduce_sum(T.mul(x, x))
        # a custom op whose backward is deliberately off by a factor of two
        return T._op("bad", (out,), out.data.copy(), lambda g: (2.0 * g,))

    assert finite_difference_check(bad, [x]) > 0.1
