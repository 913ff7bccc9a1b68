import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vpgeo import tensor as T
from vpgeo.errors import NonFiniteValue, NotScalar, ShapeMismatch, StaleTape
from vpgeo.gradcheck import finite_difference_gradient, max_relative_error

RNG = np.random.default_rng(0)


def check_grads(build, arrays, h=1e-6, tol=1e-6):
    """Compare tape gradients of build(*tensors) against central differences."""
    tensors = [T.Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        loss = build(*tensors)
    tape.backward(loss)
    analytic = [t.grad for t in tensors]

    def f():
        fresh = [T.Tensor(a) for a in arrays]
        return T.as_tensor(build(*fresh)).item()

    numeric = finite_difference_gradient(f, arrays, h=h)
    err = max_relative_error(analytic, numeric)
    assert err < tol, f"max rel err {err}"


class TestForwardExamples:
    def test_row_softmax_uniform(self):
        out = T.row_softmax(T.Tensor([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_layer_norm_zero_vector(self):
        out = T.layer_norm(T.Tensor([[0.0, 0.0, 0.0]]), eps=1e-5)
        np.testing.assert_array_equal(out.data, np.zeros((1, 3)))

    def test_matmul_identity(self):
        a = RNG.normal(size=(3, 4))
        out = T.matmul(T.Tensor(np.eye(3)), T.Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))

    def test_non_finite_surfaces(self):
        with pytest.raises(NonFiniteValue):
            T.div(T.Tensor([1.0]), T.Tensor([0.0]))


class TestBackwardBasics:
    def test_sum_of_linear_map(self):
        # loss = sum(W @ x): dW = broadcast of x per row
        w = RNG.normal(size=(2, 2))
        x = RNG.normal(size=(2, 1))
        check_grads(lambda W, X: T.sum_(T.matmul(W, X)), [w, x])

    def test_constant_loss_no_grads(self):
        c = T.Tensor(3.5)
        with T.Tape() as tape:
            pass
        tape.backward(c)  # nothing recorded, returns cleanly
        w = T.Tensor(RNG.normal(size=(2, 2)), requires_grad=True)
        assert w.grad is None

    def test_softmax_dot_value(self):
        z = RNG.normal(size=(3, 4))
        v = RNG.normal(size=(4, 1))
        check_grads(lambda Z, V: T.mean(T.matmul(T.row_softmax(Z), V)), [z, v])

    def test_not_scalar(self):
        x = T.Tensor(np.ones((2, 2)), requires_grad=True)
        with T.Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(NotScalar):
            tape.backward(y)

    def test_stale_tape(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum_(T.mul(x, x))
        tape.backward(loss)
        with pytest.raises(StaleTape):
            tape.backward(loss)

    def test_backward_single_traversal(self):
        # each node's backward runs exactly once even with fan-out reuse
        x = T.Tensor(RNG.normal(size=(4, 4)), requires_grad=True)
        with T.Tape() as tape:
            y = T.mul(x, x)
            loss = T.sum_(T.add(y, y))
        counted = []
        nodes = [(out, ins, bwd) for out, ins, bwd in tape._nodes]

        def wrap(bwd):
            def inner(g):
                counted.append(1)
                return bwd(g)
            return inner

        tape._nodes = [(out, ins, wrap(bwd)) for out, ins, bwd in nodes]
        tape.backward(loss)
        assert len(counted) == len(nodes)
        np.testing.assert_allclose(x.grad, 4 * x.data)

    def test_grad_accumulates_across_tapes(self):
        x = T.Tensor(np.array([2.0]), requires_grad=True)
        for _ in range(2):
            with T.Tape() as tape:
                loss = T.sum_(T.mul(x, x))
            tape.backward(loss)
        np.testing.assert_allclose(x.grad, [8.0])


_COEF = np.random.default_rng(99).normal(size=(6, 6))

PRIMITIVE_CASES = [
    ("add", lambda a, b: T.sum_(T.add(a, b)), [(3, 4), (3, 4)]),
    ("add_broadcast", lambda a, b: T.sum_(T.mul(T.add(a, b), T.add(a, b))), [(3, 4), (4,)]),
    ("sub", lambda a, b: T.sum_(T.mul(T.sub(a, b), T.sub(a, b))), [(3, 4), (3, 4)]),
    ("mul", lambda a, b: T.sum_(T.mul(a, b)), [(3, 4), (3, 4)]),
    ("mul_scalar_tensor", lambda a, b: T.sum_(T.mul(a, b)), [(), (3, 4)]),
    ("div", lambda a, b: T.sum_(T.div(a, b)), [(3, 4), ()]),
    ("matmul", lambda a, b: T.sum_(T.matmul(a, b)), [(3, 4), (4, 2)]),
    ("affine", lambda x, w, b: T.sum_(T.mul(T.affine(x, w, b), T.affine(x, w, b))), [(3, 4), (4, 2), (2,)]),
    ("transpose", lambda a: T.sum_(T.mul(T.transpose(a), T.transpose(a))), [(3, 4)]),
    ("reshape", lambda a: T.sum_(T.mul(T.reshape(a, (4, 3)), T.reshape(a, (4, 3)))), [(3, 4)]),
    ("concat0", lambda a, b: T.sum_(T.mul(T.concat([a, b], axis=0), T.concat([a, b], axis=0))), [(2, 3), (4, 3)]),
    ("concat1", lambda a, b: T.sum_(T.mul(T.concat([a, b], axis=1), T.concat([a, b], axis=1))), [(3, 2), (3, 4)]),
    ("slice_rows", lambda a: T.sum_(T.mul(T.slice_rows(a, 1, 3), T.slice_rows(a, 1, 3))), [(4, 3)]),
    ("slice_cols", lambda a: T.sum_(T.mul(T.slice_cols(a, 0, 2), T.slice_cols(a, 0, 2))), [(3, 4)]),
    ("smul", lambda a: T.sum_(T.smul(a, -2.5)), [(3, 4)]),
    ("relu", lambda a: T.sum_(T.relu(a)), [(5, 5)]),
    ("softplus", lambda a: T.sum_(T.softplus(a)), [(5, 5)]),
    ("sqrt", lambda a: T.sum_(T.sqrt(a)), [(3, 4)]),
    ("abs", lambda a: T.sum_(T.abs_(a)), [(3, 4)]),
    ("row_softmax", lambda a: T.sum_(T.mul(T.row_softmax(a), _COEF[:4, :5])), [(4, 5)]),
    ("log_softmax", lambda a: T.sum_(T.mul(T.log_softmax(a), _COEF[:4, :5])), [(4, 5)]),
    ("layer_norm", lambda a: T.sum_(T.mul(T.layer_norm(a), _COEF[:4, :6])), [(4, 6)]),
    ("sum_axis0", lambda a: T.sum_(T.mul(T.sum_(a, axis=0), T.sum_(a, axis=0))), [(3, 4)]),
    ("sum_axis1_keep", lambda a: T.sum_(T.mul(T.sum_(a, axis=1, keepdims=True), T.sum_(a, axis=1, keepdims=True))), [(3, 4)]),
    ("mean_axis", lambda a: T.sum_(T.mul(T.mean(a, axis=0), T.mean(a, axis=0))), [(3, 4)]),
    ("unit_rows", lambda a: T.sum_(T.mul(T.unit_rows(a), _COEF[:4, :3])), [(4, 3)]),
    ("sign_canonical", lambda a: T.sum_(T.mul(T.sign_canonical_rows(a), _COEF[:4, :3])), [(4, 3)]),
    ("row_norm", lambda a: T.sum_(T.row_norm(a)), [(4, 3)]),
    ("row_angle", lambda a, b: T.sum_(T.row_angle(a, b)), [(4, 3), (4, 3)]),
    ("cosine_sim", lambda a: T.sum_(T.mul(T.cosine_similarity_matrix(a), _COEF[:4, :4])), [(4, 3)]),
    ("neg", lambda a: T.sum_(T.neg(T.mul(a, a))), [(3, 4)]),
]


@pytest.mark.parametrize("name,build,shapes", PRIMITIVE_CASES, ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_matches_finite_differences(name, build, shapes):
    rng = np.random.default_rng(hash(name) % 2**32)
    arrays = []
    for s in shapes:
        a = np.asarray(rng.normal(size=s))
        if name == "sqrt":
            a = np.abs(a) + 0.5
        if name in ("abs", "relu"):
            a = a + np.where(a >= 0, 0.3, -0.3)  # keep away from the kink
        if name == "div":
            a = a + np.sign(a) * 1.5
        arrays.append(np.asarray(a))
    check_grads(build, arrays)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(2, 6), st.integers(0, 10_000))
def test_row_softmax_rows_sum_to_one(rows, cols, seed):
    rng = np.random.default_rng(seed)
    out = T.row_softmax(T.Tensor(rng.normal(scale=3.0, size=(rows, cols))))
    np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(rows), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(4, 12), st.integers(0, 10_000))
def test_layer_norm_moments(rows, cols, seed):
    # variance >> eps so the normalized variance lands within 1e-6 of 1
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=100.0, size=(rows, cols))
    x[:, 0] += 500.0  # guarantee spread
    out = T.layer_norm(T.Tensor(x), eps=1e-5).data
    np.testing.assert_allclose(out.mean(axis=-1), np.zeros(rows), atol=1e-9)
    np.testing.assert_allclose(out.var(axis=-1), np.ones(rows), atol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_random_composition_gradcheck(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 5))
    w = rng.normal(size=(5, 4))
    bias = rng.normal(size=(3, 4))

    coef = rng.normal(size=(3, 4))

    def build(A, W):
        h = T.relu(T.matmul(A, W))
        h = T.layer_norm(T.add(h, T.Tensor(bias)))
        return T.mean(T.mul(h, T.Tensor(coef)))

    check_grads(build, [a, w], tol=2e-5)
