import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from simgat import autodiff as ad
from simgat.autodiff import Tape, Tensor, grad_check, propagate_multipliers

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def naive_matmul(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_matches_naive_loops():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    np.testing.assert_allclose(ad.matmul(a, b).data, naive_matmul(a, b), rtol=1e-13)
    batch = rng.normal(size=(2, 4, 5))
    got = ad.matmul(batch, b).data
    for k in range(2):
        np.testing.assert_allclose(got[k], naive_matmul(batch[k], b), rtol=1e-13)


def _check(fn, *shapes, positive=False, seed=0):
    rng = np.random.default_rng(seed)
    params = {}
    for k, shape in enumerate(shapes):
        x = rng.uniform(0.5, 2.0, shape) if positive else rng.normal(size=shape)
        params[f"x{k}"] = Tensor(x, requires_grad=True)
    rep = grad_check(lambda: ad.sum_(ad.mul(fn(*params.values()), 1.3)), params, h=1e-6, tolerance=1e-6)
    assert rep["passed"], rep


OPS = {
    "add_broadcast": (lambda a, b: a + b, [(3, 4), (4,)], False),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 1)], False),
    "mul_broadcast": (lambda a, b: a * b, [(2, 3, 4), (4,)], False),
    "div": (lambda a, b: a / b, [(3, 4), (3, 4)], True),
    "matmul": (lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    "matmul_batched": (lambda a, b: a @ b, [(2, 3, 4), (4, 2)], False),
    "matvec": (lambda a, b: a @ b, [(3, 4), (4,)], False),
    "dot": (lambda a, b: a @ b, [(4,), (4,)], False),
    "exp": (lambda a: ad.exp(a), [(3, 4)], False),
    "ln": (lambda a: ad.ln(a), [(3, 4)], True),
    "tanh": (lambda a: ad.tanh(a), [(3, 4)], False),
    "sigmoid": (lambda a: ad.sigmoid(a), [(3, 4)], False),
    "softplus": (lambda a: ad.softplus(a), [(3, 4)], False),
    "leaky_relu": (lambda a: ad.leaky_relu(a, 0.2), [(3, 4)], False),
    "softmax_cols": (lambda a: ad.softmax(a, axis=0) * np.arange(12.0).reshape(3, 4), [(3, 4)], False),
    "softmax_rows": (lambda a: ad.softmax(a, axis=-1) * np.arange(12.0).reshape(3, 4), [(3, 4)], False),
    "concat": (lambda a, b: ad.concat([a, b], axis=1) * np.arange(15.0).reshape(3, 5), [(3, 2), (3, 3)], False),
    "slice": (lambda a: a[1:, ::2] * 2.0, [(3, 4)], False),
    "sum_axis": (lambda a: ad.sum_(a, axis=0) * np.arange(4.0), [(3, 4)], False),
    "mean_keepdims": (lambda a: ad.mean(a, axis=1, keepdims=True) * a, [(3, 4)], False),
    "reshape": (lambda a: a.reshape(4, 3) * np.arange(12.0).reshape(4, 3), [(3, 4)], False),
    "transpose": (lambda a: a.T * np.arange(12.0).reshape(4, 3), [(3, 4)], False),
    "clip_min": (lambda a: ad.clip_min(a, 0.3) * 2.0, [(3, 4)], True),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients_match_finite_differences(name):
    fn, shapes, positive = OPS[name]
    _check(fn, *shapes, positive=positive)


def test_reused_tensor_accumulates_gradient():
    x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    with Tape() as tape:
        y = ad.sum_(x * x + x)
        (g,) = tape.gradient(y, [x])
    np.testing.assert_allclose(g, 2 * x.data + 1)


def test_untracked_ops_are_not_recorded():
    with Tape() as tape:
        ad.exp(Tensor(np.ones(3))) + 1.0
        assert len(tape) == 0
        ad.exp(Tensor(np.ones(3), requires_grad=True))
        assert len(tape) == 1


def test_ndarray_left_operand_defers_to_tensor():
    W = Tensor(np.eye(2) * 2.0, requires_grad=True)
    out = np.ones((3, 2)) @ W
    assert isinstance(out, Tensor)
    np.testing.assert_allclose(out.data, 2.0)
    assert isinstance(np.ones(2) + W, Tensor)


@given(arrays(float, (3, 5), elements=finite), st.floats(-50, 50))
def test_softmax_normalizes_and_ignores_shifts(x, c):
    p = ad.softmax(Tensor(x), axis=0).data
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(ad.softmax(Tensor(x + c), axis=0).data, p, atol=1e-12)


@given(arrays(float, (2, 3), elements=finite), arrays(float, (3,), elements=finite))
def test_broadcast_gradient_has_operand_shape(a, b):
    ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
    with Tape() as tape:
        ga, gb = tape.gradient(ad.sum_(ta * tb), [ta, tb])
    np.testing.assert_allclose(ga, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(gb, a.sum(axis=0))


# -- DeepLIFT ---------------------------------------------------------------


def _paired(fn, x, ref):
    outs, tapes, ins = [], [], []
    for v in (x, ref):
        with Tape() as tape:
            t = Tensor(np.asarray(v, dtype=float), requires_grad=True)
            outs.append(fn(t))
        tapes.append(tape)
        ins.append(t)
    (m,) = propagate_multipliers(tapes[0], tapes[1], outs[0], outs[1], [ins[0]])
    return m * (np.asarray(x) - np.asarray(ref)), float(outs[0].data - outs[1].data)


def test_deeplift_hand_worked_fixture():
    # hidden unit 2 crosses zero (ref 1.0 -> -1.5): Rescale slope 0.52, not 0.2
    W1 = np.array([[1.0, -1.0], [0.5, -1.0], [2.0, 0.5]])
    b1 = np.array([0.0, 1.0])
    w2 = np.array([2.0, -3.0])

    def net(x):
        return ad.leaky_relu(x @ W1 + b1, 0.2) @ w2 + 0.5

    contrib, delta = _paired(net, [1.0, 2.0, 1.0], np.zeros(3))
    np.testing.assert_allclose(contrib, [3.56, 5.12, 3.22], atol=1e-12)
    assert delta == pytest.approx(11.9, abs=1e-12)


@settings(max_examples=50)
@given(arrays(float, 4, elements=finite), arrays(float, 4, elements=finite), arrays(float, 4, elements=finite))
def test_deeplift_on_affine_network_is_weight_times_difference(w, x, ref):
    contrib, delta = _paired(lambda t: t @ w + 0.7, x, ref)
    np.testing.assert_allclose(contrib, w * (x - ref), atol=1e-12)
    assert abs(contrib.sum() - delta) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_deeplift_completeness_on_nonlinear_network(seed):
    rng = np.random.default_rng(seed)
    W1, W2 = rng.normal(size=(5, 4)), rng.normal(size=(4, 3))
    v = rng.normal(size=3)

    def net(x):
        h = ad.tanh(x @ W1)
        g = ad.sigmoid(h @ W2) * ad.softplus(h @ W2) / (1.0 + ad.exp(0.3 * (h @ W2)))
        return ad.sum_(ad.softmax(g, axis=-1) * v) + ad.sum_(g)

    x, ref = rng.normal(size=5), rng.normal(size=5)
    contrib, delta = _paired(net, x, ref)
    assert abs(contrib.sum() - delta) < 1e-10


def test_deeplift_rejects_diverged_runs():
    with Tape() as t1:
        a = Tensor(np.ones(2), requires_grad=True)
        ya = ad.sum_(ad.exp(a))
    with Tape() as t2:
        b = Tensor(np.ones(2), requires_grad=True)
        yb = ad.sum_(ad.tanh(b))
    with pytest.raises(ValueError, match="diverged"):
        propagate_multipliers(t1, t2, ya, yb, [a])


def test_grad_check_flags_a_wrong_gradient():
    x = Tensor(np.array([0.3, -0.4]), requires_grad=True)
    # stop_gradient hides the dependence from the tape but not from finite differences
    rep = grad_check(lambda: ad.sum_(x * ad.stop_gradient(x)), {"x": x})
    assert not rep["passed"]
