import numpy as np
import pytest

from riskagent.autodiff import Tensor, grad, leaf, minimum


def fd(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


OPS = {
    "tanh": lambda t: t.tanh().sum(),
    "exp": lambda t: t.exp().mean(),
    "log": lambda t: (t * t + 1.0).log().sum(),
    "square": lambda t: t.square().sum(),
    "div": lambda t: (1.0 / (t * t + 2.0)).sum(),
    "clip": lambda t: (t.clip(-0.5, 0.5) * 3.0).sum(),
    "relu": lambda t: t.relu().sum(),
    "index": lambda t: (t[np.array([0, 0, 2])] * 2.0).sum(),
    "axis_sum": lambda t: (t.sum(axis=0) * Tensor([1.0, 2.0])).sum(),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_elementwise_gradients(name, rng):
    x = rng.uniform(-1.2, 1.2, (3, 2))
    f = OPS[name]
    w = leaf(x)
    (g,) = grad(f(w), [w])
    assert np.allclose(g, fd(lambda a: f(Tensor(a)).item(), x), atol=1e-7)


def test_matmul_broadcast_and_segment_sum(rng):
    x, w0 = rng.standard_normal((4, 3)), rng.standard_normal((3, 2))
    b0 = rng.standard_normal(2)
    ids = np.array([0, 1, 1, 0])

    def f(w, b):
        out = (Tensor(x) @ w + b).tanh().sum(axis=1)
        return (out.segment_sum(ids, 2).square()).sum()

    w, b = leaf(w0), leaf(b0)
    gw, gb = grad(f(w, b), [w, b])
    assert np.allclose(gw, fd(lambda a: f(Tensor(a), Tensor(b0)).item(), w0), atol=1e-7)
    assert np.allclose(gb, fd(lambda a: f(Tensor(w0), Tensor(a)).item(), b0), atol=1e-7)


def test_sum_of_squares_gradient_is_twice_params(rng):
    xs = [leaf(rng.standard_normal(s)) for s in [(3, 2), (2,), (4,)]]
    loss = xs[0].square().sum() + xs[1].square().sum() + xs[2].square().sum()
    for g, x in zip(grad(loss, xs), xs):
        assert np.array_equal(g, 2 * x.data)


def test_constant_loss_zero_gradient():
    x = leaf(np.ones(3))
    (g,) = grad(Tensor(5.0), [x])
    assert np.all(g == 0)
    (g,) = grad(5.0, [x])
    assert np.all(g == 0)


def test_non_scalar_rejected():
    x = leaf(np.ones(3))
    with pytest.raises(ValueError, match="scalar"):
        grad(x * 2.0, [x])


def test_reused_node_accumulates():
    x = leaf(np.array(3.0))
    y = x * x
    (g,) = grad(y + y, [x])
    assert g == pytest.approx(12.0)


def test_minimum_routes_gradient():
    a, b = leaf(np.array([1.0, 5.0])), leaf(np.array([2.0, 4.0]))
    ga, gb = grad(minimum(a, b).sum(), [a, b])
    assert list(ga) == [1.0, 0.0] and list(gb) == [0.0, 1.0]
