import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sghmc.autodiff import Tape, sigmoid


def central_fd(f, x, h=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(np.ravel(a) - np.ravel(b)) / max(np.linalg.norm(np.ravel(b)), 1e-12)


class TestBasics:
    def test_square(self):
        t = Tape()
        x = t.leaf(3.0)
        (g,) = t.grad(t.square(x), [x])
        assert g == pytest.approx(6.0)

    def test_tanh_at_zero(self):
        t = Tape()
        x = t.leaf(0.0)
        (g,) = t.grad(t.tanh(x), [x])
        assert g == pytest.approx(1.0)

    def test_operators(self):
        t = Tape()
        x, y = t.leaf(2.0), t.leaf(5.0)
        out = (x * y - 3.0) + 1.0 * x
        gx, gy = t.grad(out, [x, y])
        assert out.value == pytest.approx(9.0)
        assert (gx, gy) == (pytest.approx(6.0), pytest.approx(2.0))

    def test_rsub(self):
        t = Tape()
        x = t.leaf(2.0)
        (g,) = t.grad(10.0 - x, [x])
        assert g == -1.0

    def test_unused_leaf_zero(self):
        t = Tape()
        x, y = t.leaf([1.0, 2.0]), t.leaf([3.0])
        gx, gy = t.grad(t.sum(t.square(x)), [x, y])
        np.testing.assert_array_equal(gy, [0.0])
        np.testing.assert_array_equal(gx, [2.0, 4.0])

    def test_constants_get_no_gradient(self):
        t = Tape()
        c = t.const([1.0, 2.0])
        x = t.leaf([3.0, 4.0])
        grads = t.backward(t.sum(t.mul(c, x)))
        assert grads[c.index] is None
        np.testing.assert_array_equal(grads[x.index], [1.0, 2.0])

    def test_needs_scalar_root(self):
        t = Tape()
        x = t.leaf([1.0, 2.0])
        with pytest.raises(ValueError):
            t.backward(t.square(x))

    def test_foreign_variable(self):
        a, b = Tape(), Tape()
        x = a.leaf(1.0)
        with pytest.raises(ValueError):
            b.add(x, 1.0)

    def test_relu_kink_derivative_zero(self):
        t = Tape()
        x = t.leaf([0.0, -1.0, 2.0])
        (g,) = t.grad(t.sum(t.relu(x)), [x])
        np.testing.assert_array_equal(g, [0.0, 0.0, 1.0])

    def test_sigmoid_stable(self):
        with np.errstate(over="raise", invalid="raise"):
            np.testing.assert_allclose(sigmoid([-800.0, 0.0, 800.0]), [0.0, 0.5, 1.0])

    def test_matvec_shape_error(self):
        t = Tape()
        with pytest.raises(ValueError):
            t.matvec(t.leaf(np.ones((2, 3))), t.leaf(np.ones(2)))


OPS = {
    "tanh": lambda t, x: t.sum(t.tanh(x)),
    "sigmoid": lambda t, x: t.sum(t.sigmoid(x)),
    "square": lambda t, x: t.sum(t.square(x)),
    "mean": lambda t, x: t.mean(t.mul(x, x)),
    "scale": lambda t, x: t.sum(t.scale(t.tanh(x), -2.5)),
    "maximum": lambda t, x: t.sum(t.square(t.maximum(x, 0.1))),
    "inner": lambda t, x: t.sum(t.inner(x, x)),
    "concat": lambda t, x: t.sum(t.square(t.concat([x, t.tanh(x)]))),
    "reshape": lambda t, x: t.sum(t.matvec(np.arange(6.0).reshape(2, 3), t.reshape(x, (2, 3)))),
}


class TestFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(OPS))
    def test_op(self, name):
        x0 = np.random.default_rng(0).uniform(0.2, 1.5, (2, 3)) * np.array([1, -1, 1])

        def f(x):
            t = Tape()
            return float(OPS[name](t, t.const(x)).value)

        t = Tape()
        x = t.leaf(x0)
        (g,) = t.grad(OPS[name](t, x), [x])
        assert rel_err(g, central_fd(f, x0)) < 1e-7

    def test_broadcast_bias(self):
        # a bias without batch axis receives the batch-summed gradient
        r = np.random.default_rng(1)
        xb, b0 = r.normal(size=(5, 3)), r.normal(size=3)

        def f(b):
            t = Tape()
            return float(t.sum(t.square(t.add(t.const(xb), t.const(b)))).value)

        t = Tape()
        b = t.leaf(b0)
        (g,) = t.grad(t.sum(t.square(t.add(xb, b))), [b])
        assert rel_err(g, central_fd(f, b0)) < 1e-8

    def test_three_layer_composite(self):
        r = np.random.default_rng(2)
        shapes = [(4, 3), (4,), (5, 4), (5,), (2, 5)]
        fails = 0
        checked = 0
        while checked < 50:
            params = [r.normal(size=s) for s in shapes]
            xb = r.normal(size=(6, 3))
            pre1 = xb @ params[0].T + params[1]
            pre2 = np.maximum(pre1, 0) @ params[2].T + params[3]
            if min(np.abs(pre1).min(), np.abs(pre2).min()) < 1e-3:
                continue  # too close to a kink for a clean finite difference
            checked += 1

            def build(t, ps):
                h1 = t.relu(t.add(t.matvec(ps[0], xb), ps[1]))
                h2 = t.relu(t.add(t.matvec(ps[2], h1), ps[3]))
                out = t.tanh(t.matvec(ps[4], h2))
                return t.mean(t.square(t.sub(out, 0.3)))

            t = Tape()
            leaves = [t.leaf(p) for p in params]
            grads = t.grad(build(t, leaves), leaves)
            for k in range(len(params)):
                def f(pk, k=k):
                    ps = list(params)
                    ps[k] = pk
                    tt = Tape()
                    return float(build(tt, [tt.const(p) for p in ps]).value)

                if rel_err(grads[k], central_fd(f, params[k])) > 1e-6:
                    fails += 1
        assert fails == 0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
    def test_random_smooth_chain(self, vals):
        x0 = np.array(vals)

        def build(t, x):
            return t.sum(t.mul(t.sigmoid(x), t.tanh(t.scale(x, 0.7))))

        def f(x):
            t = Tape()
            return float(build(t, t.const(x)).value)

        t = Tape()
        x = t.leaf(x0)
        (g,) = t.grad(build(t, x), [x])
        np.testing.assert_allclose(g, central_fd(f, x0), rtol=1e-6, atol=1e-9)
