"""Gradient and contract checks for the autodiff core.

Every op gets a central-finite-difference check in float64; the tolerances
here gate everything built on top (training loops, distillation gradients).
"""

import numpy as np
import pytest

from glyphsynth.nn import Conv2d, GroupNorm, Linear, Module, Tensor, autodiff as ad
from glyphsynth.nn.optim import EMA, Adam


def numeric_grad(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * h)
    return g


def check_op(build, x_shape, seed=0, rtol=1e-6, atol=1e-8):
    """build(tensor) -> scalar Tensor; compares tape gradient to numeric."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(x_shape)
    t = Tensor.param(x.copy())
    out = build(t)
    out.backward()
    num = numeric_grad(lambda arr: float(build(Tensor(arr)).data), x.copy())
    np.testing.assert_allclose(t.grad, num, rtol=rtol, atol=atol)


class TestElementwiseGrads:
    @pytest.mark.parametrize(
        "fn",
        [ad.exp, ad.sqrt, ad.sigmoid, ad.tanh, ad.silu, ad.relu, ad.log],
        ids=["exp", "sqrt", "sigmoid", "tanh", "silu", "relu", "log"],
    )
    def test_unary(self, fn):
        def build(t):
            shifted = ad.add(ad.mul(t, 0.3), 2.0)  # keep log/sqrt domains positive
            return ad.tsum(fn(shifted))

        check_op(build, (4, 5), atol=1e-7)

    def test_binary_broadcast(self):
        rng = np.random.default_rng(1)
        b = rng.standard_normal((1, 5)) + 3.0

        def build(t):
            return ad.tsum(ad.div(ad.mul(ad.sub(t, 1.5), Tensor(b)), Tensor(b + 1.0)))

        check_op(build, (4, 5))

    def test_power(self):
        check_op(lambda t: ad.tsum(ad.power(ad.add(ad.mul(t, t), 1.0), 1.7)), (3, 3))


class TestShapeGrads:
    def test_reshape_transpose_concat_slice(self):
        def build(t):
            a = ad.reshape(t, (2, 12))
            b = ad.transpose(a, (1, 0))
            c = ad.concat([b, ad.mul(b, 2.0)], axis=1)
            d = ad.tslice(c, (slice(0, 6), slice(None)))
            return ad.tsum(ad.mul(d, d))

        check_op(build, (2, 3, 4))

    def test_repeat2x(self):
        check_op(lambda t: ad.tsum(ad.mul(ad.repeat2x(t), 0.7)), (2, 4, 4, 3))

    def test_sum_mean_axes(self):
        def build(t):
            s = ad.tsum(t, axis=1, keepdims=True)
            m = ad.tmean(t, axis=(0, 2))
            return ad.add(ad.tsum(ad.mul(s, s)), ad.tsum(ad.mul(m, m)))

        check_op(build, (3, 4, 5))

    def test_sorted_sum_matches_sum_value_and_grad(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 6, 3))
        t = Tensor.param(x.copy())
        out = ad.tsum(ad.mul(ad.sorted_sum(t, axis=1), 1.3))
        out.backward()
        np.testing.assert_allclose(
            ad.sorted_sum(Tensor(x), axis=1).data, x.sum(axis=1), rtol=1e-12
        )
        np.testing.assert_allclose(t.grad, np.full_like(x, 1.3))

    def test_sorted_sum_permutation_bit_exact(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 8))
        perm = rng.permutation(8)
        a = ad.sorted_sum(Tensor(x), axis=1).data
        b = ad.sorted_sum(Tensor(x[:, perm]), axis=1).data
        assert np.array_equal(a, b)


class TestMatmulConvGrads:
    def test_matmul_broadcast(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((4, 3))

        def build(t):
            return ad.tsum(ad.tanh(ad.matmul(t, Tensor(w))))

        check_op(build, (2, 5, 4))

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 2)])
    def test_conv2d_input_grad(self, stride, pad, k):
        rng = np.random.default_rng(6)
        w = rng.standard_normal((k, k, 2, 3))

        def build(t):
            return ad.tsum(ad.silu(ad.conv2d(t, Tensor(w), stride=stride, pad=pad)))

        check_op(build, (2, 6, 6, 2), atol=1e-7)

    def test_conv2d_weight_and_bias_grad(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((2, 5, 5, 2))
        w0 = rng.standard_normal((3, 3, 2, 3))
        b0 = rng.standard_normal(3)

        def loss_wrt_w(wv):
            return float((ad.conv2d(Tensor(x), Tensor(wv), Tensor(b0), 1, 1).data ** 2).sum())

        wt = Tensor.param(w0.copy())
        bt = Tensor.param(b0.copy())
        out = ad.conv2d(Tensor(x), wt, bt, stride=1, pad=1)
        ad.tsum(ad.mul(out, out)).backward()
        num_w = numeric_grad(lambda arr: loss_wrt_w(arr), w0.copy())
        np.testing.assert_allclose(wt.grad, num_w, rtol=1e-5, atol=1e-6)

        def loss_wrt_b(bv):
            return float((ad.conv2d(Tensor(x), Tensor(w0), Tensor(bv), 1, 1).data ** 2).sum())

        num_b = numeric_grad(loss_wrt_b, b0.copy())
        np.testing.assert_allclose(bt.grad, num_b, rtol=1e-5, atol=1e-6)

    def test_avg_pool_and_resize(self):
        check_op(lambda t: ad.tsum(ad.mul(ad.avg_pool2d(t, 2), 0.5)), (2, 4, 4, 2))
        check_op(lambda t: ad.tsum(ad.silu(ad.resize_bilinear(t, 7, 9))), (1, 3, 4, 2))

    def test_bilinear_matrix_rows_sum_to_one(self):
        for n_in, n_out in [(8, 32), (32, 8), (5, 7)]:
            m = ad.bilinear_matrix(n_in, n_out)
            np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)


class TestLayers:
    def test_groupnorm_grad(self):
        gn = GroupNorm(4, groups=2, dtype=np.float64)

        def build(t):
            return ad.tsum(ad.mul(gn(t), gn(t)))

        check_op(build, (2, 3, 3, 4), rtol=1e-5, atol=1e-6)

    def test_groupnorm_normalizes(self):
        rng = np.random.default_rng(11)
        gn = GroupNorm(8, groups=4, dtype=np.float64)
        x = Tensor(rng.standard_normal((3, 5, 5, 8)) * 4 + 2)
        y = gn(x).data.reshape(3, 25, 4, 2).transpose(0, 2, 1, 3).reshape(3, 4, -1)
        np.testing.assert_allclose(y.mean(axis=2), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.std(axis=2), 1.0, atol=1e-4)

    def test_module_param_paths(self):
        rng = np.random.default_rng(0)

        class Net(Module):
            def __init__(self):
                super().__init__()
                self.fc = self.add_module("fc", Linear(3, 2, rng=rng))
                self.conv = self.add_module("conv", Conv2d(1, 2, rng=rng))

        names = sorted(k for k, _ in Net().named_params())
        assert names == ["conv.b", "conv.w", "fc.b", "fc.w"]

    def test_log_softmax_rows(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((6, 10))
        ls = ad.log_softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(np.exp(ls).sum(axis=1), 1.0, atol=1e-12)

    def test_state_roundtrip_and_strict_errors(self):
        rng = np.random.default_rng(13)
        lin = Linear(4, 3, rng=rng)
        state = {k: v.copy() for k, v in lin.state_arrays().items()}
        lin.w.data[:] = 0
        lin.load_state_arrays(state)
        np.testing.assert_array_equal(lin.w.data, state["w"])
        with pytest.raises(KeyError):
            lin.load_state_arrays({"w": state["w"]})
        with pytest.raises(ValueError):
            lin.load_state_arrays({"w": np.zeros((2, 2), np.float32), "b": state["b"]})


class TestOptim:
    def test_adam_descends_quadratic(self):
        p = Tensor.param(np.array([5.0, -3.0]))
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            loss = ad.tsum(ad.mul(p, p))
            loss.backward()
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_ema_tracks_and_converges(self):
        p = Tensor.param(np.zeros(3))
        ema = EMA({"p": p}, decay=0.0)  # decay 0: shadow equals current weights
        p.data[:] = 7.0
        ema.update({"p": p})
        np.testing.assert_array_equal(ema.shadow["p"], p.data)
        ema2 = EMA({"p": p}, decay=0.9)
        p.data[:] = 0.0
        for _ in range(200):
            ema2.update({"p": p})
        assert np.abs(ema2.shadow["p"]).max() < 1e-8
