"""Minimal reverse-mode automatic differentiation over numpy arrays.

Design: a `Tensor` wraps an ndarray plus a closure that routes its upstream
gradient to its parents. `backward()` runs a topological sweep. Only the ops
this project needs are provided; all of them broadcast like numpy and reduce
gradients back to the parent shapes.

dtype discipline: ops inherit the dtype of their inputs (float32 in training,
float64 in gradient-check tests). No implicit down-casts.
"""

from __future__ import annotations

import numpy as np


def _sum_to_shape(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    # sum out prepended broadcast axes
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    # -- construction ------------------------------------------------------

    @staticmethod
    def param(data) -> "Tensor":
        return Tensor(np.asarray(data), requires_grad=True)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph bookkeeping ---------------------------------------------------

    def _accumulate(self, g: np.ndarray, own: bool = False):
        """Add an upstream gradient. own=True promises g is freshly allocated
        and unaliased, so it can be adopted without a defensive copy."""
        if self.grad is None:
            if own and g.dtype == self.data.dtype:
                self.grad = g
            else:
                self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_GRAD_ENABLED = True


class no_grad:
    """Context manager suppressing tape construction (inference passes)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._saved = _GRAD_ENABLED
        _GRAD_ENABLED = False

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._saved
        return False


def _make(data, parents, backward) -> Tensor:
    """Build an op output; prunes the tape when no parent needs gradients."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._parents for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
        out.requires_grad = any(p.requires_grad for p in parents)
    return out


# -- arithmetic --------------------------------------------------------------
# Python-number operands take a scalar fast path: numpy 2 treats them as
# weakly typed (float32 arrays stay float32), whereas wrapping them in a 0-d
# float64 array would promote the whole graph to float64.


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _scalar_unary(a, out_data, dfda) -> Tensor:
    def bwd(g):
        a._accumulate(g * dfda if dfda is not None else g)

    return _make(out_data, (a,), bwd)


def add(a, b) -> Tensor:
    if _is_number(b) or _is_number(a):
        if _is_number(a):
            a, b = b, a
        a = as_tensor(a)
        return _scalar_unary(a, a.data + b, None)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        a._accumulate(_sum_to_shape(g, a.shape))
        b._accumulate(_sum_to_shape(g, b.shape))

    return _make(out_data, (a, b), bwd)


def sub(a, b) -> Tensor:
    if _is_number(b):
        a = as_tensor(a)
        return _scalar_unary(a, a.data - b, None)
    if _is_number(a):
        b = as_tensor(b)
        out_data = a - b.data

        def bwd_s(g):
            b._accumulate(-g, own=True)

        return _make(out_data, (b,), bwd_s)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        a._accumulate(_sum_to_shape(g, a.shape))
        b._accumulate(_sum_to_shape(-g, b.shape))

    return _make(out_data, (a, b), bwd)


def mul(a, b) -> Tensor:
    if _is_number(b) or _is_number(a):
        if _is_number(a):
            a, b = b, a
        a = as_tensor(a)
        out_data = a.data * b

        def bwd_s(g):
            a._accumulate(g * b, own=True)

        return _make(out_data, (a,), bwd_s)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        a._accumulate(_sum_to_shape(g * b.data, a.shape), own=True)
        b._accumulate(_sum_to_shape(g * a.data, b.shape), own=True)

    return _make(out_data, (a, b), bwd)


def div(a, b) -> Tensor:
    if _is_number(b):
        return mul(a, 1.0 / b)
    if _is_number(a):
        b = as_tensor(b)
        out_data = a / b.data

        def bwd_s(g):
            b._accumulate(-g * out_data / b.data, own=True)

        return _make(out_data, (b,), bwd_s)
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        a._accumulate(_sum_to_shape(g / b.data, a.shape), own=True)
        b._accumulate(_sum_to_shape(-g * a.data / (b.data * b.data), b.shape), own=True)

    return _make(out_data, (a, b), bwd)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    out_data = a.data**p

    def bwd(g):
        a._accumulate(g * p * a.data ** (p - 1), own=True)

    return _make(out_data, (a,), bwd)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        a._accumulate(g * out_data, own=True)

    return _make(out_data, (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        a._accumulate(g / a.data, own=True)

    return _make(out_data, (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.sqrt(a.data)

    def bwd(g):
        a._accumulate(g * 0.5 / out_data, own=True)

    return _make(out_data, (a,), bwd)


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a._accumulate(g * out_data * (1.0 - out_data), own=True)

    return _make(out_data, (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        a._accumulate(g * (1.0 - out_data * out_data), own=True)

    return _make(out_data, (a,), bwd)


def silu(a) -> Tensor:
    """x * sigmoid(x), fused forward/backward."""
    a = as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def bwd(g):
        a._accumulate(g * (s * (1.0 + a.data * (1.0 - s))), own=True)

    return _make(out_data, (a,), bwd)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0.0)

    def bwd(g):
        a._accumulate(g * mask, own=True)

    return _make(out_data, (a,), bwd)


# -- shape ops ----------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old_shape = a.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accumulate(g.reshape(old_shape))

    return _make(out_data, (a,), bwd)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    out_data = np.transpose(a.data, axes)
    inv = np.argsort(axes)

    def bwd(g):
        a._accumulate(np.transpose(g, inv))

    return _make(out_data, (a,), bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        for t, p in zip(tensors, parts):
            t._accumulate(p)

    return _make(out_data, tuple(tensors), bwd)


def tslice(a, index) -> Tensor:
    """Basic (non-fancy) indexing with gradient scatter-back."""
    a = as_tensor(a)
    out_data = a.data[index]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a._accumulate(full, own=True)

    return _make(out_data, (a,), bwd)


def repeat2x(a) -> Tensor:
    """Nearest-neighbour 2x spatial upsampling of an NHWC tensor."""
    a = as_tensor(a)
    out_data = a.data.repeat(2, axis=1).repeat(2, axis=2)

    def bwd(g):
        b, h2, w2, c = g.shape
        gr = g.reshape(b, h2 // 2, 2, w2 // 2, 2, c).sum(axis=(2, 4))
        a._accumulate(gr, own=True)

    return _make(out_data, (a,), bwd)


# -- reductions ----------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy(), own=True)
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape).copy(), own=True)

    return _make(out_data, (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def spatial_max(a) -> Tensor:
    """Max over the spatial axes of an NHWC tensor; gradient scatters to the
    argmax positions."""
    a = as_tensor(a)
    b, h, w, c = a.shape
    flat = a.data.reshape(b, h * w, c)
    idx = flat.argmax(axis=1)  # (B, C)
    out_data = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]

    def bwd(g):
        gx = np.zeros_like(flat)
        np.put_along_axis(gx, idx[:, None, :], g[:, None, :], axis=1)
        a._accumulate(gx.reshape(b, h, w, c), own=True)

    return _make(out_data, (a,), bwd)


def sorted_sum(a, axis: int) -> Tensor:
    """Sum along `axis` after sorting, so the result is invariant (bit-exact)
    to any permutation of the inputs along that axis. Gradient equals the
    plain-sum gradient (ones broadcast)."""
    a = as_tensor(a)
    # ascontiguousarray pins the accumulation order to the sorted values only;
    # without it the summation order follows the (permutation-dependent) strides
    out_data = np.ascontiguousarray(np.sort(a.data, axis=axis)).sum(axis=axis)

    def bwd(g):
        a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(), own=True)

    return _make(out_data, (a,), bwd)


# -- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Broadcasting batched matmul (numpy @ semantics, both operands ≥ 2-D)."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        a._accumulate(_sum_to_shape(ga, a.shape), own=True)
        b._accumulate(_sum_to_shape(gb, b.shape), own=True)

    return _make(out_data, (a, b), bwd)


# -- convolution -----------------------------------------------------------------


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    out = np.zeros(
        (x.shape[0], x.shape[1] + 2 * pad, x.shape[2] + 2 * pad, x.shape[3]), dtype=x.dtype
    )
    out[:, pad:-pad, pad:-pad, :] = x
    return out


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """NHWC (B,H,W,C) -> contiguous (B, OH*OW, kh*kw*C). Channels-last makes
    every per-tap slice copy and the GEMM operands contiguous."""
    xp = _pad_hw(x, pad)
    b, _, _, c = x.shape
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    cols = np.empty((b, oh, ow, kh * kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i * kw + j, :] = xp[
                :, i : i + oh * stride : stride, j : j + ow * stride : stride, :
            ]
    return cols.reshape(b, oh * ow, kh * kw * c), oh, ow


def _conv_fwd(x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    kh, kw, ci, co = w.shape
    cols, oh, ow = _im2col(x, kh, kw, stride, pad)
    b = x.shape[0]
    flat = cols.reshape(b * oh * ow, kh * kw * ci)  # free reshape, one big GEMM
    out = flat @ w.reshape(kh * kw * ci, co)
    return out.reshape(b, oh, ow, co), cols


def conv2d(x, w, b=None, stride: int = 1, pad: int = 1) -> Tensor:
    """2-D convolution (cross-correlation) on NHWC input with HWIO weights."""
    x, w = as_tensor(x), as_tensor(w)
    xv, wv = x.data, w.data
    kh, kw, ci, co = wv.shape
    out_data, cols = _conv_fwd(xv, wv, stride, pad)
    if b is not None:
        b = as_tensor(b)
        out_data = out_data + b.data
    in_h, in_w = xv.shape[1], xv.shape[2]
    oh, ow = out_data.shape[1], out_data.shape[2]

    def bwd(g):
        if b is not None:
            b._accumulate(g.sum(axis=(0, 1, 2)), own=True)
        bsz = g.shape[0]
        gm = g.reshape(bsz * oh * ow, co)
        # dW: one GEMM over batch x positions (both operands contiguous)
        gw = cols.reshape(bsz * oh * ow, kh * kw * ci).T @ gm
        w._accumulate(gw.reshape(kh, kw, ci, co), own=True)
        # dx: one GEMM back to patch space, then per-tap scatter-adds
        wr = np.ascontiguousarray(wv.reshape(kh * kw * ci, co).T)
        dcols = (gm @ wr).reshape(bsz, oh, ow, kh * kw, ci)
        gxp = np.zeros((bsz, in_h + 2 * pad, in_w + 2 * pad, ci), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + oh * stride : stride, j : j + ow * stride : stride, :] += dcols[
                    :, :, :, i * kw + j, :
                ]
        gslice = gxp[:, pad : pad + in_h, pad : pad + in_w, :]
        x._accumulate(np.ascontiguousarray(gslice) if pad else gslice, own=True)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out_data, parents, bwd)


def avg_pool2d(x, k: int = 2) -> Tensor:
    x = as_tensor(x)
    b, h, w, c = x.shape
    out_data = x.data.reshape(b, h // k, k, w // k, k, c).mean(axis=(2, 4))

    def bwd(g):
        gx = np.broadcast_to(
            g[:, :, None, :, None, :] / (k * k), (b, h // k, k, w // k, k, c)
        ).reshape(b, h, w, c)
        x._accumulate(gx.copy(), own=True)

    return _make(out_data, (x,), bwd)


# -- fixed linear resampling ------------------------------------------------------


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """Row-stochastic 1-D bilinear interpolation matrix (half-pixel centers)."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        lo = int(np.floor(src))
        frac = src - lo
        lo_c = min(max(lo, 0), n_in - 1)
        hi_c = min(max(lo + 1, 0), n_in - 1)
        m[i, lo_c] += 1.0 - frac
        m[i, hi_c] += frac
    return m


def resize_bilinear(x, out_h: int, out_w: int) -> Tensor:
    """Differentiable separable bilinear resize of an NHWC tensor."""
    x = as_tensor(x)
    b, h, w, c = x.shape
    mr = Tensor(bilinear_matrix(h, out_h, x.dtype))
    mc = Tensor(bilinear_matrix(w, out_w, x.dtype))
    # rows: (H2,H) @ (B, H, W*C) -> (B, H2, W*C)
    y = matmul(mr, reshape(x, (b, h, w * c)))
    # cols: batch (B*H2), (W2,W) @ (W, C)
    y = matmul(mc, reshape(y, (b * out_h, w, c)))
    return reshape(y, (b, out_h, out_w, c))


# -- composite helpers -------------------------------------------------------------


def softmax_stable_parts(logits: Tensor, axis: int):
    """exp(l - max) with a detached max; building block for attention."""
    m = logits.data.max(axis=axis, keepdims=True)
    return exp(sub(logits, Tensor(m)))


def log_softmax(logits: Tensor, axis: int = -1) -> Tensor:
    m = logits.data.max(axis=axis, keepdims=True)
    shifted = sub(logits, Tensor(m))
    lse = log(tsum(exp(shifted), axis=axis, keepdims=True))
    return sub(shifted, lse)
