"""Parameter containers and the handful of layers the models are built from.

A `Module` owns named parameters and submodules; `named_params()` yields
dot-joined paths, which are also the checkpoint keys. Initialization takes an
explicit numpy Generator so model construction is reproducible.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._modules: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor.param(value)
        self._params[name] = t
        return t

    def add_module(self, name: str, mod: "Module") -> "Module":
        self._modules[name] = mod
        return mod

    def named_params(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, m in self._modules.items():
            yield from m.named_params(prefix + name + ".")

    def params(self) -> list[Tensor]:
        return [p for _, p in self.named_params()]

    def param_dict(self) -> dict[str, Tensor]:
        return dict(self.named_params())

    def n_params(self) -> int:
        return sum(p.data.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_params()}

    def load_state_arrays(self, state: dict[str, np.ndarray], strict: bool = True):
        own = self.param_dict()
        for k, v in state.items():
            if k not in own:
                if strict:
                    raise KeyError(f"unexpected parameter {k!r}")
                continue
            if own[k].data.shape != v.shape:
                raise ValueError(
                    f"shape mismatch for {k!r}: have {own[k].data.shape}, got {v.shape}"
                )
            own[k].data = v.astype(own[k].data.dtype, copy=True)
        if strict:
            missing = set(own) - set(state)
            if missing:
                raise KeyError(f"missing parameters: {sorted(missing)}")


def _kaiming(rng: np.random.Generator, fan_in: int, shape, dtype) -> np.ndarray:
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    """NHWC convolution layer with HWIO weights."""

    def __init__(self, c_in, c_out, k=3, stride=1, pad=None, rng=None, dtype=np.float32, zero_init=False):
        super().__init__()
        self.stride = stride
        self.pad = (k // 2) if pad is None else pad
        w = np.zeros((k, k, c_in, c_out), dtype=dtype) if zero_init else _kaiming(
            rng, c_in * k * k, (k, k, c_in, c_out), dtype
        )
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(c_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32, zero_init=False):
        super().__init__()
        w = np.zeros((n_in, n_out), dtype=dtype) if zero_init else _kaiming(
            rng, n_in, (n_in, n_out), dtype
        )
        self.w = self.add_param("w", w)
        self.b = self.add_param("b", np.zeros(n_out, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.matmul(x, self.w), self.b)


class GroupNorm(Module):
    """Group normalization on NHWC tensors, composed from primitive ops
    (backward via the tape)."""

    def __init__(self, channels, groups=8, eps=1e-5, dtype=np.float32):
        super().__init__()
        if channels % groups:
            groups = 1
        self.groups = groups
        self.eps = eps
        self.g = self.add_param("g", np.ones(channels, dtype=dtype))
        self.b = self.add_param("b", np.zeros(channels, dtype=dtype))

    def __call__(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        xg = ad.reshape(x, (b, h * w, self.groups, c // self.groups))
        mu = ad.tmean(xg, axis=(1, 3), keepdims=True)
        xc = ad.sub(xg, mu)
        var = ad.tmean(ad.mul(xc, xc), axis=(1, 3), keepdims=True)
        xn = ad.div(xc, ad.sqrt(ad.add(var, self.eps)))
        xn = ad.reshape(xn, (b, h, w, c))
        return ad.add(ad.mul(xn, self.g), self.b)


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of (possibly fractional) timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = np.asarray(t, dtype=np.float64).reshape(-1, 1) * freqs[None, :]
    emb = np.concatenate([np.cos(args), np.sin(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], 1))], axis=1)
    return emb.astype(dtype)
