"""Small manual-gradient layer toolkit.

Every module caches what its backward pass needs during forward and
accumulates parameter gradients into Param.grad; call zero_grad between
steps. Forward/backward operate on the trailing feature axis so the same
layers serve (B, F, K, c) and flattened block tensors alike.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Param:
    """A trainable tensor plus its accumulated gradient."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def glorot_normal(rng: np.random.Generator, fan_in: int, fan_out: int,
                  dtype: np.dtype) -> np.ndarray:
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return (rng.standard_normal((fan_in, fan_out)) * std).astype(dtype)


class Linear:
    """Affine map on the last axis; bias optional."""

    def __init__(self, rng: np.random.Generator, in_dim: int, out_dim: int,
                 dtype: np.dtype, bias: bool = True):
        self.weight = Param(glorot_normal(rng, in_dim, out_dim, dtype))
        self.bias = Param(np.zeros(out_dim, dtype=dtype)) if bias else None
        self._x: np.ndarray | None = None

    def named_params(self):
        yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.weight.value
        if self.bias is not None:
            y = y + self.bias.value
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        self.weight.grad += flat_x.T @ flat_dy
        if self.bias is not None:
            self.bias.grad += flat_dy.sum(axis=0)
        return dy @ self.weight.value.T


class LayerNorm:
    """Normalization over the last axis with learned scale and shift."""

    def __init__(self, dim: int, dtype: np.dtype, eps: float = 1e-5):
        self.scale = Param(np.ones(dim, dtype=dtype))
        self.shift = Param(np.zeros(dim, dtype=dtype))
        self.eps = eps
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def named_params(self):
        yield "scale", self.scale
        yield "shift", self.shift

    def forward(self, x: np.ndarray) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._xhat = xhat
        self._inv_std = inv_std
        return xhat * self.scale.value + self.shift.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat = self._xhat
        flat_dy = dy.reshape(-1, dy.shape[-1])
        self.scale.grad += (flat_dy * xhat.reshape(-1, xhat.shape[-1])).sum(axis=0)
        self.shift.grad += flat_dy.sum(axis=0)
        dxhat = dy * self.scale.value
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return self._inv_std * (dxhat - m1 - xhat * m2)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


class FeedForward:
    """Two-layer position-wise expansion block with exact-erf activation."""

    def __init__(self, rng: np.random.Generator, dim: int, expansion: int,
                 dtype: np.dtype):
        self.inner = Linear(rng, dim, dim * expansion, dtype)
        self.outer = Linear(rng, dim * expansion, dim, dtype)
        self._pre: np.ndarray | None = None

    def named_params(self):
        for name, p in self.inner.named_params():
            yield "inner." + name, p
        for name, p in self.outer.named_params():
            yield "outer." + name, p

    def forward(self, x: np.ndarray) -> np.ndarray:
        pre = self.inner.forward(x)
        self._pre = pre
        return self.outer.forward(gelu(pre))

    def backward(self, dy: np.ndarray) -> np.ndarray:
        dmid = self.outer.backward(dy)
        return self.inner.backward(dmid * gelu_grad(self._pre))
