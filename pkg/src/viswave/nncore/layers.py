"""Layer menu for the minimal reverse-mode core.

Each layer is a frozen descriptor with forward/backward methods. forward
returns (output, cache); backward takes (params, cache, grad_out) and returns
(param_grads, grad_in). Parameter initialization draws W from
uniform(+-sqrt(6/(fan_in+fan_out))) and zeros biases, in declaration order, so
runs are reproducible from the generator seed alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int

    def init(self, rng, dtype):
        w = _glorot(rng, self.n_in, self.n_out, (self.n_in, self.n_out), dtype)
        return [w, np.zeros(self.n_out, dtype=dtype)]

    def out_shape(self, in_shape):
        if in_shape[-1] != self.n_in:
            raise ShapeError(f"Dense({self.n_in},{self.n_out}) fed {in_shape}")
        return (*in_shape[:-1], self.n_out)

    def forward(self, params, x):
        w, b = params
        if x.shape[-1] != self.n_in:
            raise ShapeError(f"Dense({self.n_in},{self.n_out}) fed {x.shape}")
        return x @ w + b, x

    def backward(self, params, cache, gy):
        w, _ = params
        x = cache
        gw = x.reshape(-1, self.n_in).T @ gy.reshape(-1, self.n_out)
        gb = gy.reshape(-1, self.n_out).sum(axis=0)
        return [gw, gb], gy @ w.T


@dataclass(frozen=True)
class Conv2D:
    """Valid-padding 2D convolution on (B, C, H, W) inputs."""

    in_ch: int
    out_ch: int
    k: int
    stride: int = 1

    def init(self, rng, dtype):
        fan_in = self.in_ch * self.k * self.k
        fan_out = self.out_ch * self.k * self.k
        w = _glorot(rng, fan_in, fan_out, (self.out_ch, self.in_ch, self.k, self.k), dtype)
        return [w, np.zeros(self.out_ch, dtype=dtype)]

    def _out_hw(self, h, w):
        if h < self.k or w < self.k:
            raise ShapeError(f"Conv2D k={self.k} input {h}x{w} too small")
        return (h - self.k) // self.stride + 1, (w - self.k) // self.stride + 1

    def out_shape(self, in_shape):
        b, c, h, w = in_shape
        if c != self.in_ch:
            raise ShapeError(f"Conv2D expects {self.in_ch} channels, got {in_shape}")
        oh, ow = self._out_hw(h, w)
        return (b, self.out_ch, oh, ow)

    def _cols(self, x, oh, ow):
        b = x.shape[0]
        s, k = self.stride, self.k
        cols = np.empty((b, self.in_ch, k, k, oh, ow), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                cols[:, :, ki, kj] = x[:, :, ki : ki + s * oh : s, kj : kj + s * ow : s]
        # (B*OH*OW, C*k*k) for one GEMM
        return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, -1)

    def forward(self, params, x):
        w, bias = params
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ShapeError(f"Conv2D expects (B,{self.in_ch},H,W), got {x.shape}")
        b = x.shape[0]
        oh, ow = self._out_hw(x.shape[2], x.shape[3])
        cols = self._cols(x, oh, ow)
        y = cols @ w.reshape(self.out_ch, -1).T + bias
        y = y.reshape(b, oh, ow, self.out_ch).transpose(0, 3, 1, 2)
        return y, (cols, x.shape, oh, ow)

    def backward(self, params, cache, gy):
        w, _ = params
        cols, x_shape, oh, ow = cache
        b = x_shape[0]
        s, k = self.stride, self.k
        gyr = gy.transpose(0, 2, 3, 1).reshape(b * oh * ow, self.out_ch)
        gw = (gyr.T @ cols).reshape(w.shape)
        gb = gyr.sum(axis=0)
        gcols = (gyr @ w.reshape(self.out_ch, -1)).reshape(b, oh, ow, self.in_ch, k, k)
        gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
        gx = np.zeros(x_shape, dtype=gy.dtype)
        for ki in range(k):
            for kj in range(k):
                gx[:, :, ki : ki + s * oh : s, kj : kj + s * ow : s] += gcols[:, :, ki, kj]
        return [gw, gb], gx


@dataclass(frozen=True)
class MaxPool:
    """k x k max pooling with stride k; trailing rows/cols beyond a multiple
    of k are cropped."""

    k: int

    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        b, c, h, w = in_shape
        if h < self.k or w < self.k:
            raise ShapeError(f"MaxPool k={self.k} input {h}x{w} too small")
        return (b, c, h // self.k, w // self.k)

    def forward(self, params, x):
        b, c, h, w = x.shape
        k = self.k
        oh, ow = h // k, w // k
        xc = x[:, :, : oh * k, : ow * k]
        blocks = xc.reshape(b, c, oh, k, ow, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh, ow, k * k)
        idx = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, params, cache, gy):
        idx, x_shape = cache
        b, c, h, w = x_shape
        k = self.k
        oh, ow = h // k, w // k
        gblocks = np.zeros((b, c, oh, ow, k * k), dtype=gy.dtype)
        np.put_along_axis(gblocks, idx[..., None], gy[..., None], axis=-1)
        gx = np.zeros(x_shape, dtype=gy.dtype)
        gx[:, :, : oh * k, : ow * k] = (
            gblocks.reshape(b, c, oh, ow, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, oh * k, ow * k)
        )
        return [], gx


@dataclass(frozen=True)
class Relu:
    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, params, x):
        return np.maximum(x, 0.0), x

    def backward(self, params, cache, gy):
        return [], gy * (cache > 0.0)


@dataclass(frozen=True)
class Tanh:
    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        return in_shape

    def forward(self, params, x):
        y = np.tanh(x)
        return y, y

    def backward(self, params, cache, gy):
        return [], gy * (1.0 - cache * cache)


@dataclass(frozen=True)
class Flatten:
    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        return (in_shape[0], int(np.prod(in_shape[1:])))

    def forward(self, params, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, params, cache, gy):
        return [], gy.reshape(cache)


@dataclass(frozen=True)
class Reshape:
    """Vector back to (C, H, W); inverse of Flatten for decoder heads."""

    shape: tuple[int, ...]

    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        if int(np.prod(in_shape[1:])) != int(np.prod(self.shape)):
            raise ShapeError(f"Reshape{self.shape} fed {in_shape}")
        return (in_shape[0], *self.shape)

    def forward(self, params, x):
        return x.reshape(x.shape[0], *self.shape), x.shape

    def backward(self, params, cache, gy):
        return [], gy.reshape(cache)


@dataclass(frozen=True)
class NearestUpsample:
    factor: int

    def init(self, rng, dtype):
        return []

    def out_shape(self, in_shape):
        b, c, h, w = in_shape
        return (b, c, h * self.factor, w * self.factor)

    def forward(self, params, x):
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3), x.shape

    def backward(self, params, cache, gy):
        b, c, h, w = cache
        f = self.factor
        gx = gy.reshape(b, c, h, f, w, f).sum(axis=(3, 5))
        return [], gx


@dataclass(frozen=True)
class RNNCell:
    """Elman cell h' = tanh(x W + h U + b); unrolled by the network driver."""

    n_in: int
    n_hidden: int

    def init(self, rng, dtype):
        w = _glorot(rng, self.n_in, self.n_hidden, (self.n_in, self.n_hidden), dtype)
        u = _glorot(rng, self.n_hidden, self.n_hidden, (self.n_hidden, self.n_hidden), dtype)
        return [w, u, np.zeros(self.n_hidden, dtype=dtype)]

    def step(self, params, x, h):
        w, u, b = params
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise ShapeError(f"RNNCell({self.n_in},{self.n_hidden}) fed x{x.shape} h{h.shape}")
        h_next = np.tanh(x @ w + h @ u + b)
        return h_next, (x, h, h_next)

    def step_backward(self, params, cache, gh_next):
        w, u, _ = params
        x, h, h_next = cache
        pre = gh_next * (1.0 - h_next * h_next)
        gw = x.T @ pre
        gu = h.T @ pre
        gb = pre.sum(axis=0)
        return [gw, gu, gb], pre @ w.T, pre @ u.T


def rnn_step(cell_params, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Single Elman step; dimensions inferred from the parameter shapes."""
    w, u, b = cell_params
    cell = RNNCell(w.shape[0], w.shape[1])
    h_next, _ = cell.step([w, u, b], np.asarray(x), np.asarray(h))
    return h_next


LayerSpec = (
    Dense | Conv2D | MaxPool | Relu | Tanh | Flatten | Reshape | NearestUpsample
)
