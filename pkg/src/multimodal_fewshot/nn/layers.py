"""Neural-network building blocks with explicit forward/backward passes.

Everything is plain numpy. Layers own their parameter and gradient arrays
(gradients are accumulated in place, so one optimizer step can follow
several backward calls), and every backward pass is written against the
corresponding forward cache. Analytic gradients are verified against
central finite differences in the test suite.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def glorot(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Holds named parameter arrays and their gradient accumulators."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def _add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return value

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0

    def param_items(self, prefix: str):
        for name, value in self.params.items():
            yield f"{prefix}.{name}", value

    def grad_items(self, prefix: str):
        for name, value in self.grads.items():
            yield f"{prefix}.{name}", value


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng, dtype=np.float32):
        super().__init__()
        self.w = self._add_param("w", glorot(rng, (n_in, n_out), dtype))
        self.b = self._add_param("b", np.zeros(n_out, dtype=dtype))

    def forward(self, x: np.ndarray):
        return x @ self.w + self.b, x

    def backward(self, cache, dy: np.ndarray):
        x = cache
        self.grads["w"] += x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.w.T


class RNN(Layer):
    """Single tanh recurrent layer over (batch, time, features) input."""

    def __init__(self, n_in: int, hidden: int, rng, dtype=np.float32):
        super().__init__()
        self.wx = self._add_param("wx", glorot(rng, (n_in, hidden), dtype))
        self.wh = self._add_param("wh", glorot(rng, (hidden, hidden), dtype))
        self.b = self._add_param("b", np.zeros(hidden, dtype=dtype))
        self.hidden = hidden

    def forward(self, x: np.ndarray):
        batch, steps, _ = x.shape
        states = np.zeros((batch, steps + 1, self.hidden), dtype=x.dtype)
        for t in range(steps):
            pre = x[:, t, :] @ self.wx + states[:, t, :] @ self.wh + self.b
            states[:, t + 1, :] = np.tanh(pre)
        return states[:, 1:, :], (x, states)

    def backward(self, cache, d_out: np.ndarray):
        x, states = cache
        batch, steps, _ = x.shape
        dx = np.zeros_like(x)
        carry = np.zeros((batch, self.hidden), dtype=x.dtype)
        for t in range(steps - 1, -1, -1):
            dh = d_out[:, t, :] + carry
            da = dh * (1.0 - states[:, t + 1, :] ** 2)
            self.grads["wx"] += x[:, t, :].T @ da
            self.grads["wh"] += states[:, t, :].T @ da
            self.grads["b"] += da.sum(axis=0)
            dx[:, t, :] = da @ self.wx.T
            carry = da @ self.wh.T
        return dx


class RNNStack:
    """Stacked recurrent layers; exposes the top layer's state sequence."""

    def __init__(self, n_in: int, hidden: int, depth: int, rng, dtype=np.float32):
        self.cells = []
        size = n_in
        for _ in range(depth):
            self.cells.append(RNN(size, hidden, rng, dtype))
            size = hidden

    def forward(self, x: np.ndarray):
        caches = []
        out = x
        for cell in self.cells:
            out, cache = cell.forward(out)
            caches.append(cache)
        return out, caches

    def backward(self, caches, d_out: np.ndarray):
        for cell, cache in zip(reversed(self.cells), reversed(caches)):
            d_out = cell.backward(cache, d_out)
        return d_out


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    batch, chans, height, width = x.shape
    oh = (height + 2 * pad - k) // stride + 1
    ow = (width + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    s0, s1, s2, s3 = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(batch, chans, oh, ow, k, k),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
    )
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch, oh * ow, chans * k * k)
    return np.ascontiguousarray(cols), oh, ow


def _col2im(cols: np.ndarray, x_shape, k: int, stride: int, pad: int) -> np.ndarray:
    batch, chans, height, width = x_shape
    oh = (height + 2 * pad - k) // stride + 1
    ow = (width + 2 * pad - k) // stride + 1
    xp = np.zeros((batch, chans, height + 2 * pad, width + 2 * pad), dtype=cols.dtype)
    blocks = cols.reshape(batch, oh, ow, chans, k, k).transpose(0, 3, 1, 2, 4, 5)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += blocks[..., ki, kj]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


class Conv2d(Layer):
    """3x3-style convolution via im2col; weight stored as (c_in*k*k, c_out)."""

    def __init__(self, c_in: int, c_out: int, rng, k: int = 3, stride: int = 1, pad: int = 1, dtype=np.float32):
        super().__init__()
        self.k, self.stride, self.pad = k, stride, pad
        self.c_in, self.c_out = c_in, c_out
        self.w = self._add_param("w", glorot(rng, (c_in * k * k, c_out), dtype))
        self.b = self._add_param("b", np.zeros(c_out, dtype=dtype))

    def forward(self, x: np.ndarray):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"expected {self.c_in} input channels, got {x.shape[1]}")
        cols, oh, ow = _im2col(x, self.k, self.stride, self.pad)
        y = cols @ self.w + self.b
        y = y.transpose(0, 2, 1).reshape(x.shape[0], self.c_out, oh, ow)
        return y, (cols, x.shape)

    def backward(self, cache, dy: np.ndarray):
        cols, x_shape = cache
        batch, _, oh, ow = dy.shape
        dy2 = np.ascontiguousarray(dy.reshape(batch, self.c_out, oh * ow).transpose(0, 2, 1))
        flat_cols = cols.reshape(-1, cols.shape[-1])
        flat_dy = dy2.reshape(-1, self.c_out)
        self.grads["w"] += flat_cols.T @ flat_dy
        self.grads["b"] += flat_dy.sum(axis=0)
        dcols = dy2 @ self.w.T
        return _col2im(dcols, x_shape, self.k, self.stride, self.pad)


class ConvTranspose2d(Layer):
    """Strided transposed convolution; weight stored as (c_in, c_out*k*k)."""

    def __init__(self, c_in: int, c_out: int, rng, k: int = 3, stride: int = 2, pad: int = 1,
                 out_pad: int = 1, dtype=np.float32):
        super().__init__()
        self.k, self.stride, self.pad, self.out_pad = k, stride, pad, out_pad
        self.c_in, self.c_out = c_in, c_out
        self.w = self._add_param("w", glorot(rng, (c_in, c_out * k * k), dtype))
        self.b = self._add_param("b", np.zeros(c_out, dtype=dtype))

    def out_size(self, size: int) -> int:
        return (size - 1) * self.stride - 2 * self.pad + self.k + self.out_pad

    def forward(self, x: np.ndarray):
        batch, _, h, w = x.shape
        xf = x.transpose(0, 2, 3, 1).reshape(batch, h * w, self.c_in)
        cols = xf @ self.w
        out_shape = (batch, self.c_out, self.out_size(h), self.out_size(w))
        y = _col2im(cols, out_shape, self.k, self.stride, self.pad)
        y += self.b[None, :, None, None]
        return y, (xf, x.shape)

    def backward(self, cache, dy: np.ndarray):
        xf, x_shape = cache
        batch, _, h, w = x_shape
        self.grads["b"] += dy.sum(axis=(0, 2, 3))
        dcols, _, _ = _im2col(dy, self.k, self.stride, self.pad)
        self.grads["w"] += xf.reshape(-1, self.c_in).T @ dcols.reshape(-1, dcols.shape[-1])
        dxf = dcols @ self.w.T
        return dxf.reshape(batch, h, w, self.c_in).transpose(0, 3, 1, 2)


class MaxPool2d:
    """2x2 max pooling, stride 2; gradient routes to the first argmax."""

    def __init__(self, size: int = 2):
        self.size = size

    def forward(self, x: np.ndarray):
        batch, chans, height, width = x.shape
        s = self.size
        h2, w2 = height // s, width // s
        stacked = (
            x.reshape(batch, chans, h2, s, w2, s)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, chans, h2, w2, s * s)
        )
        idx = stacked.argmax(axis=-1)
        y = np.take_along_axis(stacked, idx[..., None], axis=-1)[..., 0]
        return y, (idx, x.shape)

    def backward(self, cache, dy: np.ndarray):
        idx, x_shape = cache
        batch, chans, height, width = x_shape
        s = self.size
        h2, w2 = height // s, width // s
        dstacked = np.zeros((batch, chans, h2, w2, s * s), dtype=dy.dtype)
        np.put_along_axis(dstacked, idx[..., None], dy[..., None], axis=-1)
        return (
            dstacked.reshape(batch, chans, h2, w2, s, s)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, chans, height, width)
        )


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def sigmoid_forward(x):
    y = 1.0 / (1.0 + np.exp(-x))
    return y, y


def sigmoid_backward(dy, y):
    return dy * y * (1.0 - y)
