"""Layers with hand-written backward passes.

Activations are (N, C, L) for the convolutional layers and (N, F) for the
dense ones. ``forward`` caches what ``backward`` needs; ``backward`` takes
the upstream gradient, accumulates parameter gradients into ``Param.grad``
and returns the gradient with respect to the input.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _accel


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)


class Module:
    training = True

    def __init__(self):
        self._children = {}
        self._params = {}
        self._buffers = {}

    def add(self, name, module):
        self._children[name] = module
        return module

    def param(self, name, value):
        p = Param(value)
        self._params[name] = p
        return p

    def buffer(self, name, value):
        self._buffers[name] = np.asarray(value, dtype=float)

    def named_params(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_params(f"{prefix}{cname}.")

    def named_buffers(self, prefix=""):
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def train(self, mode=True):
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def state_dict(self):
        state = {name: p.value.copy() for name, p in self.named_params()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state):
        for name, p in self.named_params():
            p.value[...] = state[name]
        self._load_buffers(state, "")

    def _load_buffers(self, state, prefix):
        for name in self._buffers:
            self._buffers[name] = np.array(state[prefix + name], dtype=float)
        for cname, child in self._children.items():
            child._load_buffers(state, f"{prefix}{cname}.")

    def __call__(self, x):
        return self.forward(x)


class Sequential(Module):
    def __init__(self, *layers):
        super().__init__()
        self.layers = [self.add(str(i), layer) for i, layer in enumerate(layers)]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class Conv1d(Module):
    """Stride-1 convolution with 'same' zero padding (odd kernel sizes)."""

    def __init__(self, c_in, c_out, kernel_size, rng, zero_init=False):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd")
        self.k = kernel_size
        std = 0.0 if zero_init else math.sqrt(2.0 / (c_in * kernel_size))
        self.weight = self.param("weight", rng.normal(0.0, 1.0, (c_out, c_in, kernel_size)) * std)
        self.bias = self.param("bias", np.zeros(c_out))

    def forward(self, x):
        n, c, length = x.shape
        if c != self.weight.value.shape[1]:
            raise ValueError(f"expected {self.weight.value.shape[1]} channels, got {c}")
        pad = self.k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        cols = sliding_window_view(xp, self.k, axis=2)          # (N, C, L, k)
        cols = cols.transpose(0, 2, 1, 3).reshape(n * length, c * self.k)
        self._cache = (cols, x.shape)
        w = self.weight.value.reshape(self.weight.value.shape[0], -1)
        y = cols @ w.T + self.bias.value
        return y.reshape(n, length, -1).transpose(0, 2, 1)

    def backward(self, dy):
        cols, (n, c, length) = self._cache
        c_out = dy.shape[1]
        dyf = dy.transpose(0, 2, 1).reshape(n * length, c_out)
        self.weight.grad += (dyf.T @ cols).reshape(self.weight.value.shape)
        self.bias.grad += dyf.sum(axis=0)
        dcols = (dyf @ self.weight.value.reshape(c_out, -1)).reshape(n, length, c, self.k)
        pad = self.k // 2
        dxp = np.zeros((n, c, length + 2 * pad))
        for j in range(self.k):
            dxp[:, :, j:j + length] += dcols[:, :, :, j].transpose(0, 2, 1)
        return dxp[:, :, pad:pad + length]


class BatchNorm1d(Module):
    """Per-channel normalisation over batch and length."""

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.gamma = self.param("gamma", np.ones(channels))
        self.beta = self.param("beta", np.zeros(channels))
        self.buffer("running_mean", np.zeros(channels))
        self.buffer("running_var", np.ones(channels))
        self.momentum, self.eps = momentum, eps

    def forward(self, x):
        if self.training:
            mean = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            m = x.shape[0] * x.shape[2]
            mom = self.momentum
            self._buffers["running_mean"] = (1 - mom) * self._buffers["running_mean"] + mom * mean
            unbiased = var * m / max(m - 1, 1)
            self._buffers["running_var"] = (1 - mom) * self._buffers["running_var"] + mom * unbiased
        else:
            mean, var = self._buffers["running_mean"], self._buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None]) * inv[None, :, None]
        self._cache = (xhat, inv, self.training)
        return self.gamma.value[None, :, None] * xhat + self.beta.value[None, :, None]

    def backward(self, dy):
        xhat, inv, training = self._cache
        self.gamma.grad += np.sum(dy * xhat, axis=(0, 2))
        self.beta.grad += dy.sum(axis=(0, 2))
        dxhat = dy * self.gamma.value[None, :, None]
        if not training:
            return dxhat * inv[None, :, None]
        m = dy.shape[0] * dy.shape[2]
        s1 = dxhat.sum(axis=(0, 2), keepdims=True)
        s2 = np.sum(dxhat * xhat, axis=(0, 2), keepdims=True)
        return inv[None, :, None] / m * (m * dxhat - s1 - xhat * s2)


class ReLU(Module):
    def forward(self, x):
        self._mask = x > 0
        # np.maximum propagates NaN so a diverging run is caught downstream
        return np.maximum(x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Sigmoid(Module):
    def forward(self, x):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        self._y = y
        return y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class Dense(Module):
    def __init__(self, f_in, f_out, rng, std=None, zero_init=False):
        super().__init__()
        if std is None:
            std = math.sqrt(2.0 / f_in)
        if zero_init:
            std = 0.0
        self.weight = self.param("weight", rng.normal(0.0, 1.0, (f_in, f_out)) * std)
        self.bias = self.param("bias", np.zeros(f_out))

    def forward(self, x):
        self._x = x
        return x @ self.weight.value + self.bias.value

    def backward(self, dy):
        self.weight.grad += self._x.T @ dy
        self.bias.grad += dy.sum(axis=0)
        return dy @ self.weight.value.T


class GlobalAvgPool(Module):
    def forward(self, x):
        self._length = x.shape[2]
        return x.mean(axis=2)

    def backward(self, dy):
        return np.repeat(dy[:, :, None] / self._length, self._length, axis=2)


class AvgPool2(Module):
    """Pairwise average along length; an odd trailing sample passes through."""

    def forward(self, x):
        length = x.shape[2]
        self._length = length
        half = length // 2
        y = 0.5 * (x[:, :, 0:2 * half:2] + x[:, :, 1:2 * half:2])
        if length % 2:
            y = np.concatenate([y, x[:, :, -1:]], axis=2)
        return y

    def backward(self, dy):
        length = self._length
        half = length // 2
        dx = np.zeros(dy.shape[:2] + (length,))
        dx[:, :, 0:2 * half:2] = 0.5 * dy[:, :, :half]
        dx[:, :, 1:2 * half:2] = 0.5 * dy[:, :, :half]
        if length % 2:
            dx[:, :, -1] = dy[:, :, -1]
        return dx


class Upsample2(Module):
    """Nearest-neighbour upsampling to an explicit target length."""

    def forward(self, x, length=None):
        length = 2 * x.shape[2] if length is None else length
        self._shape = x.shape
        self._idx = np.arange(length) // 2
        return x[:, :, self._idx]

    def backward(self, dy):
        dx = np.zeros(self._shape)
        np.add.at(dx, (slice(None), slice(None), self._idx), dy)
        return dx


class ChannelAttention(Module):
    """Squeeze (global mean) -> dense -> ReLU -> dense -> sigmoid channel gates."""

    def __init__(self, channels, reduction, rng):
        super().__init__()
        if channels % reduction:
            raise ValueError(f"{channels} channels not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.squeeze = self.add("squeeze", GlobalAvgPool())
        self.fc1 = self.add("fc1", Dense(channels, hidden, rng))
        self.act = self.add("act", ReLU())
        self.fc2 = self.add("fc2", Dense(hidden, channels, rng, std=math.sqrt(1.0 / hidden)))
        self.gate = self.add("gate", Sigmoid())

    def forward(self, x):
        s = self.gate.forward(self.fc2.forward(self.act.forward(self.fc1.forward(self.squeeze.forward(x)))))
        self._x, self._s = x, s
        return x * s[:, :, None]

    def backward(self, dy):
        x, s = self._x, self._s
        ds = np.sum(dy * x, axis=2)
        d = self.squeeze.backward(self.fc1.backward(self.act.backward(self.fc2.backward(self.gate.backward(ds)))))
        return dy * s[:, :, None] + d


class MinibatchDiscrimination(Module):
    """Appends B within-batch similarity features to each (N, A) row.

    o(x_i)_b = sum_{j != i} exp(-||M_ib - M_jb||_1) with M_i = reshape(x_i T, B x C).
    """

    def __init__(self, n_in, n_kernels, kernel_dim, rng, std=0.1):
        super().__init__()
        self.n_kernels, self.kernel_dim = n_kernels, kernel_dim
        self.T = self.param("T", rng.normal(0.0, std, (n_in, n_kernels * kernel_dim)))

    def forward(self, x):
        if x.shape[0] < 2:
            raise ValueError("minibatch discrimination needs a batch of at least 2")
        m = (x @ self.T.value).reshape(x.shape[0], self.n_kernels, self.kernel_dim)
        o, e = _accel.mbd_forward(m)
        self._cache = (x, m, e)
        return np.concatenate([x, o], axis=1)

    def backward(self, dy):
        x, m, e = self._cache
        a = x.shape[1]
        dm = _accel.mbd_backward(m, e, dy[:, a:]).reshape(x.shape[0], -1)
        self.T.grad += x.T @ dm
        return dy[:, :a] + dm @ self.T.value.T


class ConvBlock(Module):
    """Conv1d -> BatchNorm1d -> ReLU."""

    def __init__(self, c_in, c_out, kernel_size, rng):
        super().__init__()
        self.seq = self.add("seq", Sequential(
            Conv1d(c_in, c_out, kernel_size, rng), BatchNorm1d(c_out), ReLU()
        ))

    def forward(self, x):
        return self.seq.forward(x)

    def backward(self, dy):
        return self.seq.backward(dy)


class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN [-> channel attention] + skip -> ReLU."""

    def __init__(self, channels, kernel_size, rng, attention_reduction=None):
        super().__init__()
        layers = [
            Conv1d(channels, channels, kernel_size, rng), BatchNorm1d(channels), ReLU(),
            Conv1d(channels, channels, kernel_size, rng), BatchNorm1d(channels),
        ]
        if attention_reduction:
            layers.append(ChannelAttention(channels, attention_reduction, rng))
        self.body = self.add("body", Sequential(*layers))
        self.out = self.add("out", ReLU())

    def forward(self, x):
        return self.out.forward(x + self.body.forward(x))

    def backward(self, dy):
        d = self.out.backward(dy)
        return d + self.body.backward(d)
