"""Denoisy U-Net, AE-GAN generator and discriminator.

All networks take SH coefficients in the channel layout of
``ShCoeffTensor.to_channels``: ``(N, 2 * (L+1)^2, B)`` with the convolution
sliding over the B frequency bins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import sh
from ..errors import ConfigError
from .layers import (
    AvgPool2, ConvBlock, Conv1d, Dense, GlobalAvgPool, MinibatchDiscrimination,
    Module, ReLU, ResidualBlock, Sequential, Upsample2,
)


@dataclass(frozen=True)
class DUNetConfig:
    order: int = 5
    channels: tuple = (16, 32, 64)
    depth: int = 3
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.depth < 1:
            raise ConfigError("U-Net depth must be >= 1")
        if len(self.channels) != self.depth:
            raise ConfigError(f"{len(self.channels)} channel widths for depth {self.depth}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError("kernel_size must be odd and positive")
        if self.order < 0:
            raise ConfigError("order must be >= 0")

    @property
    def io_channels(self):
        return 2 * sh.num_coeffs(self.order)


@dataclass(frozen=True)
class AeGanConfig:
    low_order: int = 1
    high_order: int = 5
    latent: int = 32
    width: int = 16
    res_blocks: int = 2
    reduction: int = 4
    kernel_size: int = 3
    mbd_features: int = 32
    mbd_kernels: int = 8
    mbd_dim: int = 4

    def __post_init__(self):
        if not 0 <= self.low_order < self.high_order:
            raise ConfigError("need 0 <= low_order < high_order")
        if self.width % self.reduction:
            raise ConfigError(f"width {self.width} not divisible by reduction {self.reduction}")
        if min(self.latent, self.width, self.mbd_features, self.mbd_kernels, self.mbd_dim) < 1:
            raise ConfigError("layer sizes must be >= 1")
        if self.res_blocks < 0:
            raise ConfigError("res_blocks must be >= 0")

    @property
    def in_channels(self):
        return 2 * sh.num_coeffs(self.low_order)

    @property
    def out_channels(self):
        return 2 * sh.num_coeffs(self.high_order)


class DUNet(Module):
    """1-D U-Net over frequency: conv blocks, average pooling, nearest
    upsampling and concatenated skips. The final 1x1 conv starts at zero."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        k, ch = cfg.kernel_size, cfg.channels
        c_prev = cfg.io_channels
        self.enc, self.pools, self.ups, self.dec = [], [], [], []
        for i, c in enumerate(ch):
            self.enc.append(self.add(f"enc{i}", ConvBlock(c_prev, c, k, rng)))
            self.pools.append(self.add(f"pool{i}", AvgPool2()))
            c_prev = c
        self.mid = self.add("mid", ConvBlock(ch[-1], ch[-1], k, rng))
        c_prev = ch[-1]
        for i in reversed(range(cfg.depth)):
            self.ups.append(self.add(f"up{i}", Upsample2()))
            self.dec.append(self.add(f"dec{i}", ConvBlock(c_prev + ch[i], ch[i], k, rng)))
            c_prev = ch[i]
        self.head = self.add("head", Conv1d(ch[0], cfg.io_channels, 1, rng, zero_init=True))

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.cfg.io_channels:
            raise ValueError(f"expected (N, {self.cfg.io_channels}, B) input, got {x.shape}")
        skips = []
        for enc, pool in zip(self.enc, self.pools):
            x = enc.forward(x)
            skips.append(x)
            x = pool.forward(x)
        x = self.mid.forward(x)
        self._split = []
        for up, dec, skip in zip(self.ups, self.dec, reversed(skips)):
            x = up.forward(x, skip.shape[2])
            self._split.append(x.shape[1])
            x = dec.forward(np.concatenate([x, skip], axis=1))
        return self.head.forward(x)

    def backward(self, dy):
        d = self.head.backward(dy)
        dskips = []
        for up, dec, split in zip(reversed(self.ups), reversed(self.dec), reversed(self._split)):
            dcat = dec.backward(d)
            dskips.append(dcat[:, split:])
            d = up.backward(dcat[:, :split])
        d = self.mid.backward(d)
        # dskips is ordered shallow-to-deep; walk the encoder backwards
        for enc, pool, ds in zip(reversed(self.enc), reversed(self.pools), reversed(dskips)):
            d = enc.backward(pool.backward(d) + ds)
        return d


class AeGanGenerator(Module):
    """Residual encoder to a latent code, residual decoder to high-order
    coefficients. Residual blocks carry channel attention."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        k, w = cfg.kernel_size, cfg.width
        blocks = [ResidualBlock(w, k, rng, cfg.reduction) for _ in range(cfg.res_blocks)]
        self.encoder = self.add("encoder", Sequential(
            ConvBlock(cfg.in_channels, w, k, rng), *blocks, Conv1d(w, cfg.latent, 1, rng),
        ))
        blocks = [ResidualBlock(w, k, rng, cfg.reduction) for _ in range(cfg.res_blocks)]
        self.decoder = self.add("decoder", Sequential(
            ConvBlock(cfg.latent, w, k, rng), *blocks,
            Conv1d(w, cfg.out_channels, 1, rng, zero_init=True),
        ))

    def encode(self, x):
        if x.ndim != 3 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (N, {self.cfg.in_channels}, B) input, got {x.shape}")
        return self.encoder.forward(x)

    def forward(self, x):
        return self.decoder.forward(self.encode(x))

    def backward(self, dy):
        return self.encoder.backward(self.decoder.backward(dy))


class Discriminator(Module):
    """Conv features over the whole bin stack, a dense layer, minibatch
    discrimination and a single real/fake logit per sample."""

    def __init__(self, cfg, rng):
        super().__init__()
        k = cfg.kernel_size
        self.features = self.add("features", Sequential(
            Conv1d(cfg.out_channels, 16, k, rng), ReLU(), AvgPool2(),
            Conv1d(16, 32, k, rng), ReLU(), GlobalAvgPool(),
            Dense(32, cfg.mbd_features, rng), ReLU(),
            MinibatchDiscrimination(cfg.mbd_features, cfg.mbd_kernels, cfg.mbd_dim, rng),
            Dense(cfg.mbd_features + cfg.mbd_kernels, 1, rng, std=0.01),
        ))

    def forward(self, x):
        return self.features.forward(x)[:, 0]

    def backward(self, dlogit):
        return self.features.backward(np.asarray(dlogit, dtype=float)[:, None])


# ------------------------------------------------------------ raw-scale wrappers


class CoeffDenoiser(Module):
    """D-UNet on standardised inputs, mapped back to raw coefficients.

    raw_out = out_mean + out_scale * net((x - in_mean) / in_scale). The
    statistics are buffers (per channel and bin for the means, one scalar
    for each scale) set from training data by ``fit_normalisation``.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.net = self.add("net", DUNet(cfg, rng))
        c = cfg.io_channels
        self.buffer("in_mean", np.zeros((c, 1)))
        self.buffer("in_scale", np.ones(1))
        self.buffer("out_mean", np.zeros((c, 1)))
        self.buffer("out_scale", np.ones(1))

    def fit_normalisation(self, noisy, clean):
        self._buffers["in_mean"] = noisy.mean(axis=0)
        self._buffers["in_scale"] = np.array([max(np.std(noisy - noisy.mean(axis=0)), 1e-12)])
        self._buffers["out_mean"] = clean.mean(axis=0)
        self._buffers["out_scale"] = np.array([max(np.std(clean - clean.mean(axis=0)), 1e-12)])

    def forward(self, x):
        b = self._buffers
        y = self.net.forward((x - b["in_mean"]) / b["in_scale"])
        return b["out_mean"] + b["out_scale"] * y

    def backward(self, dy):
        b = self._buffers
        return self.net.backward(dy * b["out_scale"]) / b["in_scale"]


def low_order_embedding(low_order, high_order):
    """0/1 matrix placing low-order channels in their high-order slots, (C_hi, C_lo)."""
    k_lo, k_hi = sh.num_coeffs(low_order), sh.num_coeffs(high_order)
    e = np.zeros((2 * k_hi, 2 * k_lo))
    for ear in range(2):
        e[ear * k_hi + np.arange(k_lo), ear * k_lo + np.arange(k_lo)] = 1.0
    return e


class CoeffUpsampler(Module):
    """AE-GAN generator on raw coefficients.

    raw_out = E x + out_mean + out_scale * G((x - in_mean) / in_scale) where
    E copies the low-order input into the matching output slots, so the
    untrained generator reproduces its input there and zero elsewhere.
    """

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.net = self.add("net", AeGanGenerator(cfg, rng))
        self.embed = low_order_embedding(cfg.low_order, cfg.high_order)
        self.buffer("in_mean", np.zeros((cfg.in_channels, 1)))
        self.buffer("in_scale", np.ones(1))
        self.buffer("out_mean", np.zeros((cfg.out_channels, 1)))
        self.buffer("out_scale", np.ones(1))

    def skip(self, x):
        return np.einsum("oc,ncb->nob", self.embed, x)

    def fit_normalisation(self, low, high):
        resid = high - self.skip(low)
        self._buffers["in_mean"] = low.mean(axis=0)
        self._buffers["in_scale"] = np.array([max(np.std(low - low.mean(axis=0)), 1e-12)])
        self._buffers["out_mean"] = resid.mean(axis=0)
        self._buffers["out_scale"] = np.array([max(np.std(resid - resid.mean(axis=0)), 1e-12)])

    def forward(self, x):
        b = self._buffers
        y = self.net.forward((x - b["in_mean"]) / b["in_scale"])
        return self.skip(x) + b["out_mean"] + b["out_scale"] * y

    def backward(self, dy):
        b = self._buffers
        dx = self.net.backward(dy * b["out_scale"]) / b["in_scale"]
        return dx + np.einsum("oc,nob->ncb", self.embed, dy)


class CoeffDiscriminator(Module):
    """Discriminator on raw high-order coefficients standardised with the
    statistics of the real training targets."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.net = self.add("net", Discriminator(cfg, rng))
        self.buffer("mean", np.zeros((cfg.out_channels, 1)))
        self.buffer("scale", np.ones(1))

    def fit_normalisation(self, real):
        self._buffers["mean"] = real.mean(axis=0)
        self._buffers["scale"] = np.array([max(np.std(real - real.mean(axis=0)), 1e-12)])

    def forward(self, x):
        return self.net.forward((x - self._buffers["mean"]) / self._buffers["scale"])

    def backward(self, dlogit):
        return self.net.backward(dlogit) / self._buffers["scale"]
