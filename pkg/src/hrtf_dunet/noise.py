"""White and pink measurement noise, mixed into HRIRs at a target SNR."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import DataError

DEFAULT_SOURCES = 16


@dataclass(frozen=True)
class NoiseSpec:
    color: str = "white"
    snr_db: float = 5.0
    num_sources: int = DEFAULT_SOURCES
    seed: int = 0

    def __post_init__(self):
        if self.color not in ("white", "pink"):
            raise ValueError(f"unknown noise color {self.color!r}")
        if not math.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.num_sources < 1:
            raise ValueError("num_sources must be >= 1")


def gen_white_noise(length, sigma=1.0, seed=0):
    if length < 1 or sigma < 0:
        raise ValueError("need length >= 1 and sigma >= 0")
    return np.random.default_rng(seed).normal(0.0, 1.0, int(length)) * sigma


def gen_pink_noise(length, num_sources=DEFAULT_SOURCES, seed=0):
    """Voss-McCartney pink noise.

    Row ``i`` (0-based) holds a standard-normal value that is redrawn every
    ``2**i`` samples; the output is the mean of the ``num_sources`` rows.
    """
    if length < 1 or num_sources < 1:
        raise ValueError("need length >= 1 and num_sources >= 1")
    rng = np.random.default_rng(seed)
    counts = [-(-length // (1 << i)) for i in range(num_sources)]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    draws = rng.standard_normal(int(offsets[-1]))
    return _accel.voss(draws, offsets, length) / num_sources


def average_power(x):
    x = np.asarray(x, dtype=float)
    return float(np.mean(x * x))


def snr_gain(signal, noise, snr_db):
    """Gain g such that signal power / power(g * noise) equals the target SNR."""
    p_sig, p_noise = average_power(signal), average_power(noise)
    if p_sig == 0.0:
        raise DataError("signal is all zero")
    if p_noise == 0.0:
        raise DataError("noise is all zero")
    return math.sqrt(p_sig / (10.0 ** (snr_db / 10.0) * p_noise))


def mix_at_snr(signal, noise, snr_db):
    signal = np.asarray(signal, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if signal.shape != noise.shape:
        raise DataError("signal and noise lengths differ")
    return signal + snr_gain(signal, noise, snr_db) * noise


def stream_seed(seed, position, ear):
    """Noise stream for one (position, ear): master seed shifted, XOR a counter."""
    return (int(seed) << 32) ^ (2 * int(position) + int(ear))


def noise_realization(spec, length, position, ear):
    s = stream_seed(spec.seed, position, ear)
    if spec.color == "white":
        return gen_white_noise(length, 1.0, s)
    return gen_pink_noise(length, spec.num_sources, s)


def degrade_set(hrirs, spec):
    """Add an independent noise realization to every position and ear."""
    irs = np.array(hrirs.irs)
    t = hrirs.ir_length
    for p in range(irs.shape[0]):
        for e in range(2):
            irs[p, e] = mix_at_snr(irs[p, e], noise_realization(spec, t, p, e), spec.snr_db)
    return hrirs.with_irs(irs)
