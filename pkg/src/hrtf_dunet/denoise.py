"""Classical per-IR denoisers: spectral subtraction, db7 wavelet shrinkage,
and a scalar random-walk Kalman filter."""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.signal import butter, lfilter

from . import _accel
from .errors import DataError

HIGHPASS_HZ = 200.0
TAIL_FRACTION = 0.1

# Daubechies-7 synthesis low-pass filter (14 taps, orthonormal: sum = sqrt 2).
DB7_REC_LO = np.array([
    0.077852054085009179020,
    0.39653931948191730654,
    0.72913209084623511992,
    0.46978228740519312247,
    -0.14390600392856497541,
    -0.22403618499387498264,
    0.071309219266830264751,
    0.080612609151083071913,
    -0.038029936935014413580,
    -0.016574541630666880654,
    0.012550998556099840613,
    0.00042957797292136652113,
    -0.0018016407040474909153,
    0.00035371379997452024845,
])


def _as_rows(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, x.shape[-1]), x.shape


# ------------------------------------------------------------ spectral subtraction


def highpass(ir, sample_rate, cutoff=HIGHPASS_HZ):
    """First-order Butterworth high-pass along the last axis."""
    b, a = butter(1, cutoff, btype="highpass", fs=sample_rate)
    return lfilter(b, a, np.asarray(ir, dtype=float), axis=-1)


def estimate_noise_floor(noisy_ir, sample_rate, tail_fraction=TAIL_FRACTION,
                         cutoff=HIGHPASS_HZ):
    """Per-bin noise power from the (assumed post-decay) tail of the IR.

    The tail is treated as white: its mean power times T gives the expected
    periodogram level at every bin.
    """
    x = highpass(noisy_ir, sample_rate, cutoff)
    n = x.shape[-1]
    k = max(2, int(round(tail_fraction * n)))
    level = np.mean(x[..., -k:] ** 2, axis=-1, keepdims=True) * n
    return np.broadcast_to(level, x.shape[:-1] + (n // 2 + 1,)).copy()


def spectral_subtract(noisy_ir, noise_floor, alpha=2.0, beta=0.01, sample_rate=48000,
                      cutoff=HIGHPASS_HZ):
    """Power spectral subtraction after a first-order high-pass.

    Per bin the output power is max(P - alpha * N, beta * P); the phase of
    the high-passed input is kept.
    """
    if alpha < 1 or not 0 <= beta < 1:
        raise ValueError("need alpha >= 1 and 0 <= beta < 1")
    x = highpass(noisy_ir, sample_rate, cutoff)
    n = x.shape[-1]
    spec = np.fft.rfft(x, axis=-1)
    floor = np.asarray(noise_floor, dtype=float)
    if floor.shape[-1:] not in ((), (1,), (spec.shape[-1],)):
        raise DataError("noise floor and spectrum disagree on the bin count")
    if np.any(floor < 0):
        raise ValueError("noise floor must be >= 0")
    power = np.abs(spec) ** 2
    out_power = np.maximum(power - alpha * floor, beta * power)
    out = np.sqrt(out_power) * np.exp(1j * np.angle(spec))
    return np.fft.irfft(out, n=n, axis=-1)


# ------------------------------------------------------------------- wavelets


_DB7_SHIFT = DB7_REC_LO.size // 2 - 1


@lru_cache(maxsize=None)
def _dwt_matrix(n):
    """Orthogonal one-level periodised db7 analysis matrix, (n, n).

    Filter alignment follows PyWavelets' ``periodization`` mode.
    """
    if n % 2:
        raise DataError(f"odd length {n} at a DWT level")
    h = DB7_REC_LO
    g = h[::-1] * (-1.0) ** np.arange(h.size)
    w = np.zeros((n, n))
    for k in range(n // 2):
        idx = (2 * k - _DB7_SHIFT + np.arange(h.size)) % n
        np.add.at(w[k], idx, h)
        np.add.at(w[n // 2 + k], idx, g)
    w.flags.writeable = False
    return w


def dwt(x, levels):
    """Multi-level periodised db7 transform; returns [a_L, d_L, ..., d_1]."""
    rows, shape = _as_rows(x)
    n = rows.shape[1]
    if levels < 1 or n % (1 << levels):
        raise DataError(f"length {n} cannot be decomposed into {levels} levels")
    details = []
    approx = rows
    for _ in range(levels):
        m = approx.shape[1]
        y = approx @ _dwt_matrix(m).T
        approx, det = y[:, : m // 2], y[:, m // 2:]
        details.append(det.reshape(shape[:-1] + (m // 2,)))
    return [approx.reshape(shape[:-1] + (approx.shape[1],))] + details[::-1]


def idwt(coeffs):
    approx = np.asarray(coeffs[0], dtype=float)
    lead = approx.shape[:-1]
    approx = approx.reshape(-1, approx.shape[-1])
    for det in coeffs[1:]:
        det = np.asarray(det, dtype=float).reshape(-1, approx.shape[1])
        y = np.concatenate([approx, det], axis=1)
        approx = y @ _dwt_matrix(y.shape[1])
    return approx.reshape(lead + (approx.shape[1],))


def soft_threshold(x, thr):
    return np.sign(x) * np.maximum(np.abs(x) - thr, 0.0)


def wavelet_denoise(noisy_ir, levels=4, threshold_rule="universal"):
    """db7 wavelet shrinkage.

    ``threshold_rule`` is ``"universal"`` (soft threshold at
    sigma * sqrt(2 ln T), sigma = median(|d_1|) / 0.6745), a number used as a
    fixed threshold, or ``None`` to disable thresholding.
    """
    x = np.asarray(noisy_ir, dtype=float)
    n = x.shape[-1]
    if n < (1 << levels):
        raise DataError(f"IR of {n} taps is too short for {levels} levels")
    coeffs = dwt(x, levels)
    if threshold_rule is None:
        return idwt(coeffs)
    if threshold_rule == "universal":
        sigma = np.median(np.abs(coeffs[-1]), axis=-1, keepdims=True) / 0.6745
        thr = sigma * math.sqrt(2.0 * math.log(n))
    else:
        thr = float(threshold_rule)
    shrunk = [coeffs[0]] + [soft_threshold(d, thr) for d in coeffs[1:]]
    return idwt(shrunk)


# --------------------------------------------------------------------- Kalman

KALMAN_QR_RATIO = 3.0


def kalman_denoise(noisy_ir, q, r):
    """Posterior means of x_t = x_{t-1} + w, y_t = x_t + v (w ~ N(0,q), v ~ N(0,r)).

    The first sample initialises the state (diffuse prior), so q -> 0 gives
    the running mean and r -> 0 returns the input.
    """
    if not (q > 0 and r > 0):
        raise ValueError("q and r must be > 0")
    rows, shape = _as_rows(noisy_ir)
    return _accel.kalman(rows, q, r).reshape(shape)


def kalman_auto(noisy_ir, ratio=KALMAN_QR_RATIO):
    """Kalman filter with q = ratio * r.

    The posterior mean depends on q/r only, so no noise-level estimate is
    needed: filter at unit r.
    """
    return kalman_denoise(noisy_ir, ratio, 1.0)


def tune_kalman_ratio(clean_irs, noisy_irs, ratios=None):
    """Grid-search the q/r ratio minimising time-domain MSE on held-out data."""
    if ratios is None:
        ratios = np.logspace(-2, 2, 17)
    errs = [np.mean((kalman_denoise(noisy_irs, q, 1.0) - clean_irs) ** 2) for q in ratios]
    return float(ratios[int(np.argmin(errs))])


# ------------------------------------------------------------------------ sets

METHODS = ("spectral-subtraction", "wavelet-db7", "kalman")


def denoise_irs(irs, method, sample_rate=48000, kalman_ratio=KALMAN_QR_RATIO,
                alpha=2.0, beta=0.01, levels=4):
    if method == "spectral-subtraction":
        floor = estimate_noise_floor(irs, sample_rate)
        return spectral_subtract(irs, floor, alpha, beta, sample_rate)
    if method == "wavelet-db7":
        return wavelet_denoise(irs, levels)
    if method == "kalman":
        return kalman_auto(irs, kalman_ratio)
    raise ValueError(f"unknown denoiser {method!r}")


def denoise_set(hrirs, method, **kw):
    return hrirs.with_irs(denoise_irs(hrirs.irs, method, hrirs.sample_rate, **kw))
