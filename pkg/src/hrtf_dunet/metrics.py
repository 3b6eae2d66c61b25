"""Log-spectral distortion and interaural level/time difference errors.

All three metrics use the bins with ``f_min <= f <= f_max`` (200 Hz to
18 kHz by default). LSD and ILD skip bins whose magnitude falls below
``MAG_FLOOR`` in any of the compared responses; pass
``return_excluded=True`` to get the number of skipped (position, ear, bin)
cells alongside the value.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

F_MIN = 200.0
F_MAX = 18000.0
MAG_FLOOR = 1e-12


def _check_pair(ref, other):
    if ref.magnitude.shape != other.magnitude.shape:
        raise DataError("HRTF sets have different shapes")
    if not np.allclose(ref.positions[:, :2], other.positions[:, :2], atol=1e-9):
        raise DataError("HRTF sets are on different grids")
    if not np.allclose(ref.frequencies, other.frequencies):
        raise DataError("HRTF sets have different frequency bins")


def band(frequencies, f_min=F_MIN, f_max=F_MAX):
    f = np.asarray(frequencies)
    return (f >= f_min) & (f <= f_max) & (f > 0)


def lsd_error(reference, generated, f_min=F_MIN, f_max=F_MAX, return_excluded=False):
    """Mean over positions of the RMS dB log-ratio, averaged over both ears."""
    _check_pair(reference, generated)
    sel = band(reference.frequencies, f_min, f_max)
    a = reference.magnitude[:, :, sel]
    b = generated.magnitude[:, :, sel]
    ok = (a >= MAG_FLOOR) & (b >= MAG_FLOOR)
    ratio = np.where(ok, 20.0 * np.log10(np.where(ok, a, 1.0) / np.where(ok, b, 1.0)), 0.0)
    count = ok.sum(axis=2)
    has = count > 0
    rms = np.sqrt(np.sum(ratio ** 2, axis=2) / np.maximum(count, 1))
    per_ear = [rms[has[:, e], e].mean() for e in range(2)]
    value = float(np.mean(per_ear))
    if return_excluded:
        return value, int(ok.size - ok.sum())
    return value


def ild(hrtfs):
    return 20.0 * np.log10(hrtfs.magnitude[:, 0] / hrtfs.magnitude[:, 1])


def ild_error(reference, processed, f_min=F_MIN, f_max=F_MAX, return_excluded=False):
    _check_pair(reference, processed)
    sel = band(reference.frequencies, f_min, f_max)
    a = reference.magnitude[:, :, sel]
    b = processed.magnitude[:, :, sel]
    ok = np.all(a >= MAG_FLOOR, axis=1) & np.all(b >= MAG_FLOOR, axis=1)
    safe_a = np.where(ok[:, None, :], a, 1.0)
    safe_b = np.where(ok[:, None, :], b, 1.0)
    d = 20.0 * np.log10(safe_a[:, 0] / safe_a[:, 1]) - 20.0 * np.log10(safe_b[:, 0] / safe_b[:, 1])
    value = float(np.abs(d[ok]).mean())
    if return_excluded:
        return value, int(ok.size - ok.sum())
    return value


def interaural_phase(hrtfs):
    """Unwrapped left minus unwrapped right phase, (P, B)."""
    ph = np.unwrap(hrtfs.phase, axis=2)
    return ph[:, 0] - ph[:, 1]


def itd_error(reference, processed, f_min=F_MIN, f_max=F_MAX):
    """Mean absolute interaural phase-delay difference, in seconds."""
    _check_pair(reference, processed)
    sel = band(reference.frequencies, f_min, f_max)
    f = reference.frequencies[sel]
    d = interaural_phase(reference)[:, sel] - interaural_phase(processed)[:, sel]
    return float(np.mean(np.abs(d / (2.0 * np.pi * f))))
