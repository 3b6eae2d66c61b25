"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. Which one is
bound to the public name is decided once, at import time:

* ``HRTF_DUNET_DISABLE_NUMBA=1`` forces the numpy path;
* otherwise numba is used if it imports cleanly.

Both paths are deterministic. They agree to rounding, not bit-for-bit,
because summation order differs.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("HRTF_DUNET_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by HRTF_DUNET_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

BACKEND = "numba" if HAS_NUMBA else "numpy"


# --------------------------------------------------------------------------
# scalar random-walk Kalman filter, many independent series
# --------------------------------------------------------------------------


def kalman_np(y, q, r):
    """Forward random-walk Kalman filter over the last axis of ``y`` (S, T).

    The covariance recursion does not depend on the data, so the gain
    sequence is shared by every series and the loop runs over time only.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    out = np.empty_like(y)
    x = y[:, 0].copy()
    p = r
    out[:, 0] = x
    for t in range(1, y.shape[1]):
        p_prior = p + q
        k = p_prior / (p_prior + r)
        x = x + k * (y[:, t] - x)
        p = (1.0 - k) * p_prior
        out[:, t] = x
    return out


def _kalman_loops(y, q, r):
    n_series, n = y.shape
    out = np.empty_like(y)
    for s in range(n_series):
        x = y[s, 0]
        p = r
        out[s, 0] = x
        for t in range(1, n):
            p_prior = p + q
            k = p_prior / (p_prior + r)
            x = x + k * (y[s, t] - x)
            p = (1.0 - k) * p_prior
            out[s, t] = x
    return out


# --------------------------------------------------------------------------
# Voss-McCartney row assembly
# --------------------------------------------------------------------------


def voss_np(draws, offsets, length):
    """Sum of sample-and-hold rows; row ``i`` holds draw ``t >> i``.

    ``draws`` is the concatenation of all rows' values, row ``i`` starting
    at ``offsets[i]``.
    """
    total = np.zeros(length)
    for i in range(len(offsets) - 1):
        vals = draws[offsets[i]:offsets[i + 1]]
        total += np.repeat(vals, 1 << i)[:length]
    return total


def _voss_loops(draws, offsets, length):
    n_rows = offsets.shape[0] - 1
    total = np.zeros(length)
    for t in range(length):
        acc = 0.0
        for i in range(n_rows):
            acc += draws[offsets[i] + (t >> i)]
        total[t] = acc
    return total


# --------------------------------------------------------------------------
# minibatch discrimination similarities
# --------------------------------------------------------------------------


def mbd_forward_np(m):
    """Similarity features o[i, b] = sum_{j != i} exp(-||m[i, b] - m[j, b]||_1).

    ``m`` has shape (N, B, C). Returns (o, e) where e[i, j, b] is the pairwise
    kernel, kept for the backward pass.
    """
    dist = np.abs(m[:, None, :, :] - m[None, :, :, :]).sum(axis=3)
    e = np.exp(-dist)
    idx = np.arange(m.shape[0])
    e[idx, idx, :] = 0.0
    return e.sum(axis=1), e


def mbd_backward_np(m, e, do):
    coef = e * (do[:, None, :] + do[None, :, :])
    sgn = np.sign(m[:, None, :, :] - m[None, :, :, :])
    return -(coef[:, :, :, None] * sgn).sum(axis=1)


def _mbd_forward_loops(m):
    n, nb, nc = m.shape
    e = np.zeros((n, n, nb))
    o = np.zeros((n, nb))
    for i in range(n):
        for j in range(i + 1, n):
            for b in range(nb):
                d = 0.0
                for c in range(nc):
                    d += abs(m[i, b, c] - m[j, b, c])
                v = np.exp(-d)
                e[i, j, b] = v
                e[j, i, b] = v
                o[i, b] += v
                o[j, b] += v
    return o, e


def _mbd_backward_loops(m, e, do):
    n, nb, nc = m.shape
    dm = np.zeros_like(m)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            for b in range(nb):
                w = e[i, j, b] * (do[i, b] + do[j, b])
                for c in range(nc):
                    diff = m[i, b, c] - m[j, b, c]
                    if diff > 0.0:
                        dm[i, b, c] -= w
                    elif diff < 0.0:
                        dm[i, b, c] += w
    return dm


if HAS_NUMBA:
    kalman_nb = njit(cache=True)(_kalman_loops)
    voss_nb = njit(cache=True)(_voss_loops)
    mbd_forward_nb = njit(cache=True)(_mbd_forward_loops)
    mbd_backward_nb = njit(cache=True)(_mbd_backward_loops)

    def kalman(y, q, r):
        return kalman_nb(np.ascontiguousarray(y, dtype=np.float64), float(q), float(r))

    def voss(draws, offsets, length):
        return voss_nb(np.ascontiguousarray(draws, dtype=np.float64),
                       np.ascontiguousarray(offsets, dtype=np.int64), int(length))

    def mbd_forward(m):
        return mbd_forward_nb(np.ascontiguousarray(m, dtype=np.float64))

    def mbd_backward(m, e, do):
        return mbd_backward_nb(np.ascontiguousarray(m, dtype=np.float64),
                               np.ascontiguousarray(e), np.ascontiguousarray(do, dtype=np.float64))
else:
    kalman = kalman_np
    voss = voss_np
    mbd_forward = mbd_forward_np
    mbd_backward = mbd_backward_np
