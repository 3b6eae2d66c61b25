import os
import subprocess
import sys

import numpy as np
import pytest

from hrtf_dunet import _accel

needs_numba = pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not available")


def voss_inputs(rng, length=300, rows=6):
    counts = [-(-length // (1 << i)) for i in range(rows)]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return rng.standard_normal(int(offsets[-1])), offsets, length


@pytest.mark.parametrize("seed", range(3))
def test_kalman_paths_agree(seed):
    y = np.random.default_rng(seed).normal(size=(5, 64))
    ref = _accel._kalman_loops(y, 0.3, 1.2)
    np.testing.assert_allclose(_accel.kalman_np(y, 0.3, 1.2), ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(_accel.kalman(y, 0.3, 1.2), ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_voss_paths_agree(seed):
    draws, offsets, length = voss_inputs(np.random.default_rng(seed))
    ref = _accel._voss_loops(draws, offsets, length)
    np.testing.assert_allclose(_accel.voss_np(draws, offsets, length), ref, atol=1e-12)
    np.testing.assert_allclose(_accel.voss(draws, offsets, length), ref, atol=1e-12)


@pytest.mark.parametrize("n", [2, 3, 5, 8])
def test_mbd_paths_agree(n):
    rng = np.random.default_rng(n)
    m = rng.normal(scale=0.3, size=(n, 4, 3))
    do = rng.normal(size=(n, 4))
    o_ref, e_ref = _accel._mbd_forward_loops(m)
    for fwd in (_accel.mbd_forward_np, _accel.mbd_forward):
        o, e = fwd(m)
        np.testing.assert_allclose(o, o_ref, atol=1e-12)
        np.testing.assert_allclose(e, e_ref, atol=1e-12)
    dm_ref = _accel._mbd_backward_loops(m, e_ref, do)
    for bwd in (_accel.mbd_backward_np, _accel.mbd_backward):
        np.testing.assert_allclose(bwd(m, e_ref, do), dm_ref, atol=1e-12)


@needs_numba
def test_compiled_kernels_match_numpy():
    rng = np.random.default_rng(0)
    y = rng.normal(size=(4, 128))
    np.testing.assert_allclose(_accel.kalman_nb(y, 0.1, 1.0), _accel.kalman_np(y, 0.1, 1.0), atol=1e-12)
    draws, offsets, length = voss_inputs(rng)
    np.testing.assert_allclose(_accel.voss_nb(draws, offsets, length),
                               _accel.voss_np(draws, offsets, length), atol=1e-12)
    m = rng.normal(size=(6, 3, 4))
    o, e = _accel.mbd_forward_nb(m)
    o2, e2 = _accel.mbd_forward_np(m)
    np.testing.assert_allclose(o, o2, atol=1e-12)
    do = rng.normal(size=(6, 3))
    np.testing.assert_allclose(_accel.mbd_backward_nb(m, e, do), _accel.mbd_backward_np(m, e2, do), atol=1e-12)


@pytest.mark.parametrize("flag, expected", [("1", "numpy"), ("true", "numpy")])
def test_disable_flag_selects_numpy(flag, expected):
    env = dict(os.environ, HRTF_DUNET_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from hrtf_dunet import _accel; print(_accel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_default_backend_follows_availability():
    env = {k: v for k, v in os.environ.items() if k != "HRTF_DUNET_DISABLE_NUMBA"}
    out = subprocess.run([sys.executable, "-c", "from hrtf_dunet import _accel; print(_accel.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    try:
        import numba  # noqa: F401
        expected = "numba"
    except ImportError:
        expected = "numpy"
    assert out.stdout.strip() == expected
