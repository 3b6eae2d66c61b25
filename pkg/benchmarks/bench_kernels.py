"""Time the compiled and numpy paths of each accelerated kernel.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``. The compiled
path is warmed up once before timing so JIT cost is excluded.
"""

import argparse
import timeit

import numpy as np

from hrtf_dunet import _accel


def cases(rng):
    y = rng.normal(size=(200, 256))
    length, rows = 2 ** 15, 16
    counts = [-(-length // (1 << i)) for i in range(rows)]
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    draws = rng.standard_normal(int(offsets[-1]))
    m = rng.normal(size=(16, 8, 4))
    _, e = _accel.mbd_forward_np(m)
    do = rng.normal(size=(16, 8))
    return {
        "kalman": ((y, 0.1, 1.0), _accel.kalman_np, "kalman_nb"),
        "voss": ((draws, offsets, length), _accel.voss_np, "voss_nb"),
        "mbd_forward": ((m,), _accel.mbd_forward_np, "mbd_forward_nb"),
        "mbd_backward": ((m, e, do), _accel.mbd_backward_np, "mbd_backward_nb"),
    }


def best_of(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args(argv)
    print(f"backend: {_accel.BACKEND}")
    print(f"{'kernel':<14}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (inputs, np_fn, nb_name) in cases(np.random.default_rng(0)).items():
        t_np = best_of(np_fn, inputs, args.repeat) * 1e3
        if _accel.HAS_NUMBA:
            nb_fn = getattr(_accel, nb_name)
            nb_fn(*inputs)
            t_nb = best_of(nb_fn, inputs, args.repeat) * 1e3
            print(f"{name:<14}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{name:<14}{t_np:>10.3f}{'n/a':>10}{'':>9}")


if __name__ == "__main__":
    main()
