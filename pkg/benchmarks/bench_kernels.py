"""Time the numba and pure-numpy flavours of every hot kernel.

    python3 benchmarks/bench_kernels.py [--repeat 50]

Both flavours are imported directly, so the ``PDDTRACK_NUMBA`` flag does not
matter here. The first numba call (compilation or cache load) is excluded.
"""

import argparse
import time

import numpy as np

from pddtrack import kernels
from pddtrack._accel import HAVE_NUMBA


def _cases(rng):
    x = rng.normal(size=(17, 48, 64))
    w = rng.normal(size=(64, 17, 3, 3))
    dout = rng.normal(size=(64, 48, 64))
    k = 40
    means = rng.uniform(0, 640, (k, 2))
    inv = np.repeat(np.eye(2)[None] / 100.0, k, axis=0)
    coefs = rng.uniform(0.5, 1.5, k)
    xs = (np.arange(64) + 0.5) * 10
    ys = (np.arange(48) + 0.5) * 10
    v = rng.random((48, 64))
    a = np.column_stack([rng.uniform(0, 640, (200, 2)), rng.uniform(10, 60, (200, 2))])
    b = np.column_stack([rng.uniform(0, 640, (300, 2)), rng.uniform(10, 60, (300, 2))])
    return {
        "conv3x3 17->64 @48x64": ("conv3x3", (x, w)),
        "conv3x3_backward": ("conv3x3_backward", (x, w, dout)),
        "gaussian_grid 40 comps": ("gaussian_grid", (means, inv, coefs, xs, ys)),
        "local_maxima 48x64": ("local_maxima", (v,)),
        "iou_matrix 200x300": ("iou_matrix", (a, b)),
    }


def _time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"numba available: {HAVE_NUMBA}")
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, (name, fargs) in _cases(rng).items():
        t_np = _time(getattr(kernels, name + "_np"), fargs, args.repeat)
        t_nb = _time(getattr(kernels, name + "_nb"), fargs, args.repeat)
        print(f"{label:<26}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
