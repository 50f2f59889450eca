"""Time the numba and numpy paths of each hot kernel on the same inputs.

    python benchmarks/bench_kernels.py --rate 2e5 --duration 5 --repeat 5
"""
import argparse
import time

import numpy as np

from qkd810 import kernels
from qkd810._jit import HAVE_NUMBA


def make_inputs(rate, duration, seed):
    rng = np.random.default_rng(seed)
    span = int(duration * 1e12)
    ta = np.sort(rng.integers(0, span, int(rate * duration))).astype(np.int64)
    keep = rng.random(ta.size) < 0.3
    tb = ta[keep] + 4000 + np.rint(rng.normal(0, 400, keep.sum())).astype(np.int64)
    tb = np.sort(np.concatenate([tb, rng.integers(0, span, ta.size // 2)])).astype(np.int64)
    ch = rng.integers(0, 4, ta.size).astype(np.int64)
    steps = rng.normal(size=(int(duration * 1e4), 4))
    steps[:, 0] += 50.0
    steps /= np.linalg.norm(steps, axis=1, keepdims=True)
    return ta, tb, ch, steps


def cases(ta, tb, ch, steps):
    return {
        "diff_histogram": lambda: kernels.diff_histogram(ta, tb, -20_000, 100, 400),
        "greedy_pair": lambda: kernels.greedy_pair(ta, tb, 4000, 1500),
        "dead_time_mask": lambda: kernels.dead_time_mask(ta, ch, 22_000),
        "quat_cumprod": lambda: kernels.quat_cumprod(steps),
    }


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def same(x, y):
    if isinstance(x, tuple):
        return all(same(a, b) for a, b in zip(x, y))
    x, y = np.asarray(x), np.asarray(y)
    return np.array_equal(x, y) if x.dtype.kind in "iub" else np.allclose(x, y, atol=1e-9)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--rate", type=float, default=2e5, help="tags per second per stream")
    parser.add_argument("--duration", type=float, default=5.0, help="seconds of data")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if not HAVE_NUMBA:
        parser.error("numba is not installed, nothing to compare")
    inputs = make_inputs(args.rate, args.duration, args.seed)
    print(f"{inputs[0].size} / {inputs[1].size} tags, {inputs[3].shape[0]} drift steps")
    print(f"{'kernel':<16}{'numpy s':>10}{'numba s':>10}{'speedup':>9}  agree")
    prev = kernels.backend()
    try:
        for name, fn in cases(*inputs).items():
            kernels.set_backend("numpy")
            t_np, out_np = best_of(fn, args.repeat), fn()
            kernels.set_backend("numba")
            t_nb, out_nb = best_of(fn, args.repeat), fn()
            print(f"{name:<16}{t_np:>10.4f}{t_nb:>10.4f}{t_np / t_nb:>8.1f}x  {same(out_np, out_nb)}")
    finally:
        kernels.set_backend(prev)


if __name__ == "__main__":
    main()
