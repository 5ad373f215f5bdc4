"""Time the chain kernels compiled with numba against their pure-Python bodies.

Usage::

    python benchmarks/bench_kernels.py [--duration 2] [--repeat 3]

The pure-Python path is reached through each dispatcher's ``py_func`` so a
single process can time both; compile time is excluded by a warm-up run.
"""

import argparse
import time

import numpy as np

from rydlock import _accel
from rydlock.atomic import LadderScheme, RydbergTarget, cascade_integral_scalar
from rydlock.noise import NoiseSpec
from rydlock.servo import default_chain_config, kernels, run_locked_chain


def _config(duration, mode):
    cfg = default_chain_config(duration=duration, mode=mode)
    for c in range(3):
        cfg = cfg.with_channel(c, noise=NoiseSpec(h0=1e8, seed=c),
                               lock_noise=NoiseSpec(h0=1e6, seed=10 + c))
    return cfg


def _best(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_chain(mode, duration, repeat):
    scheme, target = LadderScheme.rb85_default(), RydbergTarget(50, "F7/2")
    cfg = _config(duration, mode)
    name = "envelope_chunk" if mode == "envelope" else "waveform_chunk"
    compiled = getattr(kernels, name)
    fast = _best(lambda: run_locked_chain(cfg, scheme, target), repeat)
    setattr(kernels, name, _accel.py_func(compiled))
    try:
        slow = _best(lambda: run_locked_chain(cfg, scheme, target), 1)
    finally:
        setattr(kernels, name, compiled)
    return fast, slow


def bench_cascade(n, repeat):
    c = np.random.default_rng(0).uniform(-20, 20, (n, 3))
    pure = _accel.py_func(cascade_integral_scalar)

    def run(f):
        return lambda: [f(a, b, d, 4.7, 1.6, 3.8, 169.0, 3) for a, b, d in c]

    return _best(run(cascade_integral_scalar), repeat), _best(run(pure), 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--duration", type=float, default=2.0, help="simulated seconds per chain run")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _accel.USE_NUMBA:
        raise SystemExit("numba is disabled (RYDLOCK_DISABLE_NUMBA); nothing to compare")

    rows = [
        (f"envelope chain, {args.duration:g} s", *bench_chain("envelope", args.duration, args.repeat)),
        (f"waveform chain, {args.duration / 20:g} s",
         *bench_chain("waveform", args.duration / 20, args.repeat)),
        ("velocity integral x2000", *bench_cascade(2000, args.repeat)),
    ]
    print(f"{'case':<28}{'numba [s]':>12}{'python [s]':>12}{'speed-up':>10}")
    for label, fast, slow in rows:
        print(f"{label:<28}{fast:>12.4f}{slow:>12.4f}{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
