"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both flavours are called directly through ``kernels.NUMPY`` / ``kernels.NUMBA``
so the env flag does not matter here. The first numba call (compilation or
cache load) is excluded from the timings.
"""

import argparse
import timeit

import numpy as np

from scfde_txbf import kernels


def cases(rng):
    a = rng.exponential(size=(64, 2)) * 10.0
    b0 = np.array([0.3, 0.3])
    x = (rng.standard_normal((100, 64, 2)) + 1j * rng.standard_normal((100, 64, 2)))
    taps = (rng.standard_normal((16, 2, 2)) + 1j * rng.standard_normal((16, 2, 2)))
    lam = 0.05
    return {
        "waterfill (64x2)": lambda f: f["waterfill"](lam, np.ones(2), a),
        "inner_solve GMSE (64x2)": lambda f: f["inner_solve"](kernels.GMSE, lam, a, 1.0, b0,
                                                              0.5, 200, 1e-13),
        "inner_solve GSINR (64x2)": lambda f: f["inner_solve"](kernels.GSINR, lam, a, 1.0, b0,
                                                               0.5, 200, 1e-13),
        "channel_convolve (100 blocks)": lambda f: f["channel_convolve"](x, taps, 16),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'numpy [ms]':>12s} {'numba [ms]':>12s} {'speed-up':>9s}")
    for name, call in cases(rng).items():
        call(kernels.NUMBA)  # compile / load cache
        out = []
        for impl in (kernels.NUMPY, kernels.NUMBA):
            n, _ = timeit.Timer(lambda: call(impl)).autorange()
            best = min(timeit.repeat(lambda: call(impl), number=n, repeat=args.repeat)) / n
            out.append(best * 1e3)
        print(f"{name:32s} {out[0]:12.4f} {out[1]:12.4f} {out[0] / out[1]:8.1f}x")


if __name__ == "__main__":
    main()
