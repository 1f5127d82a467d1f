"""Compare the compiled and pure-Python radius / Lambert W kernels.

    python benchmarks/bench_kernels.py [--n 100000] [--repeat 5]
"""
import argparse
import math
import timeit

import numpy as np

from alstop import _kernels_py

try:
    from alstop import _kernels as compiled
except ImportError:
    compiled = None


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    kl = np.exp(rng.uniform(math.log(1e-12), math.log(1e3), args.n))
    x = rng.uniform(-1 / math.e, 50.0, args.n)
    scalars = [float(v) for v in kl[:10_000]]

    backends = [("python", _kernels_py)]
    if compiled is not None:
        backends.append(("cython", compiled))
    else:
        print("compiled kernels not built; reporting the Python fallback only")

    cases = [
        (f"radius_array   n={args.n}", lambda k: (lambda: k.radius_array(kl))),
        (f"lambert_w0_arr n={args.n}", lambda k: (lambda: k.lambert_w0_array(x))),
        ("radius_scalar  10000 calls", lambda k: (lambda: [k.radius_scalar(v) for v in scalars])),
    ]
    print(f"{'case':<28}" + "".join(f"{name:>12}" for name, _ in backends) + "     speedup")
    for label, make in cases:
        times = [best_time(make(mod), args.repeat) for _, mod in backends]
        row = f"{label:<28}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"  {times[0] / times[1]:>9.1f}x"
        print(row)

    if compiled is not None:
        diff = np.max(np.abs(compiled.radius_array(kl) - _kernels_py.radius_array(kl)) / compiled.radius_array(kl))
        print(f"max relative difference between backends (radius): {diff:.1e}")


if __name__ == "__main__":
    main()
