"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--sizes 64 128 256] [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from nematic2d.kernels import NEUMANN, PERIODIC, backends


def cases(n: int):
    rng = np.random.default_rng(0)
    h = 1.0 / n
    rho = 1.0 + 0.1 * rng.random((n, n))
    u = 0.1 * rng.standard_normal((n, n))
    w = 0.1 * rng.standard_normal((n, n))
    b = rng.standard_normal((n + 1, n + 1))
    return {
        "helmholtz_apply": lambda k: k.helmholtz_apply(rho, 1e-3, h, h, PERIODIC),
        "cg_helmholtz": lambda k: k.cg_helmholtz(b, b, 1e-3, h, h, NEUMANN, 1e-10, 5000),
        "upwind_divergence": lambda k: k.upwind_divergence(rho, u, w, h, h, True),
    }


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = backends()
    print(f"{'kernel':<18} {'n':>5} " + " ".join(f"{k + ' [ms]':>14}" for k in impls) + "  speedup")
    for n in args.sizes:
        for name, fn in cases(n).items():
            times = {}
            for key, mod in impls.items():
                fn(mod)
                times[key] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
            speed = times["python"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<18} {n:>5} " + " ".join(f"{t:>14.3f}" for t in times.values()) + f"  {speed:7.1f}x")


if __name__ == "__main__":
    main()
