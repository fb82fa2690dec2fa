"""Time the numba and pure-numpy kernel paths side by side.

    python benchmarks/bench_kernels.py [--repeat 5]

Both paths are importable regardless of ``DIFPATH_NUMBA``; the flag only
selects which one the library dispatches to.
"""
import argparse
import time

import numpy as np

from difpath import kernels


def _cases(rng):
    B, H, C, O = 32, 32, 32, 32
    xp = rng.standard_normal((B, H + 2, H + 2, C))
    w2 = rng.standard_normal((9 * C, O))
    dout = rng.standard_normal((B, H, H, O))
    img = np.zeros((512, 512, 3))
    n = 2000
    disks = (rng.uniform(0, 512, n), rng.uniform(0, 512, n), rng.uniform(3, 12, n),
             rng.uniform(0, 1, (n, 3)))
    fx, fy = rng.standard_normal((500, 64)), rng.standard_normal((500, 64))
    return {
        "conv_forward": lambda f: f(xp, w2, 3, 3, 1, H, H),
        "conv_grad_input": lambda f: f(dout, w2, 3, 3, 1, H + 2, H + 2),
        "conv_grad_weight": lambda f: f(xp, dout, 3, 3, 1),
        "paint_disks": lambda f: f(img.copy(), *disks),
        "poly_kernel_sums": lambda f: f(fx, fy, 1 / 64, 1.0, 3),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    cases = _cases(np.random.default_rng(0))
    backends = [b for b in ("numpy", "numba") if kernels.IMPLEMENTATIONS[b]["conv_forward"] is not None]
    print(f"{'kernel':<18}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for name, call in cases.items():
        row = []
        for b in backends:
            fn = kernels.IMPLEMENTATIONS[b][name]
            call(fn)  # warm-up (and JIT compile)
            t = time.perf_counter()
            for _ in range(args.repeat):
                call(fn)
            row.append((time.perf_counter() - t) / args.repeat * 1e3)
        speed = f"{row[0] / row[1]:>9.2f}x" if len(row) == 2 else ""
        print(f"{name:<18}" + "".join(f"{v:>12.2f}" for v in row) + speed)


if __name__ == "__main__":
    main()
