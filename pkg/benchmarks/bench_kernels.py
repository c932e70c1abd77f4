"""Time the compiled and pure-Python kernel backends side by side.

Usage::

    python3 benchmarks/bench_kernels.py [--n 16000] [--repeat 3]

Each kernel runs on identical inputs under every importable backend; outputs
are compared for bit equality before timings are reported.
"""

import argparse
import time

import numpy as np

from policyregret._backend import available_backends
from policyregret.core import RngStream, basis_features, margin_dgp


def design_args(n: int):
    spec = margin_dgp(1.0, 0.1)
    gen = RngStream(0, 0).generator()
    x = gen.random((n, 1))
    u = gen.random(n)
    zp = spec.draw_rewards(spec.q(1.0, x), gen)
    zm = spec.draw_rewards(spec.q(-1.0, x), gen)
    return (np.ascontiguousarray(basis_features("interaction", 1.0, x)),
            np.ascontiguousarray(basis_features("interaction", -1.0, x)),
            zp, zm, u, np.ascontiguousarray(spec.p_one(x)), np.full(n, 0.1), np.full(n, 0.25), 50, 1e-8)


def sweep_args(n: int):
    gen = np.random.default_rng(1)
    return np.sort(gen.random(n)), gen.normal(size=n), 0.0, 0.0, 1.0


def best_of(fn, args, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b), equal_nan=True))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = available_backends()
    cases = {"design_loop": design_args(args.n), "threshold_sweep": sweep_args(args.n)}
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'identical':>11}")
    for name, kargs in cases.items():
        times, outs = {}, {}
        for b, mod in backends.items():
            times[b], outs[b] = best_of(getattr(mod, name), kargs, args.repeat)
        row = f"{name:<16}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.1f}x{str(same(outs['python'], outs['cython'])):>11}"
        print(row)


if __name__ == "__main__":
    main()
