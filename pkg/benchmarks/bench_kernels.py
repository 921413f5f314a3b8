"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the adjugate/determinant kernel, one agent right-hand side and a full
run of the bundled two-agent scenario under each backend. The full-run
timing for the fallback is taken in a subprocess with FCTDSE_PURE_PYTHON=1
so that the simulator itself picks the fallback at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fctdse import _kernels
from fctdse._kernels import _fallback

RUN_SNIPPET = (
    "import time;from fctdse.sim import run,load_scenario,bundled_scenario_path;"
    "sc=load_scenario(bundled_scenario_path());t=time.perf_counter();run(sc);"
    "print(time.perf_counter()-t)"
)


def time_call(fn, number, repeat):
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def full_run(pure, repeat):
    env = dict(os.environ, FCTDSE_PURE_PYTHON="1" if pure else "0")
    best = float("inf")
    for _ in range(repeat):
        out = subprocess.run([sys.executable, "-c", RUN_SNIPPET], env=env, capture_output=True, text=True, check=True)
        best = min(best, float(out.stdout.strip()))
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels.compiled is None:
        print("compiled extension not available; only the fallback can be timed")
    rng = np.random.default_rng(0)
    rows = []
    for n in (2, 4, 8):
        M = np.ascontiguousarray(rng.normal(size=(n, n)))
        A = rng.normal(size=(n, n))
        C = rng.normal(size=(1, n))
        s = rng.normal(size=_fallback.agent_state_size(n))
        y = rng.normal(size=1)
        out = np.zeros_like(s)
        impls = [("python", _fallback)]
        if _kernels.compiled is not None:
            impls.append(("cython", _kernels.compiled))
        for name, mod in impls:
            t_adj = time_call(lambda: mod.adjugate_det(M), 2000, args.repeat)
            t_rhs = time_call(lambda: mod.agent_rhs(s, A, C, y, 1.0, 5.0, 1.0, out), 2000, args.repeat)
            rows.append((n, name, t_adj, t_rhs))
    print(f"{'n':>3} {'backend':>8} {'adjugate_det':>14} {'agent_rhs':>12}")
    for n, name, a, r in rows:
        print(f"{n:>3} {name:>8} {a * 1e6:>11.2f} us {r * 1e6:>9.2f} us")

    print()
    t_py = full_run(True, max(1, args.repeat // 2))
    print(f"two-agent scenario, python fallback: {t_py:.2f} s")
    if _kernels.compiled is not None:
        t_cy = full_run(False, max(1, args.repeat // 2))
        print(f"two-agent scenario, cython core:     {t_cy:.2f} s  (speed-up {t_py / t_cy:.1f}x)")


if __name__ == "__main__":
    main()
