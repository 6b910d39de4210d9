"""Compare the compiled and pure-Python kernel backends.

Usage: python3 benchmarks/bench_kernels.py [--d 15] [--repeat 5]

Micro benchmarks call both kernel modules directly. The end-to-end timing
runs one estimation per backend in a subprocess, because the backend is
fixed when :mod:`spgarch.kernels` is first imported.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from spgarch import _kernels_py
from spgarch.weights import rook_grid

try:
    from spgarch import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

END_TO_END = """
import time
from spgarch import BACKEND
from spgarch.model import ModelSpec, Theta
from spgarch.weights import rook_grid
from spgarch.simulate import simulate_field
from spgarch.estimate import estimate_nls
w = rook_grid({d}, oriented=True)
spec = ModelSpec()
y = simulate_field(spec, Theta(0.5, 0.5, 1.0), w, w, seed=1).y
t = time.perf_counter()
for _ in range({repeat}):
    estimate_nls(spec, y, w, w, std_errors=False)
print(BACKEND, (time.perf_counter() - t) / {repeat})
"""


def _time(fn, repeat):
    number = max(1, int(0.2 / max(min(timeit.repeat(fn, number=1, repeat=3)), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def micro(d: int, repeat: int):
    w = rook_grid(d, oriented=True)
    n = w.n
    rng = np.random.default_rng(0)
    e = rng.standard_normal(n) ** 2
    rhs = np.ones((n, 2))
    args = (w.indptr, w.indices, w.data)
    cases = {
        "lower_solve": lambda k: k.lower_solve(*args, 0.5, rhs),
        "lower_solve_pair": lambda k: k.lower_solve_pair(*args, 0.5, e[:, None], *args, 0.5, rhs[:, :1]),
        "fixed_point": lambda k: k.fixed_point(0, *args, 0.5, *args, 0.5, 1.0, e, np.ones(n), 1e-10, 10_000),
    }
    rows = []
    for name, call in cases.items():
        t_py = _time(lambda call=call: call(_kernels_py), repeat)
        t_c = _time(lambda call=call: call(_kernels_c), repeat) if _kernels_c else float("nan")
        rows.append((name, t_c, t_py))
    return rows


def end_to_end(d: int, repeat: int):
    out = {}
    for label, env in (("cython", {}), ("python", {"SPGARCH_PURE_PYTHON": "1"})):
        res = subprocess.run([sys.executable, "-c", END_TO_END.format(d=d, repeat=repeat)],
                             env={**os.environ, **env}, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[label] = (backend, float(secs))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--d", type=int, default=15, help="grid side (n = d^2)")
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"n = {args.d ** 2} sites, oriented rook grid")
    print(f"{'kernel':<18}{'compiled [us]':>15}{'python [us]':>15}{'speed-up':>10}")
    for name, t_c, t_py in micro(args.d, args.repeat):
        print(f"{name:<18}{t_c * 1e6:>15.1f}{t_py * 1e6:>15.1f}{t_py / t_c:>10.1f}")
    e2e = end_to_end(args.d, max(1, args.repeat // 2))
    print("\nfull estimation (27 starts + polish)")
    for label, (backend, secs) in e2e.items():
        print(f"  {label:<8} backend={backend:<7} {secs:8.3f} s")


if __name__ == "__main__":
    main()
