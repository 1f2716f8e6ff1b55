"""Time the numba and pure-numpy kernel backends side by side.

Each backend runs in its own interpreter because the choice is made once at
import time from KENDAMA_NUMBA. Usage:

    python benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from kendama import _kernels as k
from kendama.dynamics import PhysicalParams

repeat = int(sys.argv[1])
p = PhysicalParams().as_array()
rng = np.random.default_rng(0)
x0 = np.array([0.0, 0.0, 0.3, 0.1, -0.2, 1.0])
U = rng.normal(0, 2, size=(150, 2)) + [0.0, 2.3]
F = np.array([0.5, 2.3, 0.0])
gX = rng.normal(size=(151, 6)); gU = rng.normal(size=(150, 2))
gens = rng.normal(size=(40, 2)); c = np.zeros(2); dirs = rng.normal(size=(2000, 2))
H = rng.normal(size=(24, 2)); h = np.ones(24); pts = rng.normal(size=(20000, 2))

cases = {
    "rk4 1000 steps": lambda: k.rk4(x0, F, p, 1e-3, 1000),
    "shoot N=150": lambda: k.shoot(x0, U, p, 0.01),
    "shoot+adjoint N=150": lambda: k.adjoint(k.shoot(x0, U, p, 0.01), U, p, 0.01, gX, gU),
    "zonotope support 40 gens x 2000 dirs": lambda: k.zonotope_support(c, gens, dirs),
    "hpoly contains 24 rows x 20000 pts": lambda: k.hpoly_contains(H, h, pts, 1e-9),
}
out = {"backend": k.BACKEND}
for name, fn in cases.items():
    fn()  # warm-up (compiles under numba)
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter(); fn(); best = min(best, time.perf_counter() - t)
    out[name] = best
print(json.dumps(out))
"""


def run_backend(flag: str, repeat: int) -> dict:
    env = dict(os.environ, KENDAMA_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    fast = run_backend("1", args.repeat)
    slow = run_backend("0", args.repeat)
    print(f"{'kernel':40s} {fast['backend']:>12s} {slow['backend']:>12s} {'speedup':>8s}")
    for name in fast:
        if name == "backend":
            continue
        a, b = fast[name], slow[name]
        print(f"{name:40s} {a * 1e3:10.3f}ms {b * 1e3:10.3f}ms {b / a:7.1f}x")


if __name__ == "__main__":
    main()
