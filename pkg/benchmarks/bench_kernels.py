"""Compiled vs numpy fused loss kernels.

    python benchmarks/bench_kernels.py [--batch 128] [--classes 10] [--repeat 2000]

Times the per-batch objectives used by every training step, checks that the
two backends agree, then times one full training epoch under each backend.
"""

import argparse
import importlib
import os
import subprocess
import sys
import timeit

import numpy as np

from kdsteal import _kernels_py

try:
    from kdsteal import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _inputs(batch, classes, seed=0):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 3, (batch, classes))
    labels = rng.integers(0, classes, batch)
    t = rng.dirichlet(np.ones(classes), batch)
    ref_logq = np.log(rng.dirichlet(np.ones(classes), batch))
    return z, labels, t, ref_logq


def _cases(mod, z, labels, t, ref_logq):
    return {
        "ce": lambda: mod.distill_objective(z, labels, 1.0, None, 0.0, 1.0),
        "kd": lambda: mod.distill_objective(z, labels, 0.1, t, 0.9 * 16, 4.0),
        "nasty": lambda: mod.contrast_objective(z, labels, ref_logq, 0.04 * 16, 4.0, False),
    }


def bench_kernels(batch, classes, repeat):
    z, labels, t, ref_logq = _inputs(batch, classes)
    py = _cases(_kernels_py, z, labels, t, ref_logq)
    cy = _cases(_kernels_c, z, labels, t, ref_logq) if _kernels_c else {}
    print(f"kernel   batch={batch} classes={classes}   (us per call)")
    print(f"{'':8} {'numpy':>10} {'cython':>10} {'speedup':>8} {'max|dgrad|':>11}")
    for name, fn in py.items():
        t_py = min(timeit.repeat(fn, number=repeat, repeat=3)) / repeat * 1e6
        if name in cy:
            t_cy = min(timeit.repeat(cy[name], number=repeat, repeat=3)) / repeat * 1e6
            diff = np.max(np.abs(fn()[1] - cy[name]()[1]))
            print(f"{name:8} {t_py:10.1f} {t_cy:10.1f} {t_py / t_cy:7.1f}x {diff:11.1e}")
        else:
            print(f"{name:8} {t_py:10.1f} {'n/a':>10}")


_EPOCH = """
import time
from kdsteal import kernels
from kdsteal.data import SyntheticSpec, gen_dataset
from kdsteal.distill import TrainBudget, train_vanilla
train, test = gen_dataset(SyntheticSpec(modes=3))
t0 = time.perf_counter()
train_vanilla([16, 16, 10], train, TrainBudget(epochs=5, learning_rate=3e-3))
print(kernels.BACKEND, (time.perf_counter() - t0) / 5)
"""


def bench_epochs():
    print("\nfull epoch, 16-16-10 student, 5000 samples, batch 128")
    for backend in ("python", "cython"):
        env = dict(os.environ, KDSTEAL_KERNELS=backend)
        out = subprocess.run([sys.executable, "-c", _EPOCH], env=env, capture_output=True, text=True)
        if out.returncode:
            print(f"{backend:8} failed: {out.stderr.strip().splitlines()[-1]}")
            continue
        name, secs = out.stdout.split()
        print(f"{backend:8} -> {name:7} {float(secs) * 1e3:8.1f} ms/epoch")


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--repeat", type=int, default=2000)
    args = p.parse_args()
    if _kernels_c is None:
        print("compiled kernels not built; numpy timings only")
    bench_kernels(args.batch, args.classes, args.repeat)
    bench_epochs()


if __name__ == "__main__":
    main()
