"""Compare the numba and numpy kernel paths.

    python benchmarks/bench_kernels.py            # per-kernel timings
    python benchmarks/bench_kernels.py --train    # also a short training run under each GT_NUMBA setting

Kernel timings call both implementations directly in one process; the
training comparison starts a fresh interpreter per flag because the backend
is picked at import.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from graphtrans import kernels

TRAIN_SNIPPET = """
import time
from graphtrans import kernels
from graphtrans.config import parse_config_text
from graphtrans.train import train
run = parse_config_text("preset=desk\\ntask=copy\\nmax_steps={steps}\\neval_interval={steps}\\nseed=1")
t = time.perf_counter()
train(run)
print(kernels.backend_name(), time.perf_counter() - t)
"""


def kernel_cases(rows, cols, rng):
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    g = rng.standard_normal((rows, cols)).astype(np.float32)
    gamma = np.ones(cols, np.float32)
    beta = np.zeros(cols, np.float32)
    targets = rng.integers(0, cols, rows)
    weights = np.ones(rows, np.float32)
    ids = rng.integers(0, 64, rows)
    probs = kernels.numpy_impl.softmax_fwd(x.copy())
    _, xhat, rstd = kernels.numpy_impl.layernorm_fwd(x, gamma, beta, 1e-6)
    p = rng.standard_normal(rows * cols).astype(np.float32)
    return {
        "softmax_fwd": lambda impl: impl.softmax_fwd(x.copy()),
        "softmax_bwd": lambda impl: impl.softmax_bwd(probs, g),
        "layernorm_fwd": lambda impl: impl.layernorm_fwd(x, gamma, beta, 1e-6),
        "layernorm_bwd": lambda impl: impl.layernorm_bwd(g, xhat, rstd, gamma),
        "xent_fwd": lambda impl: impl.xent_fwd(x, targets, weights, 0.1),
        "xent_bwd": lambda impl: impl.xent_bwd(probs, targets, weights, 0.1, 1.0 / rows),
        "scatter_rows": lambda impl: impl.scatter_rows(ids, g, 64),
        "adam_update": lambda impl: impl.adam_update(p.copy(), p, np.zeros_like(p), np.zeros_like(p),
                                                     1e-3, 0.9, 0.98, 1e-9, 3),
    }


def bench_kernels(rows, cols, repeat):
    impls = {"numpy": kernels.numpy_impl}
    if kernels.HAVE_NUMBA:
        impls["numba"] = kernels.numba_impl
    results = []
    for name, call in kernel_cases(rows, cols, np.random.default_rng(0)).items():
        row = {"kernel": name}
        for label, impl in impls.items():
            call(impl)  # compile / warm caches
            row[label] = min(timeit.repeat(lambda: call(impl), number=10, repeat=repeat)) / 10
        if "numba" in row:
            row["speedup"] = row["numpy"] / row["numba"]
        results.append(row)
    return results


def bench_training(steps):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, GT_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", TRAIN_SNIPPET.format(steps=steps)], env=env,
                              capture_output=True, text=True, check=True)
        backend, seconds = proc.stdout.split()
        out[backend] = float(seconds)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=2048)
    ap.add_argument("--cols", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--train", action="store_true", help="also time a short training run per backend")
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--json", action="store_true", help="print raw JSON instead of a table")
    args = ap.parse_args(argv)

    results = bench_kernels(args.rows, args.cols, args.repeat)
    report = {"rows": args.rows, "cols": args.cols, "kernels": results}
    if args.train:
        report["train_seconds"] = bench_training(args.steps)
    if args.json:
        print(json.dumps(report, indent=2))
        return
    print(f"{'kernel':<15}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}")
    for r in results:
        nb = f"{r['numba'] * 1e3:11.3f}" if "numba" in r else f"{'-':>11}"
        sp = f"{r['speedup']:9.2f}" if "speedup" in r else f"{'-':>9}"
        print(f"{r['kernel']:<15}{r['numpy'] * 1e3:11.3f}{nb}{sp}")
    if args.train:
        for backend, seconds in report["train_seconds"].items():
            print(f"train {args.steps} steps, {backend}: {seconds:.1f} s")


if __name__ == "__main__":
    main()
