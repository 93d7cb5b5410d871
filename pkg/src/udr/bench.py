"""Benchmark the numba-compiled kernels against the pure-numpy fallback.

Both backends are loaded side by side (independent of UDR_BACKEND) and run
the same attack workloads; agreement is checked at 1e-10 relative tolerance
while timing, so the benchmark doubles as a backend-equivalence smoke test.
"""

import csv
import time

import numpy as np

from udr import backend, nn
from udr.tensor import Prng, per_sample_uniform


def _workloads():
    cases = []
    for name, dims, n in (("toy_2d", (2, 10, 10, 10, 2), 128),
                          ("image_784d", (784, 256, 128, 10), 64)):
        net = nn.DenseNet.init_random(dims, Prng(1).substream(0))
        rng = Prng(2)
        x = rng.uniform(0.0, 1.0, (n, dims[0]))
        y = rng.integers(0, dims[-1], n).astype(np.int64)
        noise = per_sample_uniform(3, 0, np.arange(n), dims[0], -0.1, 0.1)
        cases.append((name, net, x, y, noise))
    return cases


def _run_attacks(kmod, net, x, y, noise, k_steps):
    args = net.kernel_args()
    out1 = kmod.attack_pgd(*args, x, noise, y, k_steps, 0.3, 0.01, True, 0)
    dummy = np.zeros((1, 1, 1)), np.zeros((1, 1)), np.zeros((1, 1))
    out2 = kmod.attack_udr(*args, x, noise, y, k_steps, 0.01, 0.5, 0, 1.0,
                           1, 0.3, 0.02, True, False, True, False, *dummy)
    return out1, out2


def run_benchmark(repeats: int = 5, k_steps: int = 20):
    """Returns rows of (case, numba_s, numpy_s, speedup)."""
    rows = []
    nb, npk = backend.numba_kernels(), backend.numpy_kernels()
    for name, net, x, y, noise in _workloads():
        _run_attacks(nb, net, x, y, noise, k_steps)  # compile before timing
        ref = _run_attacks(npk, net, x, y, noise, k_steps)
        got = _run_attacks(nb, net, x, y, noise, k_steps)
        for a, b in zip(ref, got):
            if not np.allclose(a, b, rtol=1e-10, atol=1e-12):
                raise AssertionError(f"backend mismatch on {name}")
        timings = {}
        for label, kmod in (("numba", nb), ("numpy", npk)):
            best = np.inf
            for _ in range(repeats):
                t0 = time.perf_counter()
                _run_attacks(kmod, net, x, y, noise, k_steps)
                best = min(best, time.perf_counter() - t0)
            timings[label] = best
        rows.append((name, timings["numba"], timings["numpy"],
                     timings["numpy"] / timings["numba"]))
    return rows


def format_rows(rows) -> str:
    lines = [f"{'case':<12} {'numba_s':>10} {'numpy_s':>10} {'speedup':>8}"]
    for name, tnb, tnp, sp in rows:
        lines.append(f"{name:<12} {tnb:>10.4f} {tnp:>10.4f} {sp:>8.1f}x")
    return "\n".join(lines)


def write_csv(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["case", "numba_seconds", "numpy_seconds", "speedup"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3])])
