"""Benchmark the compiled kernel core against the numpy fallback.

Times the raw kernels plus a full model forward/backward on the default
architecture, once per available backend, and verifies the outputs agree
bit for bit (the two implementations share their accumulation order).

Usage: python benchmarks/bench_backends.py [--repeats N] [--batch B]
"""

import argparse
import time

import numpy as np

from cstafnet import backend, model, training
from cstafnet.numerics import RngState


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(batch):
    rng = RngState(123)
    a = rng.uniform(-1, 1, (batch * 60, 192))
    b = rng.uniform(-1, 1, (192, 64))
    xp = rng.uniform(-1, 1, (batch, 66, 1))
    w7 = rng.uniform(-1, 1, (7, 1, 64))
    gy = rng.uniform(-1, 1, (batch, 60, 64))
    return [
        (f"matmul ({batch * 60}x192 @ 192x64)", lambda: backend.matmul(a, b)),
        (f"conv1d fwd (B={batch}, T=60, k=7, F=64)",
         lambda: backend.conv1d_fwd(xp, w7, 60)),
        (f"conv1d bwd_x (B={batch})", lambda: backend.conv1d_bwd_x(gy, w7)),
        (f"conv1d bwd_w (B={batch})", lambda: backend.conv1d_bwd_w(xp, gy)),
    ]


def model_case(batch):
    cfg = model.ModelConfig()  # the full default architecture
    params = model.build_model(cfg)
    rng = RngState(7)
    x = rng.uniform(-2, 2, (batch, cfg.input_dim))
    y = (RngState(8).random((batch,)) * cfg.n_classes).astype(np.int64)

    def step():
        out, tape = model.forward_tape(params, cfg, x, "train", RngState(9),
                                       update_stats=False)
        loss, gout = training.scce_loss(y, out)
        return model.backward(gout, tape)

    return f"model fwd+bwd (default config, B={batch})", step


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()

    backends = backend.available_backends()
    print(f"available backends: {backends}")
    if len(backends) < 2:
        print("compiled kernels not built; timing the fallback only")

    cases = kernel_cases(args.batch) + [model_case(args.batch)]
    mismatches = 0
    width = max(len(name) for name, _ in cases)
    header = f"{'case':<{width}}" + "".join(f"{b:>12}" for b in backends)
    print(header + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases:
        times = {}
        results = {}
        for b in backends:
            backend.set_backend(b)
            result = fn()  # warm-up, also keeps the output for comparison
            results[b] = result
            times[b] = best_of(fn, args.repeats)
        line = f"{name:<{width}}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends)
        if len(backends) == 2:
            line += f"{times['python'] / times['compiled']:>11.1f}x"
            a, b_ = results["python"], results["compiled"]
            if isinstance(a, dict):
                identical = all(np.array_equal(a[k], b_[k]) for k in a)
            else:
                identical = np.array_equal(a, b_)
            if not identical:
                line += "  OUTPUTS DIFFER"
                mismatches += 1
        print(line)
    backend.set_backend(backends[-1])
    if mismatches:
        print(f"{mismatches} case(s) differ between backends")
        return 1
    if len(backends) == 2:
        print("all outputs bit-identical across backends")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
