"""Compare the compiled kernels against the pure-numpy fallback.

Times the five primitive operations and a full forward/backward pass of an
auction-sized network under both backends.  Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats 200]
"""
import argparse
import importlib
import os
import time

import numpy as np


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(mod, rng):
    K, din, dh = 500, 31, 64
    X = rng.normal(size=(K, din))
    W = rng.normal(size=(din, dh))
    b = rng.normal(size=dh)
    Y = np.empty((K, dh))
    A = np.tanh(rng.normal(size=(K, dh)))
    dA = rng.normal(size=(K, dh))
    dY = rng.normal(size=(K, dh))
    dW = np.empty_like(W)
    db = np.empty_like(b)
    dX = np.empty_like(X)
    out_t = np.empty_like(A)
    return {
        "linear_forward": lambda: mod.linear_forward(X, W, b, Y),
        "tanh_forward": lambda: mod.tanh_forward(Y, out_t),
        "tanh_backward": lambda: mod.tanh_backward(dA, A, out_t),
        "linear_backward": lambda: mod.linear_backward(dY, X, W, dW, db, dX),
        "linear_backward_input": lambda: mod.linear_backward_input(dY, W, dX),
    }


def net_case(rng):
    from gradmarket.nn import backward, forward, init_network

    net = init_network((31, 64, 64, 30), "softmax_rows", np.random.default_rng(0), row_group=6)
    x = rng.normal(size=(500, 31))
    u = rng.normal(size=(500, 30))

    def run():
        _, tape = forward(net, x)
        backward(tape, u)

    return run


def bench_backend(name, repeats):
    os.environ["GRADMARKET_BACKEND"] = name
    import gradmarket.backend as backend

    importlib.reload(backend)
    import gradmarket.nn as nn_mod

    importlib.reload(nn_mod)
    rng = np.random.default_rng(42)
    rows = {}
    for label, fn in kernel_cases(backend.kernels, rng).items():
        fn()  # warm up
        rows[label] = best_of(fn, repeats)
    full = net_case(rng)
    full()
    rows["forward+backward (500x31->64->64->30)"] = best_of(full, max(repeats // 4, 5))
    return backend.backend_name, rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    results = {}
    for requested in ("c", "py"):
        try:
            name, rows = bench_backend(requested, args.repeats)
        except ImportError:
            print(f"backend {requested!r} unavailable, skipping")
            continue
        results[name] = rows

    labels = next(iter(results.values())).keys()
    width = max(len(l) for l in labels)
    header = f"{'operation':<{width}}  " + "".join(f"{n:>12}" for n in results) + "      ratio"
    print(header)
    print("-" * len(header))
    for label in labels:
        cells = "".join(f"{results[n][label]*1e6:>10.1f}us" for n in results)
        if len(results) == 2:
            a, b = (results[n][label] for n in results)
            ratio = f"{b / a:10.2f}x"
        else:
            ratio = ""
        print(f"{label:<{width}}  {cells}{ratio}")


if __name__ == "__main__":
    main()
