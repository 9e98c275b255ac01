"""Benchmark the compiled kernels against the pure-Python fallback.

The backend is chosen at import time, so each backend runs in its own
subprocess: once normally (compiled extension if built) and once with
``NEEDLEMETRICS_PURE=1``.

Usage: python3 benchmarks/bench_kernels.py [--n 200000] [--repeats 5]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _run_backend(n, repeats, pure):
    env = dict(os.environ)
    if pure:
        env["NEEDLEMETRICS_PURE"] = "1"
    else:
        env.pop("NEEDLEMETRICS_PURE", None)
    out = subprocess.run(
        [sys.executable, __file__, "--worker", "--n", str(n),
         "--repeats", str(repeats)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(out.stdout)


def _worker(n, repeats):
    import numpy as np

    from needlemetrics import backend

    rng = np.random.default_rng(0)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    t = np.arange(n) / 100.0
    t_query = np.linspace(t[0], t[-1], n // 2)
    x = rng.normal(size=(n, 3)).cumsum(axis=0)

    def best_of(fn):
        times = []
        for _ in range(repeats):
            start = time.perf_counter()
            fn()
            times.append(time.perf_counter() - start)
        return min(times)

    results = {
        "backend": backend.BACKEND,
        "rel_angles": best_of(lambda: backend.rel_angles(q)),
        "slerp_resample": best_of(lambda: backend.slerp_resample(t, q, t_query)),
        "path_length": best_of(lambda: backend.path_length(x)),
    }
    print(json.dumps(results))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=200_000,
                        help="samples per synthetic stream")
    parser.add_argument("--repeats", type=int, default=5,
                        help="repeats per kernel (best time reported)")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        _worker(args.n, args.repeats)
        return

    compiled = _run_backend(args.n, args.repeats, pure=False)
    pure = _run_backend(args.n, args.repeats, pure=True)

    print(f"n = {args.n} samples, best of {args.repeats}")
    print(f"default backend: {compiled['backend']}; "
          f"NEEDLEMETRICS_PURE=1 backend: {pure['backend']}")
    print(f"{'kernel':<16} {compiled['backend']:>12} {pure['backend']:>12} "
          f"{'speedup':>9}")
    for kernel in ("rel_angles", "slerp_resample", "path_length"):
        a, b = compiled[kernel], pure[kernel]
        print(f"{kernel:<16} {a * 1e3:>10.2f}ms {b * 1e3:>10.2f}ms "
              f"{b / a:>8.2f}x")


if __name__ == "__main__":
    main()
