"""Benchmark the numba kernel path against the pure-numpy fallback.

The active path is fixed at import time by SEQLPD_NUMBA, so this script
re-launches itself twice as a worker subprocess — once per path — on
identical seeded inputs, then prints a side-by-side table.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N] [--scale small|full]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _inputs(scale):
    import numpy as np

    rng = np.random.default_rng(2024)
    if scale == "small":
        n_pts, n_feat, n_map, n_desc = 4000, 1024, 1500, 1500
    else:
        n_pts, n_feat, n_map, n_desc = 20000, 4096, 5000, 5000
    return {
        "points": rng.uniform(-25.0, 25.0, size=(n_pts, 3)),
        "feats": rng.normal(size=(n_feat, 64)),
        "x": rng.normal(size=(n_desc, 256)),
        "qd": rng.normal(size=(10, 256)),
        "rd": rng.normal(size=(n_map, 256)),
        "m": rng.random((10, n_map)),
        "offsets": np.floor((0.8 + 0.1 * np.arange(5))[:, None]
                            * np.arange(10)[None, :] + 0.5).astype(np.int64),
    }


def _bench(fn, repeats):
    fn()  # warm caches (and trigger jit compilation on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def run_worker(scale, repeats):
    import numpy as np

    from seqlpd import kernels
    from seqlpd._accel import NUMBA_ENABLED

    data = _inputs(scale)
    tree = kernels.kdtree_build(data["points"])
    nbr = kernels.kdtree_knn(tree, data["points"], 20)
    centers = np.ascontiguousarray(data["x"][:25])

    cases = {
        "kdtree_build (n x 3)": lambda: kernels.kdtree_build(data["points"]),
        "kdtree_knn k=20": lambda: kernels.kdtree_knn(tree, data["points"], 20),
        "feature_knn k=20 (n x 64)": lambda: kernels.feature_knn(data["feats"], 20),
        "local_stats k=20": lambda: kernels.local_stats(data["points"], nbr),
        "kmeans_assign K=25 (n x 256)": lambda: kernels.kmeans_assign(data["x"], centers),
        "pairwise_l2 (10 x n x 256)": lambda: kernels.pairwise_l2(data["qd"], data["rd"]),
        "trajectory_grid W=10": lambda: kernels.trajectory_grid(data["m"], data["offsets"]),
    }
    results = {"numba": bool(NUMBA_ENABLED),
               "times": {name: _bench(fn, repeats) for name, fn in cases.items()}}
    print(json.dumps(results))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--scale", choices=("small", "full"), default="full")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()

    if args.worker:
        run_worker(args.scale, args.repeats)
        return

    results = {}
    for mode in ("0", "1"):
        env = dict(os.environ, SEQLPD_NUMBA=mode)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--scale", args.scale, "--repeats", str(args.repeats)],
            env=env, capture_output=True, text=True)
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            sys.exit(proc.returncode)
        results[mode] = json.loads(proc.stdout.strip().splitlines()[-1])

    if not results["1"]["numba"]:
        print("note: numba unavailable, both columns ran the numpy path")
    width = max(len(k) for k in results["0"]["times"])
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name in results["0"]["times"]:
        t_np = results["0"]["times"][name]
        t_nb = results["1"]["times"][name]
        print(f"{name:<{width}}  {t_np:>9.4f}s  {t_nb:>9.4f}s  "
              f"{t_np / t_nb:>7.2f}x")


if __name__ == "__main__":
    main()
