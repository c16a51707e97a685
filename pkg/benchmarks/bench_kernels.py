"""Compare the compiled and NumPy hinge-scatter kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20]

For each batch size the script mines the exhaustive face-voice triplet list
of a P x K batch, checks that both backends agree bit for bit, and reports
the best-of-N wall time per call.
"""

import argparse
import timeit

import numpy as np

from xmodal import kernels
from xmodal.triplet import mine_triplets, pairwise_distances

SIZES = [(4, 2), (8, 4), (16, 4), (32, 4)]


def _case(P, K, seed=0):
    rng = np.random.default_rng(seed)
    labels = [f"p{i}" for i in range(P) for _ in range(K)]
    F = rng.standard_normal((P * K, 32))
    V = rng.standard_normal((P * K, 32))
    F /= np.linalg.norm(F, axis=1, keepdims=True)
    V /= np.linalg.norm(V, axis=1, keepdims=True)
    return pairwise_distances(F, V), mine_triplets(labels, labels).face_voice


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'P x K':>8} {'triplets':>9} " + " ".join(f"{b + ' (ms)':>14}" for b in backends) + "  speedup")
    for P, K in SIZES:
        D, T = _case(P, K)
        results = {b: kernels.hinge_scatter(D, T, 1.0, backend=b) for b in backends}
        ref = results["python"]
        for b, res in results.items():
            assert np.array_equal(res[0], ref[0]) and np.array_equal(res[1], ref[1]) and res[2] == ref[2], b
        times = {
            b: min(timeit.repeat(lambda b=b: kernels.hinge_scatter(D, T, 1.0, backend=b), number=5, repeat=args.repeat)) / 5
            for b in backends
        }
        speedup = f"{times['python'] / times['cython']:7.1f}x" if "cython" in times else "      -"
        cells = " ".join(f"{times[b] * 1e3:14.3f}" for b in backends)
        print(f"{P:>4} x {K:<2} {len(T):>9} {cells}  {speedup}")


if __name__ == "__main__":
    main()
