"""Time the compiled kernels against the numpy fallback on the same inputs.

    python benchmarks/bench_kernels.py [--repeat 3]

Also checks that both backends return identical results.
"""
import argparse
import time

import numpy as np

from voxsyn import kernels
from voxsyn.grid import BBox, quantize_features, voxel_centers
from voxsyn.nnf import PatchSet, _split, approximate_nnf, exact_nnf
from voxsyn.xform import marching_cubes


def _features(rng, dims):
    g = np.clip(rng.normal(size=dims), -1, 1)
    a = rng.normal(size=dims + (3,))
    a *= np.minimum(1.0, 2.0 / np.linalg.norm(a, axis=-1, keepdims=True))
    return quantize_features(np.concatenate([g[..., None], a], axis=-1))


def cases(rng):
    Q = PatchSet(_features(rng, (24, 24, 12)), 5)
    K = PatchSet(_features(rng, (24, 24, 12)), 5)
    m = 200_000
    qi = rng.integers(0, Q.count, m)
    ki = rng.integers(0, K.count, m)

    def pair():
        return kernels.pair_distances(Q.volume, K.volume, 5, 0.5, qi, ki)

    def score():
        qg, qa, qng, qna = _split(Q.features, 125)
        kg, ka, kng, kna = _split(K.features, 125)
        best = np.full(Q.count, np.inf)
        arg = np.zeros(Q.count, dtype=np.int64)
        colmin = np.empty(K.count)
        kernels.score_block(qa @ ka.T, qg @ kg.T, qna, kna, qng, kng, 0.5, 0.01, True, best, arg, 0, colmin)
        return arg

    def exact():
        return exact_nnf(Q, K, 0.5, 0.01).assignment

    def patchmatch():
        return approximate_nnf(Q, K, 0.5, seed=1, sweeps=2).assignment

    n, b = 40, BBox((1.0, 1.0, 1.0))
    mesh = marching_cubes(np.linalg.norm(voxel_centers((n, n, n), b), axis=-1) - 0.6, 0.0, b)
    vs = b.voxel_size((n, n, n))

    def mesh_dist():
        return kernels.mesh_distance(mesh.vertices, mesh.triangles, (n, n, n), -b.extents + 0.5 * vs, vs, 0.15)

    return {"pair_distances (200k pairs)": pair, "score_block (2000x2000)": score,
            "exact_nnf (2000x2000)": exact, "approximate_nnf (2 sweeps)": patchmatch,
            "mesh_distance (40^3, t=0.15)": mesh_dist}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "cython" not in kernels.BACKENDS:
        raise SystemExit("compiled extension not built; reinstall without VOXSYN_NO_EXT")
    work = cases(np.random.default_rng(0))
    print(f"{'kernel':32s} {'cython s':>10s} {'python s':>10s} {'speed-up':>9s}  same")
    for name, fn in work.items():
        times, outs = {}, {}
        for backend in ("cython", "python"):
            with kernels.using(backend):
                outs[backend] = fn()
                best = np.inf
                for _ in range(args.repeat):
                    t0 = time.perf_counter()
                    fn()
                    best = min(best, time.perf_counter() - t0)
                times[backend] = best
        same = np.array_equal(outs["cython"], outs["python"])
        print(f"{name:32s} {times['cython']:10.4f} {times['python']:10.4f} "
              f"{times['python'] / times['cython']:8.1f}x  {same}")


if __name__ == "__main__":
    main()
