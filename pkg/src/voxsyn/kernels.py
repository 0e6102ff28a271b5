"""Hot inner loops, dispatched to the compiled extension when it is importable.

Set ``VOXSYN_KERNELS=python`` to force the numpy fallback.
"""
from __future__ import annotations

import os
from contextlib import contextmanager

from . import _pykernels

BACKENDS = {"python": _pykernels}
try:
    from . import _ckernels

    BACKENDS["cython"] = _ckernels
except ImportError:  # extension not built
    pass


def _initial():
    want = os.environ.get("VOXSYN_KERNELS", "").strip().lower()
    if want:
        if want not in BACKENDS:
            raise ImportError(f"VOXSYN_KERNELS={want!r} requested but available backends are {sorted(BACKENDS)}")
        return want
    return "cython" if "cython" in BACKENDS else "python"


BACKEND = _initial()
_impl = BACKENDS[BACKEND]


def set_backend(name: str) -> None:
    global BACKEND, _impl
    if name not in BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; available: {sorted(BACKENDS)}")
    BACKEND = name
    _impl = BACKENDS[name]


@contextmanager
def using(name: str):
    prev = BACKEND
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def pair_distances(qvol, kvol, p, w_a, qidx, kidx):
    return _impl.pair_distances(qvol, kvol, p, w_a, qidx, kidx)


def improve(qvol, kvol, p, w_a, cand, assign, dist) -> int:
    return _impl.improve(qvol, kvol, p, w_a, cand, assign, dist)


def point_triangle_dist2(pts, a, b, c):
    return _impl.point_triangle_dist2(pts, a, b, c)


def mesh_distance(verts, faces, dims, origin, voxel_size, max_dist):
    return _impl.mesh_distance(verts, faces, dims, origin, voxel_size, max_dist)


def score_block(Ga, Gg, qna, kna, qng, kng, w_a, alpha, use_alpha, best, arg, offset, colmin):
    return _impl.score_block(Ga, Gg, qna, kna, qng, kng, w_a, alpha, use_alpha, best, arg, offset, colmin)
