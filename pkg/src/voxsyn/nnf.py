"""Patch nearest-neighbour fields: exact search with completeness scores, PatchMatch, blending."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels
from .grid import BBox, MappingField, continuous_index, quantize_features

log = logging.getLogger(__name__)

DEFAULT_BUDGET = 2 ** 31
# cap on entries of one (queries x key-chunk) distance block
_BLOCK_ENTRIES = 1 << 24


class CapacityError(MemoryError):
    """Raised when an exact distance matrix would exceed the element budget."""


@dataclass
class PatchSet:
    """All stride-1 ``p``-cubed patches of a channels-last volume.

    Patches are ordered lexicographically by corner (x slowest, z fastest).
    Feature rows are built lazily since the approximate search reads the
    volume directly.
    """

    volume: np.ndarray
    p: int

    def __post_init__(self):
        v = np.asarray(self.volume, dtype=np.float64)
        if v.ndim == 3:
            v = v[..., None]
        if v.ndim != 4:
            raise ValueError("patch volume must be (X, Y, Z, C)")
        if min(v.shape[:3]) < self.p:
            raise ValueError(f"volume dims {v.shape[:3]} smaller than patch size {self.p}")
        self.volume = np.ascontiguousarray(v)
        self._features = None

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.volume.shape[:3]

    @property
    def channels(self) -> int:
        return self.volume.shape[3]

    @property
    def grid_dims(self) -> tuple[int, int, int]:
        return tuple(d - self.p + 1 for d in self.dims)

    @property
    def count(self) -> int:
        return int(np.prod(self.grid_dims))

    @property
    def feature_dim(self) -> int:
        return self.channels * self.p ** 3

    def corners(self, idx=None) -> np.ndarray:
        idx = np.arange(self.count) if idx is None else np.asarray(idx)
        return np.stack(np.unravel_index(idx, self.grid_dims), axis=-1)

    @property
    def centers(self) -> np.ndarray:
        return self.corners() + self.p // 2

    @property
    def features(self) -> np.ndarray:
        """``(M, C * p^3)`` rows, channel-major then x-fastest within a patch."""
        if self._features is None:
            w = sliding_window_view(self.volume, (self.p,) * 3, axis=(0, 1, 2))  # gx gy gz C wx wy wz
            w = w.transpose(0, 1, 2, 3, 6, 5, 4)
            self._features = np.ascontiguousarray(w).reshape(self.count, self.feature_dim)
        return self._features


def extract_patches(volume: np.ndarray, p: int) -> PatchSet:
    return PatchSet(volume, p)


@dataclass
class NnfResult:
    assignment: np.ndarray
    kind: str = "value_iteration"
    distances: Optional[np.ndarray] = None
    history: list = field(default_factory=list)

    def coverage(self, n_keys: int) -> float:
        return len(np.unique(self.assignment)) / float(n_keys)


def patch_distance(q, k, w_a: float, channels: int = 4) -> float:
    """Weighted squared L2 between feature rows; the first ``p^3`` entries are geometry."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.shape != k.shape:
        raise ValueError("feature rows differ in length")
    n_g = q.shape[-1] // channels
    d = (q - k) ** 2
    return w_a * d[..., n_g:].sum(axis=-1) + (1.0 - w_a) * d[..., :n_g].sum(axis=-1)


def completeness_scores(D: np.ndarray, alpha: float) -> np.ndarray:
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    D = np.asarray(D, dtype=np.float64)
    return D / (alpha + D.min(axis=0, keepdims=True))


def _split(f: np.ndarray, n_g: int):
    g = np.ascontiguousarray(f[:, :n_g], dtype=np.float32)
    a = np.ascontiguousarray(f[:, n_g:], dtype=np.float32)
    return g, a, np.einsum("ij,ij->i", f[:, :n_g], f[:, :n_g]), np.einsum("ij,ij->i", f[:, n_g:], f[:, n_g:])


def _row_keys(f: np.ndarray) -> np.ndarray:
    f = np.ascontiguousarray(f + 0.0)  # folds -0.0 into 0.0
    return f.view(np.dtype((np.void, f.dtype.itemsize * f.shape[1]))).ravel()


def _distinct(f: np.ndarray):
    """Distinct rows in first-occurrence order, their first indices, and each row's distinct index."""
    _, first, inv = np.unique(_row_keys(f), return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return f[first[order]], first[order], rank[inv.reshape(-1)]


def exact_nnf(queries: PatchSet, keys: PatchSet, w_a: float, alpha: float | None,
              budget: int = DEFAULT_BUDGET, prefer: np.ndarray | None = None) -> NnfResult:
    """Argmin over keys of the completeness score (raw distance if ``alpha`` is None).

    Ties go to the smallest key index, or to ``prefer[i]`` when that key attains
    the minimum. Key columns are processed in blocks so that peak memory is one
    ``M_q x block`` slab, but the element budget applies to the full matrix.
    """
    mq, mk = queries.count, keys.count
    if mq * mk > budget:
        raise CapacityError(
            f"exact NNF needs a {mq} x {mk} distance matrix ({mq * mk} entries), over the budget of "
            f"{budget}; use approximate_nnf (PatchMatch) at this scale"
        )
    if queries.channels != keys.channels or queries.p != keys.p:
        raise ValueError("query and key patches differ in layout")
    n_g = queries.p ** 3
    # identical patches give identical rows/columns of the score matrix, so the
    # search runs on distinct patches; keys stay in first-occurrence order so
    # the smallest-index tie-break is unchanged
    qf, _, q_inv = _distinct(queries.features)
    kf, k_first, k_inv = _distinct(keys.features)
    qg, qa, qng, qna = _split(qf, n_g)
    kg, ka, kng, kna = _split(kf, n_g)
    uq, uk = len(qf), len(kf)
    best = np.full(uq, np.inf)
    arg = np.zeros(uq, dtype=np.int64)
    colmin = np.empty(uk)
    block = max(1, min(uk, _BLOCK_ENTRIES // max(uq, 1)))
    use_alpha = alpha is not None
    for s in range(0, uk, block):
        e = min(uk, s + block)
        kernels.score_block(qa @ ka[s:e].T, qg @ kg[s:e].T, qna, kna[s:e], qng, kng[s:e], float(w_a),
                            float(alpha) if use_alpha else 0.0, use_alpha, best, arg, s, colmin[s:e])
    best = best[q_inv]
    arg = k_first[arg[q_inv]]
    rows = np.arange(mq)
    if prefer is not None:
        prefer = np.asarray(prefer, dtype=np.int64)
        dp = kernels.pair_distances(queries.volume, keys.volume, queries.p, w_a, rows, prefer)
        sp = dp / (alpha + colmin[k_inv[prefer]]) if alpha is not None else dp
        keep = sp == best
        arg[keep] = prefer[keep]
    dist = kernels.pair_distances(queries.volume, keys.volume, queries.p, w_a, rows, arg)
    return NnfResult(arg, "value_iteration", dist)


def _jump_steps(radius: int) -> list[int]:
    steps = []
    s = 1
    while s <= radius:
        steps.append(s)
        s *= 2
    return steps[::-1]


def approximate_nnf(queries: PatchSet, keys: PatchSet, w_a: float, prev: NnfResult | np.ndarray | None = None,
                    seed: int = 0, sweeps: int = 4, jump_radius: int = 8, history: bool = False) -> NnfResult:
    """PatchMatch on raw patch distances with jump-flood propagation.

    Each sweep runs propagation from neighbours at axis offsets of +-8, 4, 2, 1
    (a neighbour's key shifted back by the same offset, clamped to the key
    grid) and then random search with radius halving from the key grid's
    largest dimension to 1. Odd sweeps run the rounds in reverse order.
    Candidates are only adopted if they strictly lower the distance, so
    per-query distances never increase. Working memory is O(M_q + M_k).
    """
    rng = np.random.default_rng(seed)
    qd = np.asarray(queries.grid_dims)
    kd = np.asarray(keys.grid_dims)
    mq, mk = queries.count, keys.count
    if prev is None:
        assign = rng.integers(0, mk, mq, dtype=np.int64)
    else:
        assign = np.array(prev.assignment if isinstance(prev, NnfResult) else prev, dtype=np.int64)
        if assign.shape != (mq,) or assign.min() < 0 or assign.max() >= mk:
            raise ValueError("initial assignment does not match the patch sets")
    qvol, kvol, p = queries.volume, keys.volume, queries.p
    dist = kernels.pair_distances(qvol, kvol, p, w_a, np.arange(mq), assign)
    snaps = [dist.copy()] if history else []
    qcoord = np.stack(np.unravel_index(np.arange(mq), tuple(qd)), axis=-1).astype(np.int64)

    def key_coords():
        return np.stack(np.unravel_index(assign, tuple(kd)), axis=-1)

    def encode(kc):
        np.clip(kc, 0, kd - 1, out=kc)
        return np.ravel_multi_index(tuple(kc.T), tuple(kd)).astype(np.int64)

    rounds = []
    for s in _jump_steps(jump_radius):
        for axis in range(3):
            for sign in (1, -1):
                rounds.append(("jump", s, axis, sign))
    radius = int(kd.max())
    while radius >= 1:
        rounds.append(("random", radius, 0, 0))
        radius //= 2

    for sweep in range(sweeps):
        order = rounds if sweep % 2 == 0 else rounds[::-1]
        for kind, s, axis, sign in order:
            if kind == "jump":
                nb = qcoord[:, axis] + sign * s
                ok = (nb >= 0) & (nb < qd[axis])
                if not ok.any():
                    continue
                nbc = qcoord[ok].copy()
                nbc[:, axis] = nb[ok]
                nidx = np.ravel_multi_index(tuple(nbc.T), tuple(qd))
                kc = np.stack(np.unravel_index(assign[nidx], tuple(kd)), axis=-1)
                kc[:, axis] -= sign * s
                cand = assign.copy()
                cand[ok] = encode(kc)
            else:
                kc = key_coords() + rng.integers(-s, s + 1, size=(mq, 3))
                cand = encode(kc)
            kernels.improve(qvol, kvol, p, w_a, cand, assign, dist)
        if history:
            snaps.append(dist.copy())
    return NnfResult(assign, "value_iteration", dist, snaps)


def blend_values(assignment: np.ndarray, keys: PatchSet, out_dims) -> np.ndarray:
    """Average, per output voxel, the assigned key values of every patch covering it."""
    p = keys.p
    out_dims = tuple(int(d) for d in out_dims)
    qd = tuple(d - p + 1 for d in out_dims)
    if int(np.prod(qd)) != len(assignment):
        raise ValueError("assignment length does not match the output patch grid")
    kc = np.stack(np.unravel_index(np.asarray(assignment), keys.grid_dims), axis=-1).reshape(qd + (3,))
    kx, ky, kz = kc[..., 0], kc[..., 1], kc[..., 2]
    acc = np.zeros(out_dims + (keys.channels,))
    cnt = np.zeros(out_dims)
    vol = keys.volume
    for ox in range(p):
        for oy in range(p):
            for oz in range(p):
                acc[ox:ox + qd[0], oy:oy + qd[1], oz:oz + qd[2]] += vol[kx + ox, ky + oy, kz + oz]
                cnt[ox:ox + qd[0], oy:oy + qd[1], oz:oz + qd[2]] += 1.0
    return acc / cnt[..., None]


def finalize_coordinates(assignment: np.ndarray, keys: PatchSet, exemplar_bbox: BBox, out_dims,
                         synth_bbox: BBox | None = None) -> MappingField:
    """Mapping field from patch assignments.

    Patch-centre voxels take the exemplar coordinate of their assigned key
    centre. Border voxels take the assignment of the nearest patch centre,
    shifted by their offset from it.
    """
    p, h = keys.p, keys.p // 2
    out_dims = tuple(int(d) for d in out_dims)
    qd = tuple(d - p + 1 for d in out_dims)
    kc = np.stack(np.unravel_index(np.asarray(assignment), keys.grid_dims), axis=-1).reshape(qd + (3,)) + h
    axes = [np.arange(d) for d in out_dims]
    near = [np.clip(a, h, d - 1 - h) for a, d in zip(axes, out_dims)]
    src = kc[np.ix_(near[0] - h, near[1] - h, near[2] - h)]
    off = np.stack(np.meshgrid(*[a - n for a, n in zip(axes, near)], indexing="ij"), axis=-1)
    idx = src + off
    vs = exemplar_bbox.voxel_size(keys.dims)
    coords = -exemplar_bbox.extents + (idx + 0.5) * vs
    return MappingField(coords, synth_bbox or exemplar_bbox, exemplar_bbox)


def snap_assignment(field: MappingField, key_dims, p: int) -> np.ndarray:
    """Key patch whose centre is nearest to where each query patch centre maps."""
    h = p // 2
    qd = tuple(d - p + 1 for d in field.dims)
    centers = field.coords[h:h + qd[0], h:h + qd[1], h:h + qd[2]]
    kc = np.rint(continuous_index(centers, key_dims, field.exemplar_bbox)).astype(np.int64)
    kc = np.clip(kc, h, np.asarray(key_dims) - 1 - h) - h
    return np.ravel_multi_index(tuple(np.moveaxis(kc, -1, 0)), tuple(d - p + 1 for d in key_dims)).reshape(-1)


@dataclass
class ScaleStats:
    scale: int
    dims: tuple
    method: str
    iterations: int
    seconds: float
    mean_distance: float
    coverage: float


def nnf_scale_pass(query_volume: np.ndarray, key_volume: np.ndarray, config, scale_index: int, seed: int,
                   init_field: MappingField | None = None, exemplar_bbox: BBox | None = None,
                   synth_bbox: BBox | None = None, stats: list | None = None) -> MappingField:
    """One scale of synthesis: alternate matching and blending, then finalise coordinates.

    Exact scales (``scale_index < exact_scales``) run ``T_e`` exact matches with
    completeness scores, the rest ``T_a`` PatchMatch matches. ``init_field``
    supplies the starting correspondence, used as PatchMatch initialisation and
    as the exact-search tie-break.
    """
    t0 = time.perf_counter()
    p = config.p
    qvol = quantize_features(query_volume)
    keys = PatchSet(quantize_features(key_volume), p)
    exemplar_bbox = exemplar_bbox or (init_field.exemplar_bbox if init_field is not None else BBox.for_dims(keys.dims))
    out_dims = qvol.shape[:3]
    exact = scale_index < config.exact_scales
    iters = config.T_e if exact else config.T_a
    current = snap_assignment(init_field, keys.dims, p) if init_field is not None else None
    res = None
    for it in range(iters):
        queries = PatchSet(qvol, p)
        if exact:
            res = exact_nnf(queries, keys, config.w_a, config.alpha, config.exact_budget, prefer=current)
        else:
            res = approximate_nnf(queries, keys, config.w_a, prev=current, seed=seed * 7919 + scale_index * 101 + it,
                                  sweeps=config.pm_sweeps, jump_radius=config.jump_radius)
        current = res.assignment
        if it < iters - 1:
            qvol = quantize_features(blend_values(current, keys, out_dims))
    res.kind = "final_coordinates"
    out = finalize_coordinates(current, keys, exemplar_bbox, out_dims, synth_bbox)
    if stats is not None:
        stats.append(ScaleStats(scale_index, out_dims, "exact" if exact else "patchmatch", iters,
                                time.perf_counter() - t0, float(res.distances.mean()), res.coverage(keys.count)))
    return out
