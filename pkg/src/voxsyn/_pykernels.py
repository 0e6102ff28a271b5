"""Pure numpy versions of the compiled kernels (same signatures, same results).

Patch distances are sums of squares of values on a dyadic grid, so both
backends produce identical bits despite different summation orders.
"""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 16
_PAIR_CHUNK = 1 << 21


def _decode(idx, vol_shape, p):
    gy = vol_shape[1] - p + 1
    gz = vol_shape[2] - p + 1
    return idx // (gy * gz), (idx // gz) % gy, idx % gz


def pair_distances(qvol, kvol, p, w_a, qidx, kidx):
    qidx = np.asarray(qidx, dtype=np.int64)
    kidx = np.asarray(kidx, dtype=np.int64)
    w_g = 1.0 - w_a
    out = np.empty(qidx.shape[0], dtype=np.float64)
    for s in range(0, qidx.shape[0], _CHUNK):
        ux, uy, uz = _decode(qidx[s:s + _CHUNK], qvol.shape, p)
        vx, vy, vz = _decode(kidx[s:s + _CHUNK], kvol.shape, p)
        da = np.zeros(ux.shape[0])
        dg = np.zeros(ux.shape[0])
        for ox in range(p):
            for oy in range(p):
                for oz in range(p):
                    diff = qvol[ux + ox, uy + oy, uz + oz] - kvol[vx + ox, vy + oy, vz + oz]
                    diff *= diff
                    dg += diff[:, 0]
                    da += diff[:, 1:].sum(axis=1)
        out[s:s + _CHUNK] = w_a * da + w_g * dg
    return out


def improve(qvol, kvol, p, w_a, cand, assign, dist):
    todo = np.flatnonzero(cand != assign)
    if todo.size == 0:
        return 0
    d = pair_distances(qvol, kvol, p, w_a, todo, cand[todo])
    better = d < dist[todo]
    sel = todo[better]
    assign[sel] = cand[sel]
    dist[sel] = d[better]
    return int(sel.size)


def _dot(u, v):
    return u[:, 0] * v[:, 0] + u[:, 1] * v[:, 1] + u[:, 2] * v[:, 2]


def point_triangle_dist2(pts, a, b, c):
    ab = b - a
    ac = c - a
    ap = pts - a
    d1 = _dot(ab, ap)
    d2 = _dot(ac, ap)
    bp = pts - b
    d3 = _dot(ab, bp)
    d4 = _dot(ac, bp)
    cp = pts - c
    d5 = _dot(ab, cp)
    d6 = _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        v_ab = (d1 / (d1 - d3))[:, None]
        w_ac = (d2 / (d2 - d6))[:, None]
        w_bc = ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None]
        denom = 1.0 / (va + vb + vc)
        v_in = (vb * denom)[:, None]
        w_in = (vc * denom)[:, None]

    conds = [
        (d1 <= 0.0) & (d2 <= 0.0),
        (d3 >= 0.0) & (d4 <= d3),
        (d6 >= 0.0) & (d5 <= d6),
        (vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
        (vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0),
        (va <= 0.0) & ((d4 - d3) >= 0.0) & ((d5 - d6) >= 0.0),
    ]
    choices = [a, b, c, a + v_ab * ab, a + w_ac * ac, b + w_bc * (c - b)]
    q = np.select([m[:, None] for m in conds], choices, default=a + ab * v_in + ac * w_in)
    r = pts - q
    # same association as the compiled version: (x*x + y*y) + z*z
    return r[:, 0] * r[:, 0] + r[:, 1] * r[:, 1] + r[:, 2] * r[:, 2]


def mesh_distance(verts, faces, dims, origin, voxel_size, max_dist):
    verts = np.asarray(verts, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    dims = tuple(int(d) for d in dims)
    origin = np.asarray(origin, dtype=np.float64)
    vs = np.asarray(voxel_size, dtype=np.float64)
    cap = max_dist * max_dist
    d2 = np.full(dims, cap)
    if faces.shape[0] == 0:
        return np.where(d2 >= cap, max_dist, np.sqrt(d2))
    tri = verts[faces]
    lo = np.floor((tri.min(axis=1) - max_dist - origin) / vs).astype(np.int64)
    hi = np.ceil((tri.max(axis=1) + max_dist - origin) / vs).astype(np.int64)
    lo = np.clip(lo, 0, None)
    hi = np.minimum(hi, np.asarray(dims) - 1)
    ext = np.clip(hi - lo + 1, 0, None)
    counts = ext.prod(axis=1)
    flat = d2.reshape(-1)
    start = 0
    while start < faces.shape[0]:
        stop = start + 1
        total = counts[start]
        while stop < faces.shape[0] and total + counts[stop] <= _PAIR_CHUNK:
            total += counts[stop]
            stop += 1
        sel = np.arange(start, stop)
        rep = np.repeat(sel, counts[sel])
        first = np.repeat(np.cumsum(counts[sel]) - counts[sel], counts[sel])
        local = np.arange(rep.size) - first
        e = ext[rep]
        k = local % e[:, 2]
        j = (local // e[:, 2]) % e[:, 1]
        i = local // (e[:, 1] * e[:, 2])
        i += lo[rep, 0]
        j += lo[rep, 1]
        k += lo[rep, 2]
        pts = np.stack([origin[0] + i * vs[0], origin[1] + j * vs[1], origin[2] + k * vs[2]], axis=1)
        t = tri[rep]
        vals = point_triangle_dist2(pts, t[:, 0], t[:, 1], t[:, 2])
        lin = (i * dims[1] + j) * dims[2] + k
        np.minimum.at(flat, lin, vals)
        start = stop
    return np.where(d2 >= cap, max_dist, np.sqrt(d2))


def score_block(Ga, Gg, qna, kna, qng, kng, w_a, alpha, use_alpha, best, arg, offset, colmin):
    D = Ga.astype(np.float64)
    D *= -2.0
    D += qna[:, None]
    D += kna[None, :]
    D *= w_a
    Dg = Gg.astype(np.float64)
    Dg *= -2.0
    Dg += qng[:, None]
    Dg += kng[None, :]
    Dg *= 1.0 - w_a
    D += Dg
    del Dg
    colmin[:] = D.min(axis=0)
    if use_alpha:
        D /= alpha + colmin
    j = D.argmin(axis=1)
    v = D[np.arange(D.shape[0]), j]
    upd = v < best
    best[upd] = v[upd]
    arg[upd] = j[upd] + offset
