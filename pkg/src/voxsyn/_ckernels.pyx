# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics mirror ``_pykernels`` exactly."""
import numpy as np


cdef inline double _patch_dist(const double[:, :, :, ::1] qvol, const double[:, :, :, ::1] kvol,
                               Py_ssize_t ux, Py_ssize_t uy, Py_ssize_t uz,
                               Py_ssize_t vx, Py_ssize_t vy, Py_ssize_t vz,
                               int p, double w_a, double w_g, double bound) noexcept nogil:
    """Patch distance; returns early (a value > bound) once the partial sum exceeds bound."""
    cdef Py_ssize_t ox, oy, oz, c
    cdef Py_ssize_t nch = qvol.shape[3]
    cdef double da = 0.0, dg = 0.0, diff, part
    for ox in range(p):
        for oy in range(p):
            for oz in range(p):
                diff = qvol[ux + ox, uy + oy, uz + oz, 0] - kvol[vx + ox, vy + oy, vz + oz, 0]
                dg = dg + diff * diff
                for c in range(1, nch):
                    diff = qvol[ux + ox, uy + oy, uz + oz, c] - kvol[vx + ox, vy + oy, vz + oz, c]
                    da = da + diff * diff
        part = w_a * da + w_g * dg
        if part > bound:
            return part
    return w_a * da + w_g * dg


def pair_distances(const double[:, :, :, ::1] qvol, const double[:, :, :, ::1] kvol, int p, double w_a,
                   const long long[::1] qidx, const long long[::1] kidx):
    cdef Py_ssize_t n = qidx.shape[0]
    cdef Py_ssize_t qgy = qvol.shape[1] - p + 1, qgz = qvol.shape[2] - p + 1
    cdef Py_ssize_t kgy = kvol.shape[1] - p + 1, kgz = kvol.shape[2] - p + 1
    cdef double w_g = 1.0 - w_a
    cdef double inf = float("inf")
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] d = out
    cdef Py_ssize_t t, i, j
    with nogil:
        for t in range(n):
            i = qidx[t]
            j = kidx[t]
            d[t] = _patch_dist(qvol, kvol, i // (qgy * qgz), (i // qgz) % qgy, i % qgz,
                               j // (kgy * kgz), (j // kgz) % kgy, j % kgz, p, w_a, w_g, inf)
    return out


def improve(const double[:, :, :, ::1] qvol, const double[:, :, :, ::1] kvol, int p, double w_a,
            const long long[::1] cand, long long[::1] assign, double[::1] dist):
    """Adopt ``cand[i]`` for query ``i`` where it strictly lowers ``dist[i]``."""
    cdef Py_ssize_t n = cand.shape[0]
    cdef Py_ssize_t qgy = qvol.shape[1] - p + 1, qgz = qvol.shape[2] - p + 1
    cdef Py_ssize_t kgy = kvol.shape[1] - p + 1, kgz = kvol.shape[2] - p + 1
    cdef double w_g = 1.0 - w_a
    cdef Py_ssize_t i, j, changed = 0
    cdef double d
    with nogil:
        for i in range(n):
            j = cand[i]
            if j == assign[i]:
                continue
            d = _patch_dist(qvol, kvol, i // (qgy * qgz), (i // qgz) % qgy, i % qgz,
                            j // (kgy * kgz), (j // kgz) % kgy, j % kgz, p, w_a, w_g, dist[i])
            if d < dist[i]:
                dist[i] = d
                assign[i] = j
                changed += 1
    return changed


cdef inline double _dot(double ax, double ay, double az, double bx, double by, double bz) noexcept nogil:
    return ax * bx + ay * by + az * bz


cdef inline double _point_tri_dist2(double px, double py, double pz,
                                    double ax, double ay, double az,
                                    double bx, double by, double bz,
                                    double cx, double cy, double cz) noexcept nogil:
    # closest point on triangle by Voronoi-region classification
    cdef double abx = bx - ax, aby = by - ay, abz = bz - az
    cdef double acx = cx - ax, acy = cy - ay, acz = cz - az
    cdef double apx = px - ax, apy = py - ay, apz = pz - az
    cdef double d1 = _dot(abx, aby, abz, apx, apy, apz)
    cdef double d2 = _dot(acx, acy, acz, apx, apy, apz)
    cdef double qx, qy, qz, v, w, denom
    cdef double bpx, bpy, bpz, cpx, cpy, cpz, d3, d4, d5, d6, va, vb, vc
    if d1 <= 0.0 and d2 <= 0.0:
        qx = ax; qy = ay; qz = az
    else:
        bpx = px - bx; bpy = py - by; bpz = pz - bz
        d3 = _dot(abx, aby, abz, bpx, bpy, bpz)
        d4 = _dot(acx, acy, acz, bpx, bpy, bpz)
        cpx = px - cx; cpy = py - cy; cpz = pz - cz
        d5 = _dot(abx, aby, abz, cpx, cpy, cpz)
        d6 = _dot(acx, acy, acz, cpx, cpy, cpz)
        vc = d1 * d4 - d3 * d2
        vb = d5 * d2 - d1 * d6
        va = d3 * d6 - d5 * d4
        if d3 >= 0.0 and d4 <= d3:
            qx = bx; qy = by; qz = bz
        elif d6 >= 0.0 and d5 <= d6:
            qx = cx; qy = cy; qz = cz
        elif vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
            v = d1 / (d1 - d3)
            qx = ax + v * abx; qy = ay + v * aby; qz = az + v * abz
        elif vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
            w = d2 / (d2 - d6)
            qx = ax + w * acx; qy = ay + w * acy; qz = az + w * acz
        elif va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
            w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
            qx = bx + w * (cx - bx); qy = by + w * (cy - by); qz = bz + w * (cz - bz)
        else:
            denom = 1.0 / (va + vb + vc)
            v = vb * denom
            w = vc * denom
            qx = ax + abx * v + acx * w
            qy = ay + aby * v + acy * w
            qz = az + abz * v + acz * w
    qx = px - qx; qy = py - qy; qz = pz - qz
    return qx * qx + qy * qy + qz * qz


def point_triangle_dist2(const double[:, ::1] pts, const double[:, ::1] a, const double[:, ::1] b,
                         const double[:, ::1] c):
    """Row-wise squared distance from ``pts[i]`` to triangle ``(a[i], b[i], c[i])``."""
    cdef Py_ssize_t n = pts.shape[0], i
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _point_tri_dist2(pts[i, 0], pts[i, 1], pts[i, 2], a[i, 0], a[i, 1], a[i, 2],
                                    b[i, 0], b[i, 1], b[i, 2], c[i, 0], c[i, 1], c[i, 2])
    return out


cdef inline Py_ssize_t _lo(double x, double o, double s) noexcept nogil:
    cdef double f = (x - o) / s
    cdef Py_ssize_t i = <Py_ssize_t>f
    if f < i:
        i -= 1
    if i < 0:
        i = 0
    return i


cdef inline Py_ssize_t _hi(double x, double o, double s, Py_ssize_t n) noexcept nogil:
    cdef double f = (x - o) / s
    cdef Py_ssize_t i = <Py_ssize_t>f
    if f > i:
        i += 1
    if i > n - 1:
        i = n - 1
    return i


def mesh_distance(const double[:, ::1] verts, const long long[:, ::1] faces, dims,
                  origin, voxel_size, double max_dist):
    """Unsigned distance from voxel centres to the mesh, capped at ``max_dist``.

    Only voxels inside each triangle's bounding box grown by ``max_dist`` are
    visited, so every distance below the cap is exact.
    """
    cdef Py_ssize_t dx = dims[0], dy = dims[1], dz = dims[2]
    cdef double ox = origin[0], oy = origin[1], oz = origin[2]
    cdef double sx = voxel_size[0], sy = voxel_size[1], sz = voxel_size[2]
    out = np.full((dx, dy, dz), max_dist * max_dist, dtype=np.float64)
    cdef double[:, :, ::1] d2 = out
    cdef Py_ssize_t nf = faces.shape[0], f, i, j, k
    cdef Py_ssize_t i0, i1, j0, j1, k0, k1
    cdef double ax, ay, az, bx, by, bz, cx, cy, cz, px, py, pz, v
    with nogil:
        for f in range(nf):
            ax = verts[faces[f, 0], 0]; ay = verts[faces[f, 0], 1]; az = verts[faces[f, 0], 2]
            bx = verts[faces[f, 1], 0]; by = verts[faces[f, 1], 1]; bz = verts[faces[f, 1], 2]
            cx = verts[faces[f, 2], 0]; cy = verts[faces[f, 2], 1]; cz = verts[faces[f, 2], 2]
            i0 = _lo(min(ax, min(bx, cx)) - max_dist, ox, sx)
            i1 = _hi(max(ax, max(bx, cx)) + max_dist, ox, sx, dx)
            j0 = _lo(min(ay, min(by, cy)) - max_dist, oy, sy)
            j1 = _hi(max(ay, max(by, cy)) + max_dist, oy, sy, dy)
            k0 = _lo(min(az, min(bz, cz)) - max_dist, oz, sz)
            k1 = _hi(max(az, max(bz, cz)) + max_dist, oz, sz, dz)
            for i in range(i0, i1 + 1):
                px = ox + i * sx
                for j in range(j0, j1 + 1):
                    py = oy + j * sy
                    for k in range(k0, k1 + 1):
                        pz = oz + k * sz
                        v = _point_tri_dist2(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz)
                        if v < d2[i, j, k]:
                            d2[i, j, k] = v
    cap = max_dist * max_dist
    return np.where(out >= cap, max_dist, np.sqrt(out))


def score_block(const float[:, ::1] Ga, const float[:, ::1] Gg, const double[::1] qna, const double[::1] kna,
                const double[::1] qng, const double[::1] kng, double w_a, double alpha, bint use_alpha,
                double[::1] best, long long[::1] arg, Py_ssize_t offset, double[::1] colmin):
    """Fold one key block of Gram matrices into the running row argmin.

    Distances are ``w_a * |q_a - k_a|^2 + (1 - w_a) * |q_g - k_g|^2`` built from
    the Gram entries; with ``use_alpha`` each column is divided by
    ``alpha + column minimum``. Strict comparison keeps the smallest index.
    """
    cdef Py_ssize_t m = Ga.shape[0], c = Ga.shape[1], i, j
    cdef double w_g = 1.0 - w_a, d, s
    cdef double inf = float("inf")
    with nogil:
        for j in range(c):
            colmin[j] = inf
        for i in range(m):
            for j in range(c):
                d = w_a * (-2.0 * Ga[i, j] + qna[i] + kna[j]) + w_g * (-2.0 * Gg[i, j] + qng[i] + kng[j])
                if d < colmin[j]:
                    colmin[j] = d
        for i in range(m):
            for j in range(c):
                d = w_a * (-2.0 * Ga[i, j] + qna[i] + kna[j]) + w_g * (-2.0 * Gg[i, j] + qng[i] + kng[j])
                s = d / (alpha + colmin[j]) if use_alpha else d
                if s < best[i]:
                    best[i] = s
                    arg[i] = j + offset
