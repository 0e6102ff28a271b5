"""Voxel grids, mapping fields and the sampling operations they share.

Coordinate convention: a grid with dims ``(Dx, Dy, Dz)`` spans an axis-aligned
box centred at the origin with half extents ``h``. Voxel ``i`` along an axis has
its centre at ``-h + (i + 0.5) * (2h / D)``. Arrays are indexed ``[x, y, z]``
with channels last.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

DENSITY_THRESHOLD = 1e-2
SH_COEFFS = 27

# Matching features live on a dyadic grid. With |g| <= 1 and |a| <= 2 every
# patch distance and Gram entry is then exactly representable in float32/64,
# whatever the summation order, so BLAS, compiled and numpy paths agree bit for
# bit and tied patches tie exactly.
FEATURE_STEP = 1.0 / 128.0

# continuous indices this close to an integer are snapped, so that sampling at a
# voxel centre returns the stored value bit for bit
_SNAP_EPS = 1e-9


def quantize_features(x) -> np.ndarray:
    return np.rint(np.asarray(x, dtype=np.float64) / FEATURE_STEP) * FEATURE_STEP


@dataclass(frozen=True)
class BBox:
    half_extents: tuple[float, float, float]

    def __post_init__(self):
        h = tuple(float(v) for v in self.half_extents)
        if len(h) != 3 or min(h) <= 0:
            raise ValueError(f"half extents must be 3 positive values, got {self.half_extents}")
        object.__setattr__(self, "half_extents", h)

    @classmethod
    def for_dims(cls, dims: Sequence[int]) -> "BBox":
        """Box whose largest half extent is 1 and whose aspect matches ``dims``."""
        m = float(max(dims))
        return cls(tuple(d / m for d in dims))

    @property
    def extents(self) -> np.ndarray:
        return np.asarray(self.half_extents)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return np.all(np.abs(x) <= self.extents, axis=-1)

    def clamp(self, x) -> np.ndarray:
        h = self.extents
        return np.clip(x, -h, h)

    def voxel_size(self, dims) -> np.ndarray:
        return 2.0 * self.extents / np.asarray(dims, dtype=np.float64)

    def close_to(self, other: "BBox", tol: float = 1e-6) -> bool:
        return bool(np.allclose(self.extents, other.extents, rtol=0, atol=tol))


def _dims3(dims) -> tuple[int, int, int]:
    d = tuple(int(v) for v in dims)
    if len(d) != 3 or min(d) < 1:
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    return d


def voxel_center(grid_dims, bbox: BBox, index) -> np.ndarray:
    dims = np.asarray(_dims3(grid_dims))
    idx = np.asarray(index)
    if np.any(idx < 0) or np.any(idx >= dims):
        raise IndexError(f"voxel index {tuple(np.atleast_1d(idx))} outside dims {tuple(dims)}")
    return -bbox.extents + (idx + 0.5) * bbox.voxel_size(dims)


def voxel_centers(grid_dims, bbox: BBox) -> np.ndarray:
    """World coordinates of every voxel centre, shape ``(Dx, Dy, Dz, 3)``."""
    dims = _dims3(grid_dims)
    vs = bbox.voxel_size(dims)
    axes = [-bbox.extents[a] + (np.arange(dims[a]) + 0.5) * vs[a] for a in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def continuous_index(x, dims, bbox: BBox) -> np.ndarray:
    """Fractional voxel index of world point(s) ``x`` (voxel centres are integers)."""
    f = (np.asarray(x, dtype=np.float64) + bbox.extents) / bbox.voxel_size(dims) - 0.5
    r = np.rint(f)
    return np.where(np.abs(f - r) < _SNAP_EPS, r, f)


def trilinear(values: np.ndarray, bbox: BBox, x) -> np.ndarray:
    """Trilinearly interpolate a channels-last volume at world points ``x``.

    Points beyond the outermost voxel centres are clamped to the edge.
    """
    if values.ndim == 3:
        return trilinear(values[..., None], bbox, x)[..., 0]
    dims = values.shape[:3]
    x = np.asarray(x, dtype=np.float64)
    lead = x.shape[:-1]
    f = continuous_index(x.reshape(-1, 3), dims, bbox)
    out = np.zeros((f.shape[0], values.shape[3]), dtype=np.float64)
    i0 = np.empty(f.shape, dtype=np.int64)
    w1 = np.empty(f.shape)
    for a in range(3):
        d = dims[a]
        fa = np.clip(f[:, a], 0.0, d - 1)
        base = np.clip(np.floor(fa), 0, max(d - 2, 0)).astype(np.int64)
        i0[:, a] = base
        w1[:, a] = fa - base if d > 1 else 0.0
    i1 = np.minimum(i0 + 1, np.asarray(dims) - 1)
    w0 = 1.0 - w1
    for cx in (0, 1):
        ix = i1[:, 0] if cx else i0[:, 0]
        wx = w1[:, 0] if cx else w0[:, 0]
        for cy in (0, 1):
            iy = i1[:, 1] if cy else i0[:, 1]
            wy = w1[:, 1] if cy else w0[:, 1]
            for cz in (0, 1):
                iz = i1[:, 2] if cz else i0[:, 2]
                wz = w1[:, 2] if cz else w0[:, 2]
                out += (wx * wy * wz)[:, None] * values[ix, iy, iz]
    return out.reshape(lead + (values.shape[3],))


@dataclass
class VoxelGrid:
    """Dense radiance grid: density plus 27 degree-2 SH coefficients per voxel.

    SH coefficients are channel-major: ``sh[..., 9 * c + k]`` is basis function
    ``k`` of colour channel ``c``. Voxels with density below the occupancy
    threshold are unoccupied and have their density zeroed.
    """

    density: np.ndarray
    sh: np.ndarray
    bbox: BBox
    threshold: float = DENSITY_THRESHOLD
    occupied: np.ndarray = field(init=False)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=np.float64)
        self.sh = np.asarray(self.sh, dtype=np.float64)
        if self.density.ndim != 3:
            raise ValueError("density must be a 3D array")
        _dims3(self.density.shape)
        if self.sh.shape != self.density.shape + (SH_COEFFS,):
            raise ValueError(f"sh must have shape {self.density.shape + (SH_COEFFS,)}, got {self.sh.shape}")
        self.occupied = self.density >= self.threshold
        self.density = np.where(self.occupied, self.density, 0.0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.density.shape

    @property
    def voxel_size(self) -> np.ndarray:
        return self.bbox.voxel_size(self.dims)

    def channels(self) -> np.ndarray:
        """Density and SH stacked channels-last, shape ``(X, Y, Z, 28)``."""
        return np.concatenate([self.density[..., None], self.sh], axis=-1)

    @classmethod
    def from_channels(cls, values: np.ndarray, bbox: BBox, threshold: float = DENSITY_THRESHOLD) -> "VoxelGrid":
        return cls(values[..., 0], values[..., 1:], bbox, threshold)


@dataclass
class TransformedGrid:
    """Matching features: truncated SDF ``g`` and PCA appearance ``a``."""

    g: np.ndarray
    a: np.ndarray
    bbox: BBox

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.a.shape[:3] != self.g.shape:
            raise ValueError("g and a must share dims")
        if np.any(self.g < -1.0) or np.any(self.g > 1.0):
            raise ValueError("truncated SDF values must lie in [-1, 1]")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.g.shape

    @property
    def voxel_size(self) -> np.ndarray:
        return self.bbox.voxel_size(self.dims)

    def channels(self) -> np.ndarray:
        """Geometry first, then appearance, shape ``(X, Y, Z, 1 + k)``."""
        return np.concatenate([self.g[..., None], self.a], axis=-1)

    @classmethod
    def from_channels(cls, values: np.ndarray, bbox: BBox) -> "TransformedGrid":
        return cls(np.clip(values[..., 0], -1.0, 1.0), values[..., 1:], bbox)


Grid = Union[VoxelGrid, TransformedGrid]


@dataclass
class MappingField:
    """Synthesised scene: per voxel, a continuous coordinate in the exemplar box.

    ``bbox`` is the synthesis-space box, ``exemplar_bbox`` the box the stored
    coordinates live in. Coordinates are clamped into ``exemplar_bbox`` on
    construction.
    """

    coords: np.ndarray
    bbox: BBox
    exemplar_bbox: BBox

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 4 or c.shape[3] != 3:
            raise ValueError(f"coords must have shape (X, Y, Z, 3), got {c.shape}")
        _dims3(c.shape[:3])
        self.coords = self.exemplar_bbox.clamp(c)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.coords.shape[:3]

    @property
    def voxel_size(self) -> np.ndarray:
        return self.bbox.voxel_size(self.dims)

    @classmethod
    def identity(cls, dims, bbox: BBox, exemplar_bbox: BBox | None = None) -> "MappingField":
        """Identity mapping; a differently sized synthesis box is stretched onto the exemplar box."""
        exemplar_bbox = exemplar_bbox or bbox
        centers = voxel_centers(dims, bbox)
        if not bbox.close_to(exemplar_bbox, tol=0.0):
            centers = centers * (exemplar_bbox.extents / bbox.extents)
        return cls(centers, bbox, exemplar_bbox)


def trilinear_sample(grid: Grid, x) -> np.ndarray:
    return trilinear(grid.channels(), grid.bbox, x)


def nearest_index(x, dims, bbox: BBox) -> np.ndarray:
    f = continuous_index(x, dims, bbox)
    return np.clip(np.rint(f), 0, np.asarray(dims) - 1).astype(np.int64)


def map_query(field: MappingField, x) -> np.ndarray:
    """``S(x) = S(N(x)) + delta`` with ``delta`` the offset to the nearest voxel centre."""
    x = np.asarray(x, dtype=np.float64)
    n = nearest_index(x, field.dims, field.bbox)
    center = -field.bbox.extents + (n + 0.5) * field.voxel_size
    base = field.coords[n[..., 0], n[..., 1], n[..., 2]]
    return field.exemplar_bbox.clamp(base + (x - center))


def upsample_mapping(field: MappingField, target_dims) -> MappingField:
    target = _dims3(target_dims)
    if any(t < s for t, s in zip(target, field.dims)):
        raise ValueError(f"target dims {target} smaller than source dims {field.dims}")
    fine = voxel_centers(target, field.bbox)
    return MappingField(map_query(field, fine), field.bbox, field.exemplar_bbox)


def resolve_channels(field: MappingField, values: np.ndarray, bbox: BBox) -> np.ndarray:
    return trilinear(values, bbox, field.coords)


def resolve_features(field: MappingField, exemplar: Grid) -> Grid:
    """Read exemplar features through the mapping, at the field's dims."""
    vals = trilinear(exemplar.channels(), exemplar.bbox, field.coords)
    if isinstance(exemplar, VoxelGrid):
        return VoxelGrid.from_channels(vals, field.bbox, exemplar.threshold)
    return TransformedGrid.from_channels(vals, field.bbox)
