"""Exemplar feature transform: radiance grid -> (truncated SDF, PCA appearance)."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

from . import kernels
from .grid import BBox, TransformedGrid, VoxelGrid, quantize_features

log = logging.getLogger(__name__)

HIGH_DENSITY = 100.0
PCA_COMPONENTS = 3
# projections of unit vectors about a mean inside the unit ball stay within 2;
# the bound also keeps quantized patch dot products exact in float32
APPEARANCE_MAX_NORM = 2.0


class EmptySurfaceWarning(UserWarning):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("triangle index out of range")

    @property
    def empty(self) -> bool:
        return len(self.triangles) == 0

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def euler_characteristic(self) -> int:
        tri = self.triangles
        edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
        n_edges = len(np.unique(edges, axis=0))
        n_verts = len(np.unique(tri))
        return n_verts - n_edges + len(tri)


def flood_fill_interior(grid: VoxelGrid, high_density: float = HIGH_DENSITY) -> VoxelGrid:
    """Fill empty pockets that are not 6-connected to the grid boundary."""
    empty = grid.density < grid.threshold
    labels, n = ndimage.label(empty, structure=ndimage.generate_binary_structure(3, 1))
    if n == 0:
        return grid
    border = np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ])
    outside = np.zeros(n + 1, dtype=bool)
    outside[np.unique(border)] = True
    interior = empty & ~outside[labels]
    if not interior.any():
        return grid
    density = np.where(interior, high_density, grid.density)
    return VoxelGrid(density, grid.sh, grid.bbox, grid.threshold)


def marching_cubes(values: np.ndarray, iso: float, bbox: BBox | None = None) -> Mesh:
    """Iso-surface of a scalar volume, vertices in world coordinates of ``bbox``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or min(values.shape) < 2:
        raise ValueError(f"marching cubes needs at least 2 samples per axis, got {values.shape}")
    bbox = bbox or BBox.for_dims(values.shape)
    if not (values.min() < iso < values.max()):
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    vs = bbox.voxel_size(values.shape)
    verts, faces, _, _ = measure.marching_cubes(values, level=iso, spacing=tuple(vs), allow_degenerate=False)
    verts = verts - bbox.extents + 0.5 * vs
    mesh = Mesh(verts, faces)
    keep = mesh.triangle_areas() > 1e-12
    tri = mesh.triangles[keep]
    used, inverse = np.unique(tri, return_inverse=True)
    return Mesh(mesh.vertices[used], inverse.reshape(-1, 3))


def truncated_sdf(grid: VoxelGrid, mesh: Mesh, t: float) -> np.ndarray:
    """Clamped signed distance ``clip(sdf / t, -1, 1)`` at every voxel centre.

    ``grid`` should already be flood filled; its occupancy gives the sign.
    """
    if t <= 0:
        raise ValueError("truncation scale must be positive")
    sign = np.where(grid.density >= grid.threshold, -1.0, 1.0)
    if mesh.empty:
        warnings.warn("empty surface mesh; truncated SDF saturates to +/-1", EmptySurfaceWarning, stacklevel=2)
        return sign
    origin = -grid.bbox.extents + 0.5 * grid.voxel_size
    dist = kernels.mesh_distance(
        np.ascontiguousarray(mesh.vertices), np.ascontiguousarray(mesh.triangles), grid.dims, origin, grid.voxel_size, float(t)
    )
    return np.clip(sign * dist / t, -1.0, 1.0)


def normalize_sh(sh: np.ndarray) -> np.ndarray:
    sh = np.asarray(sh, dtype=np.float64)
    norm = np.linalg.norm(sh, axis=-1, keepdims=True)
    safe = np.where(norm < 1e-8, 1.0, norm)
    return np.where(norm < 1e-8, 0.0, sh / safe)


@dataclass
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray  # (k, 27), rows by descending variance
    variance: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.basis.shape[0]


def pca_fit(samples: np.ndarray, k: int = PCA_COMPONENTS) -> PcaModel:
    samples = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if k > samples.shape[1]:
        raise ValueError(f"cannot keep {k} components of {samples.shape[1]}-dim data")
    if len(samples) < k:
        raise ValueError(f"need at least {k} samples to fit {k} components, got {len(samples)}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / len(samples)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    basis = evecs[:, order].T.copy()
    # deterministic sign: largest-magnitude entry of each row is non-negative
    lead = basis[np.arange(k), np.argmax(np.abs(basis), axis=1)]
    basis *= np.where(lead < 0, -1.0, 1.0)[:, None]
    return PcaModel(mean, basis, np.maximum(evals[order], 0.0))


def pca_project(model: PcaModel, sh: np.ndarray) -> np.ndarray:
    return (np.asarray(sh, dtype=np.float64) - model.mean) @ model.basis.T


def pca_unproject(model: PcaModel, coeffs: np.ndarray) -> np.ndarray:
    return np.asarray(coeffs) @ model.basis + model.mean


def fit_grid_pca(grid: VoxelGrid, k: int = PCA_COMPONENTS) -> PcaModel:
    """PCA over the normalised SH vectors of occupied voxels (all voxels if too few)."""
    sh = grid.sh[grid.occupied]
    if len(sh) < k:
        sh = grid.sh.reshape(-1, grid.sh.shape[-1])
    return pca_fit(normalize_sh(sh), k)


def clip_norm(a: np.ndarray, limit: float) -> np.ndarray:
    norm = np.linalg.norm(a, axis=-1, keepdims=True)
    return a * np.minimum(1.0, limit / np.maximum(norm, 1e-300))


def default_truncation(grid, t_multiplier: float) -> float:
    return float(t_multiplier * np.max(grid.voxel_size))


def transform_exemplar(grid: VoxelGrid, t_multiplier: float, pca: PcaModel,
                       high_density: float = HIGH_DENSITY) -> TransformedGrid:
    filled = flood_fill_interior(grid, high_density)
    mesh = marching_cubes(filled.density, grid.threshold, grid.bbox)
    g = truncated_sdf(filled, mesh, default_truncation(grid, t_multiplier))
    a = pca_project(pca, normalize_sh(grid.sh))
    a = np.where(grid.occupied[..., None], clip_norm(a, APPEARANCE_MAX_NORM), 0.0)
    return TransformedGrid(quantize_features(g), quantize_features(a), grid.bbox)
