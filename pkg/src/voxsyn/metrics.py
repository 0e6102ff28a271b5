"""Geometry and visual metrics for sets of generated scenes."""
from __future__ import annotations

from itertools import combinations
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .grid import VoxelGrid
from .xform import Mesh, flood_fill_interior, marching_cubes

QUALITY_POINTS = 102400
DIVERSITY_POINTS = 10240
PATCH_CENTERS = 1000
PATCH_POINTS = 1024


def sample_surface(mesh: Mesh, n: int = QUALITY_POINTS, seed: int = 0) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    if mesh.empty:
        raise ValueError("cannot sample an empty mesh")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    return a + u[:, None] * (b - a) + v[:, None] * (c - a)


def scene_mesh(grid: VoxelGrid) -> Mesh:
    filled = flood_fill_interior(grid)
    return marching_cubes(filled.density, grid.threshold, grid.bbox)


def scene_point_cloud(grid: VoxelGrid, n: int = DIVERSITY_POINTS, seed: int = 0) -> np.ndarray:
    return sample_surface(scene_mesh(grid), n, seed)


def extract_patches_pc(pc: np.ndarray, n_centers: int = PATCH_CENTERS, k: int = PATCH_POINTS,
                       seed: int = 0) -> np.ndarray:
    """``(n_centers, k, 3)`` local patches: k nearest points of random centres, centroid at the origin."""
    pc = np.asarray(pc, dtype=np.float64)
    if len(pc) < k:
        raise ValueError(f"point cloud has {len(pc)} points, fewer than the patch size {k}")
    rng = np.random.default_rng(seed)
    centers = rng.choice(len(pc), size=n_centers, replace=n_centers > len(pc))
    _, idx = cKDTree(pc).query(pc[centers], k=k)
    patches = pc[np.asarray(idx).reshape(n_centers, k)]
    return patches - patches.mean(axis=1, keepdims=True)


def _nn_sq(src: np.ndarray, tree: cKDTree, dst: np.ndarray) -> np.ndarray:
    _, idx = tree.query(src, k=1)
    diff = src - dst[idx]
    return np.einsum("ij,ij->i", diff, diff)


def chamfer(a: np.ndarray, b: np.ndarray, tree_a: cKDTree | None = None, tree_b: cKDTree | None = None) -> float:
    """Mean squared nearest-neighbour distance A->B plus B->A."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer needs non-empty point clouds")
    tree_a = tree_a or cKDTree(a)
    tree_b = tree_b or cKDTree(b)
    return float(_nn_sq(a, tree_b, b).mean() + _nn_sq(b, tree_a, a).mean())


def mmd_quality(gen_patches: Sequence[np.ndarray], ex_patches: Sequence[np.ndarray]) -> float:
    """Mean over generated patches of the smallest Chamfer to any exemplar patch, times 100."""
    if len(gen_patches) == 0 or len(ex_patches) == 0:
        raise ValueError("patch sets must be non-empty")
    ex_trees = [cKDTree(np.asarray(e).reshape(-1, 3)) for e in ex_patches]
    best = []
    for g in gen_patches:
        g = np.asarray(g, dtype=np.float64).reshape(-1, 3)
        tg = cKDTree(g)
        best.append(min(chamfer(g, e, tg, te) for e, te in zip(ex_patches, ex_trees)))
    return 100.0 * float(np.mean(best))


def pairwise_chamfer(scene_pcs: Sequence[np.ndarray]) -> np.ndarray:
    trees = [cKDTree(np.asarray(p).reshape(-1, 3)) for p in scene_pcs]
    n = len(scene_pcs)
    out = np.zeros((n, n))
    for i, j in combinations(range(n), 2):
        out[i, j] = out[j, i] = chamfer(scene_pcs[i], scene_pcs[j], trees[i], trees[j])
    return out


def tmd_diversity(scene_pcs: Sequence[np.ndarray]) -> float:
    """Sum of Chamfer distances over unordered scene pairs."""
    if len(scene_pcs) < 2:
        raise ValueError("diversity needs at least two scenes")
    return float(np.triu(pairwise_chamfer(scene_pcs), 1).sum())


def intensity(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64).mean(axis=-1)


def visual_diversity(image_stacks: Sequence[Sequence[np.ndarray]], exemplar_images: Sequence[np.ndarray]) -> float:
    """Per view: mean over pixels of the across-sample intensity std, over the exemplar render's std."""
    if len(image_stacks) != len(exemplar_images) or not image_stacks:
        raise ValueError("need one image stack per exemplar view")
    vals = []
    for stack, ex in zip(image_stacks, exemplar_images):
        if len(stack) < 2:
            raise ValueError("each view needs at least two generated renders")
        inten = np.stack([intensity(im) for im in stack])
        ref = intensity(ex)
        if inten.shape[1:] != ref.shape:
            raise ValueError("generated and exemplar renders differ in resolution")
        ref_std = float(ref.std())
        if ref_std == 0:
            raise ValueError("exemplar render has zero intensity variation")
        vals.append(float(inten.std(axis=0).mean()) / ref_std)
    return float(np.mean(vals))
