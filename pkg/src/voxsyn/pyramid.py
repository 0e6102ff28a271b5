"""Synthesis configuration, exemplar pyramids and procedural exemplars."""
from __future__ import annotations

import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import DENSITY_THRESHOLD, SH_COEFFS, BBox, TransformedGrid, VoxelGrid, trilinear, voxel_centers
from .xform import HIGH_DENSITY, PcaModel, fit_grid_pca, transform_exemplar

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (16, 21, 28, 38, 51, 68, 91, 121)
DEFAULT_R = 4.0 / 3.0
DEFAULT_N = 7
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def round_half_up(x) -> np.ndarray:
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


@dataclass
class SynthesisConfig:
    r: float = DEFAULT_R
    N: int = DEFAULT_N
    p: int = 5
    w_a: float = 0.5
    alpha: float = 0.01
    sigma: float = 0.5
    t_multiplier: float = 3.0
    T_e: int = 10
    T_a: int = 2
    exact_scales: int = 5
    max_dim_schedule: Optional[list] = None
    seed: int = 0
    pca_components: int = 3
    pm_sweeps: int = 4
    jump_radius: int = 8
    exact_budget: int = 2 ** 31
    density_threshold: float = DENSITY_THRESHOLD
    high_density: float = HIGH_DENSITY
    high_res_max_dim: int = 512
    # first pyramid level the synthesis loop visits (application presets)
    start_scale: int = 0

    def __post_init__(self):
        if not self.r > 1:
            raise ValueError(f"r must exceed 1, got {self.r}")
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if self.p < 3 or self.p % 2 == 0:
            raise ValueError(f"patch size must be odd and >= 3, got {self.p}")
        if not 0.0 <= self.w_a <= 1.0:
            raise ValueError(f"w_a must lie in [0, 1], got {self.w_a}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.t_multiplier <= 0:
            raise ValueError("t_multiplier must be positive")
        if self.T_e < 1 or self.T_a < 1:
            raise ValueError("T_e and T_a must be at least 1")
        if self.pm_sweeps < 1:
            raise ValueError("pm_sweeps must be at least 1")
        if not 0 <= self.start_scale <= self.N:
            raise ValueError(f"start_scale must lie in [0, {self.N}]")
        if self.max_dim_schedule is not None:
            sched = [int(v) for v in self.max_dim_schedule]
            if len(sched) != self.N + 1:
                raise ValueError(f"schedule has {len(sched)} entries, expected N + 1 = {self.N + 1}")
            _check_increasing(sched)
            self.max_dim_schedule = sched

    @property
    def n_scales(self) -> int:
        return self.N + 1

    def replace(self, **kw) -> "SynthesisConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["max_dim_schedule"] = max_dim_schedule(self)
        return d


def _check_increasing(sched: Sequence[int]) -> None:
    if any(b <= a for a, b in zip(sched, sched[1:])) or min(sched) < 1:
        raise ValueError(f"max-dim schedule must be positive and strictly increasing, got {list(sched)}")


def geometric_schedule(finest: int, r: float, N: int) -> list[int]:
    sched = [int(v) for v in round_half_up([finest * r ** -(N - n) for n in range(N + 1)])]
    _check_increasing(sched)
    return sched


def max_dim_schedule(config: SynthesisConfig, finest: int | None = None) -> list[int]:
    """Max-dimension resolution per level, coarse to fine."""
    if config.max_dim_schedule is not None:
        return list(config.max_dim_schedule)
    if finest is None and math.isclose(config.r, DEFAULT_R) and config.N == DEFAULT_N:
        return list(DEFAULT_SCHEDULE)
    return geometric_schedule(finest or DEFAULT_SCHEDULE[-1], config.r, config.N)


def dims_for_max(max_dim: int, aspect_dims: Sequence[int], min_dim: int = 1) -> tuple[int, int, int]:
    m = max(aspect_dims)
    out = np.maximum(round_half_up(np.asarray(aspect_dims, dtype=np.float64) * max_dim / m), min_dim)
    return tuple(int(v) for v in out)


def scale_schedule(config: SynthesisConfig, exemplar_dims: Sequence[int]) -> list[tuple[int, int, int]]:
    """Per-level dims: max-dim schedule with the other axes following the exemplar aspect."""
    return [dims_for_max(m, exemplar_dims) for m in max_dim_schedule(config)]


def downsample(grid: VoxelGrid, dims) -> VoxelGrid:
    """Trilinear resampling of density and raw SH to ``dims`` within the same box."""
    if tuple(dims) == tuple(grid.dims):
        return grid
    vals = trilinear(grid.channels(), grid.bbox, voxel_centers(dims, grid.bbox))
    return VoxelGrid.from_channels(vals, grid.bbox, grid.threshold)


@dataclass
class PyramidLevel:
    grid: VoxelGrid
    features: TransformedGrid
    pca: PcaModel

    @property
    def dims(self):
        return self.grid.dims


@dataclass
class ExemplarPyramid:
    levels: list
    high_res: Optional[VoxelGrid] = None

    def __post_init__(self):
        maxes = [max(lv.dims) for lv in self.levels]
        if any(b <= a for a, b in zip(maxes, maxes[1:])):
            raise ValueError(f"level resolutions must strictly increase, got {maxes}")
        for lv in self.levels[1:]:
            if not lv.grid.bbox.close_to(self.bbox):
                raise ValueError("pyramid levels must share one bounding box")

    @property
    def bbox(self) -> BBox:
        return self.levels[0].grid.bbox

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> PyramidLevel:
        return self.levels[i]

    @property
    def dims(self):
        return [lv.dims for lv in self.levels]

    def readout_grid(self) -> VoxelGrid:
        return self.high_res if self.high_res is not None else self.levels[-1].grid


def make_level(grid: VoxelGrid, config: SynthesisConfig, pca: PcaModel | None = None) -> PyramidLevel:
    pca = pca or fit_grid_pca(grid, config.pca_components)
    return PyramidLevel(grid, transform_exemplar(grid, config.t_multiplier, pca, config.high_density), pca)


def build_pyramid(fine: VoxelGrid, config: SynthesisConfig, high_res: VoxelGrid | None = None) -> ExemplarPyramid:
    dims = scale_schedule(config, fine.dims)
    if max(fine.dims) < max(dims[-1]):
        raise ValueError(f"exemplar max dim {max(fine.dims)} is below the finest scheduled dim {max(dims[-1])}")
    levels = []
    for d in dims:
        log.debug("pyramid level %s", d)
        levels.append(make_level(downsample(fine, d), config))
    if high_res is None:
        high_res = fine
        if max(fine.dims) > config.high_res_max_dim:
            high_res = downsample(fine, dims_for_max(config.high_res_max_dim, fine.dims))
    return ExemplarPyramid(levels, high_res)


def save_pyramid_dir(pyr: ExemplarPyramid, path) -> None:
    from .io import save_grid

    os.makedirs(path, exist_ok=True)
    for i, lv in enumerate(pyr.levels):
        save_grid(os.path.join(path, f"level_{i}.vxg"), lv.grid)
    if pyr.high_res is not None:
        save_grid(os.path.join(path, "high.vxg"), pyr.high_res)


def load_pyramid_dir(path, config: SynthesisConfig) -> ExemplarPyramid:
    """Load ``level_0.vxg .. level_N.vxg`` (plus optional ``high.vxg``) and transform each level."""
    from .io import load_voxel_grid

    levels = []
    for i in range(config.n_scales):
        fn = os.path.join(path, f"level_{i}.vxg")
        if not os.path.exists(fn):
            raise FileNotFoundError(f"pyramid level missing: {fn}")
        levels.append(make_level(load_voxel_grid(fn, config.density_threshold), config))
    high = os.path.join(path, "high.vxg")
    return ExemplarPyramid(levels, load_voxel_grid(high, config.density_threshold) if os.path.exists(high) else None)


# ---------------------------------------------------------------- procedural

def _value_noise(rng: np.random.Generator, shape, cells: int, octaves: int = 4, gain: float = 0.5) -> np.ndarray:
    """Smooth fractal value noise on a 2D or 3D grid, roughly in [0, 1]."""
    total = np.zeros(shape)
    amp, norm = 1.0, 0.0
    for o in range(octaves):
        c = cells * 2 ** o
        lattice = rng.random((c + 1,) * len(shape))
        coords = []
        for n in shape:
            u = np.linspace(0.0, c, n, endpoint=False) + 0.5 * c / n
            coords.append(u)
        mesh = np.meshgrid(*coords, indexing="ij")
        i0 = [np.minimum(np.floor(u).astype(np.int64), c - 1) for u in mesh]
        f = [u - i for u, i in zip(mesh, i0)]
        s = [t * t * (3.0 - 2.0 * t) for t in f]
        acc = np.zeros(shape)
        for corner in np.ndindex(*(2,) * len(shape)):
            w = np.ones(shape)
            idx = []
            for a, bit in enumerate(corner):
                w = w * (s[a] if bit else 1.0 - s[a])
                idx.append(i0[a] + bit)
            acc += w * lattice[tuple(idx)]
        total += amp * acc
        norm += amp
        amp *= gain
    return total / norm


def _sh_from_rgb(rgb: np.ndarray, rng: np.random.Generator, view_amp: float = 0.04) -> np.ndarray:
    """DC coefficients reproducing ``rgb`` plus a small degree-1 view dependence."""
    shape = rgb.shape[:-1]
    sh = np.zeros(shape + (SH_COEFFS,))
    tilt = view_amp * (rng.random(3) - 0.5) / SH_C1
    for c in range(3):
        sh[..., 9 * c] = rgb[..., c] / SH_C0
        sh[..., 9 * c + 1:9 * c + 4] = tilt * rgb[..., c:c + 1]
    return sh


def _soft_inside(signed: np.ndarray, width: float) -> np.ndarray:
    """1 inside, 0 outside, linear ramp of ``width`` across the boundary (signed < 0 is inside)."""
    return np.clip(0.5 - signed / width, 0.0, 1.0)


def _terrain(dims, rng):
    X, Y, Z = dims
    height = 0.12 + 0.55 * _value_noise(rng, (X, Y), cells=3, octaves=4)
    detail = _value_noise(rng, (X, Y), cells=6, octaves=2)
    z = (np.arange(Z) + 0.5) / Z
    signed = (z[None, None, :] - height[..., None]) * Z
    density = 10.0 * _soft_inside(signed, 1.0)
    rel = np.clip(z[None, None, :] / 0.67, 0, 1) + 0.08 * (detail[..., None] - 0.5)
    stops = [0.0, 0.25, 0.45, 0.7, 0.9, 1.0]
    palette = np.array([
        [0.80, 0.72, 0.50], [0.32, 0.55, 0.22], [0.20, 0.42, 0.16],
        [0.48, 0.40, 0.33], [0.92, 0.92, 0.95], [0.97, 0.97, 1.00],
    ])
    rgb = np.stack([np.interp(rel, stops, palette[:, c]) for c in range(3)], axis=-1)
    rgb = np.broadcast_to(rgb, (X, Y, Z, 3))
    return density, rgb


def _arches(dims, rng):
    X, Y, Z = dims
    pts = voxel_centers(dims, BBox.for_dims(dims))
    vs = 2.0 / max(dims)
    h = BBox.for_dims(dims).extents
    ground_top = -h[2] + 0.18 * 2 * h[2]
    inside = pts[..., 2] - ground_top
    rgb = np.broadcast_to(np.array([0.55, 0.45, 0.35]), dims + (3,)).copy()
    n_arch = int(rng.integers(2, 4))
    for k in range(n_arch):
        cy = -h[1] + (k + 0.5) * 2 * h[1] / n_arch + rng.uniform(-0.1, 0.1) * h[1]
        cx = rng.uniform(-0.3, 0.3) * h[0]
        R = rng.uniform(0.35, 0.6) * min(h[0], 2 * h[2])
        tube = rng.uniform(0.06, 0.12)
        dxz = np.hypot(pts[..., 0] - cx, pts[..., 2] - ground_top)
        torus = np.hypot(dxz - R, pts[..., 1] - cy) - tube
        torus = np.where(pts[..., 2] >= ground_top - tube, torus, np.inf)
        col = np.array([0.75, 0.35, 0.25]) + 0.2 * (rng.random(3) - 0.5)
        rgb = np.where((torus < inside)[..., None], col, rgb)
        inside = np.minimum(inside, torus)
    density = 10.0 * _soft_inside(inside / vs, 1.0)
    return density, rgb


def _blobs(dims, rng):
    pts = voxel_centers(dims, BBox.for_dims(dims))
    h = BBox.for_dims(dims).extents
    vs = 2.0 / max(dims)
    inside = np.full(dims, np.inf)
    rgb = np.full(dims + (3,), 0.5)
    for _ in range(int(rng.integers(4, 9))):
        c = rng.uniform(-0.6, 0.6, 3) * h
        r = rng.uniform(0.12, 0.35) * min(h)
        d = np.linalg.norm(pts - c, axis=-1) - r
        rgb = np.where((d < inside)[..., None], rng.uniform(0.15, 0.95, 3), rgb)
        inside = np.minimum(inside, d)
    density = 10.0 * _soft_inside(inside / vs, 1.5)
    return density, rgb


PROCEDURAL_KINDS = {"terrain": _terrain, "arches": _arches, "blobs": _blobs}


def procedural_exemplar(kind: str, dims, seed: int = 0, threshold: float = DENSITY_THRESHOLD) -> VoxelGrid:
    if kind not in PROCEDURAL_KINDS:
        raise ValueError(f"unknown exemplar kind {kind!r}; choose from {sorted(PROCEDURAL_KINDS)}")
    dims = tuple(int(v) for v in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"dims must be 3 positive integers, got {dims}")
    rng = np.random.default_rng(seed)
    density, rgb = PROCEDURAL_KINDS[kind](dims, rng)
    density = np.clip(density, 0.0, 10.0)
    sh = _sh_from_rgb(np.asarray(rgb), rng)
    return VoxelGrid(density, sh, BBox.for_dims(dims), threshold)
