"""Coarse-to-fine synthesis loop and the applications built on it."""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import (BBox, MappingField, TransformedGrid, VoxelGrid, resolve_features, upsample_mapping)
from .nnf import ScaleStats, nnf_scale_pass
from .pyramid import ExemplarPyramid, SynthesisConfig, downsample, round_half_up
from .xform import transform_exemplar

log = logging.getLogger(__name__)

# application presets: first visited level of the default 8-level pyramid
EDIT_START_SCALE = 2  # 6 scales from max dim 28
ANALOGY_START_SCALE = 4  # 4 scales from max dim 51


def init_coarse(field_dims, exemplar_bbox: BBox, sigma: float, seed: int,
                synth_bbox: BBox | None = None) -> MappingField:
    """Identity mapping plus i.i.d. Gaussian noise of std ``sigma * half_extent`` per axis."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    synth_bbox = synth_bbox or exemplar_bbox
    ident = MappingField.identity(field_dims, synth_bbox, exemplar_bbox)
    if sigma == 0:
        return ident
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=ident.coords.shape) * (sigma * exemplar_bbox.extents)
    return MappingField(ident.coords + noise, synth_bbox, exemplar_bbox)


@dataclass
class SynthesisResult:
    field: MappingField
    seed: int
    config: SynthesisConfig
    scales: list = field(default_factory=list)
    seconds: float = 0.0

    def log_text(self) -> str:
        lines = [f"seed\t{self.seed}", f"total_seconds\t{self.seconds:.3f}"]
        for k, v in self.config.to_dict().items():
            lines.append(f"config.{k}\t{v}")
        lines.append("scale\tdims\tmethod\titerations\tseconds\tmean_distance\tkey_coverage")
        for s in self.scales:
            lines.append(f"{s.scale}\t{'x'.join(map(str, s.dims))}\t{s.method}\t{s.iterations}\t"
                         f"{s.seconds:.3f}\t{s.mean_distance:.6g}\t{s.coverage:.4f}")
        return "\n".join(lines) + "\n"


def _check_pyramid(pyramid: ExemplarPyramid, config: SynthesisConfig) -> None:
    if len(pyramid) != config.n_scales:
        raise ValueError(f"pyramid has {len(pyramid)} levels but the config expects {config.n_scales}")


def run_synthesis(pyramid: ExemplarPyramid, config: SynthesisConfig, seed: int,
                  init: MappingField | None = None, first_query: np.ndarray | None = None,
                  synth_dims: list | None = None, synth_bbox: BBox | None = None) -> SynthesisResult:
    """Shared scale loop from ``config.start_scale`` to the finest level.

    ``init`` is the starting mapping at the first visited scale (noise around
    identity when omitted). ``first_query`` replaces the features read through
    that mapping, as in structural analogies.
    """
    _check_pyramid(pyramid, config)
    t0 = time.perf_counter()
    dims = synth_dims or pyramid.dims
    bbox = synth_bbox or pyramid.bbox
    stats: list[ScaleStats] = []
    fld = init
    for n in range(config.start_scale, config.n_scales):
        level = pyramid[n]
        if n == config.start_scale:
            if fld is None:
                fld = init_coarse(dims[n], pyramid.bbox, config.sigma, seed, bbox)
            elif tuple(fld.dims) != tuple(dims[n]):
                raise ValueError(f"initial mapping dims {fld.dims} do not match scale {n} dims {tuple(dims[n])}")
        else:
            fld = upsample_mapping(fld, dims[n])
        if n == config.start_scale and first_query is not None:
            query = np.asarray(first_query, dtype=np.float64)
            if query.shape[:3] != tuple(dims[n]):
                raise ValueError(f"first query volume dims {query.shape[:3]} != scale dims {tuple(dims[n])}")
        else:
            query = resolve_features(fld, level.features).channels()
        fld = nnf_scale_pass(query, level.features.channels(), config, n, seed, init_field=fld,
                             exemplar_bbox=pyramid.bbox, synth_bbox=bbox, stats=stats)
        log.info("scale %d %s %s %.2fs", n, stats[-1].dims, stats[-1].method, stats[-1].seconds)
    return SynthesisResult(fld, seed, config, stats, time.perf_counter() - t0)


def generate(pyramid: ExemplarPyramid, config: SynthesisConfig, seed: int | None = None) -> MappingField:
    return run_synthesis(pyramid, config, config.seed if seed is None else seed).field


def retarget_dims(pyramid: ExemplarPyramid, target_dims, p: int) -> list[tuple[int, int, int]]:
    """Per-scale synthesis dims scaled from the exemplar pyramid by ``target / finest``."""
    target = np.asarray(target_dims, dtype=np.float64)
    finest = np.asarray(pyramid.dims[-1], dtype=np.float64)
    out = []
    for d in pyramid.dims:
        v = np.maximum(round_half_up(np.asarray(d) * target / finest), p)
        out.append(tuple(int(x) for x in v))
    out[-1] = tuple(int(x) for x in target_dims)
    return out


def retarget_bbox(pyramid: ExemplarPyramid, target_dims) -> BBox:
    """Synthesis box keeping the exemplar's finest voxel size."""
    finest = np.asarray(pyramid.dims[-1], dtype=np.float64)
    return BBox(tuple(pyramid.bbox.extents * np.asarray(target_dims) / finest))


def retarget(pyramid: ExemplarPyramid, target_dims, config: SynthesisConfig, seed: int = 0) -> SynthesisResult:
    target = tuple(int(v) for v in target_dims)
    if len(target) != 3 or min(target) < config.p:
        raise ValueError(f"target dims must be 3 integers >= p, got {target_dims}")
    dims = retarget_dims(pyramid, target, config.p)
    bbox = retarget_bbox(pyramid, target)
    init = MappingField.identity(dims[config.start_scale], bbox, pyramid.bbox)
    return run_synthesis(pyramid, config, seed, init=init, synth_dims=dims, synth_bbox=bbox)


def analogy_features(grid_b: VoxelGrid, pyramid_a: ExemplarPyramid, config: SynthesisConfig,
                     level: int | None = None) -> TransformedGrid:
    """Scene B transformed with A's PCA at one of A's pyramid levels (its grid stretched onto A's box)."""
    level = config.start_scale if level is None else level
    lv = pyramid_a[level]
    stretched = VoxelGrid(grid_b.density, grid_b.sh, pyramid_a.bbox, grid_b.threshold)
    return transform_exemplar(downsample(stretched, lv.dims), config.t_multiplier, lv.pca, config.high_density)


def structural_analogy(pyramid_a: ExemplarPyramid, features_b: TransformedGrid | np.ndarray,
                       config: SynthesisConfig, seed: int = 0) -> SynthesisResult:
    query = features_b.channels() if isinstance(features_b, TransformedGrid) else np.asarray(features_b)
    dims = pyramid_a.dims[config.start_scale]
    init = MappingField.identity(dims, pyramid_a.bbox)
    return run_synthesis(pyramid_a, config, seed, init=init, first_query=query)


def edit_synthesis(pyramid: ExemplarPyramid, proxy: MappingField, config: SynthesisConfig,
                   seed: int = 0) -> SynthesisResult:
    dims = pyramid.dims[config.start_scale]
    if tuple(proxy.dims) != tuple(dims):
        raise ValueError(f"proxy dims {proxy.dims} do not match the edit scale dims {tuple(dims)}")
    if not proxy.exemplar_bbox.close_to(pyramid.bbox):
        raise ValueError("proxy exemplar box differs from the pyramid box")
    return run_synthesis(pyramid, config, seed, init=proxy)


def clamp_proxy(coords: np.ndarray, bbox: BBox, exemplar_bbox: BBox | None = None) -> MappingField:
    """Build a proxy mapping, warning when coordinates had to be clamped into the box."""
    exemplar_bbox = exemplar_bbox or bbox
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(exemplar_bbox.contains(coords)):
        warnings.warn("proxy coordinates outside the exemplar box were clamped", stacklevel=2)
    return MappingField(coords, bbox, exemplar_bbox)


def readout(fld: MappingField, exemplar: VoxelGrid) -> VoxelGrid:
    return resolve_features(fld, exemplar)


def redecorate(fld: MappingField, other: VoxelGrid) -> VoxelGrid:
    if not other.bbox.close_to(fld.exemplar_bbox):
        raise ValueError(f"exemplar box {other.bbox.half_extents} differs from the mapping's "
                         f"{fld.exemplar_bbox.half_extents}")
    return resolve_features(fld, other)


def preset(config: SynthesisConfig, kind: str) -> SynthesisConfig:
    """Application settings: no noise, and a later first scale for edits and analogies."""
    if kind == "generate":
        return config
    if kind == "retarget":
        return config.replace(sigma=0.0)
    if kind == "edit":
        return config.replace(sigma=0.0, start_scale=min(EDIT_START_SCALE, config.N))
    if kind == "analogy":
        return config.replace(sigma=0.0, start_scale=min(ANALOGY_START_SCALE, config.N))
    raise ValueError(f"unknown preset {kind!r}")
