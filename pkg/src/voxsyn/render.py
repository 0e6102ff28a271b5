"""Emission-absorption volume rendering of voxel grids and mapping fields."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .grid import BBox, MappingField, VoxelGrid, map_query, trilinear

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)

DEFAULT_FOCAL = 512.0
DEFAULT_RADIUS = 2.5
DEFAULT_VIEWS = 50


def sh_basis(d: np.ndarray) -> np.ndarray:
    """Real SH basis up to degree 2 at unit directions ``d``, shape ``(..., 9)``."""
    d = np.asarray(d, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    return np.stack([
        np.full_like(x, SH_C0),
        -SH_C1 * y, SH_C1 * z, -SH_C1 * x,
        SH_C2[0] * x * y, SH_C2[1] * y * z, SH_C2[2] * (2.0 * z * z - x * x - y * y),
        SH_C2[3] * x * z, SH_C2[4] * (x * x - y * y),
    ], axis=-1)


def eval_sh_raw(h: np.ndarray, d: np.ndarray) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    basis = sh_basis(d)
    return np.einsum("...ck,...k->...c", h.reshape(h.shape[:-1] + (3, 9)), basis)


def eval_sh(h: np.ndarray, d: np.ndarray) -> np.ndarray:
    """RGB from 27 channel-major SH coefficients, clamped to [0, 1]."""
    return np.clip(eval_sh_raw(h, d), 0.0, 1.0)


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    focal: float
    resolution: tuple[int, int]  # (W, H)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.look_at = np.asarray(self.look_at, dtype=np.float64)
        up = np.asarray(self.up, dtype=np.float64)
        self.up = up / np.linalg.norm(up)
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position coincides with its look-at point")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")
        self.resolution = (int(self.resolution[0]), int(self.resolution[1]))

    def basis(self):
        f = self.look_at - self.position
        f /= np.linalg.norm(f)
        r = np.cross(f, self.up)
        if np.linalg.norm(r) < 1e-9:
            raise ValueError("camera up vector is parallel to the viewing direction")
        r /= np.linalg.norm(r)
        return f, r, np.cross(r, f)

    def rays(self):
        """Origins and unit directions for every pixel, image rows top to bottom, shape ``(H, W, 3)``."""
        W, H = self.resolution
        f, r, u = self.basis()
        px = np.arange(W) + 0.5 - W / 2.0
        py = np.arange(H) + 0.5 - H / 2.0
        d = f * self.focal + r * px[None, :, None] - u * py[:, None, None]
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(self.position, d.shape), d

    @classmethod
    def from_fov(cls, position, look_at, fov_deg: float, resolution, up=(0.0, 0.0, 1.0)) -> "Camera":
        W = int(resolution[0])
        focal = 0.5 * W / math.tan(math.radians(fov_deg) / 2.0)
        return cls(position, look_at, _safe_up(position, look_at, up), focal, resolution)


def _safe_up(position, look_at, up=(0.0, 0.0, 1.0)):
    f = np.asarray(look_at, dtype=np.float64) - np.asarray(position, dtype=np.float64)
    f /= np.linalg.norm(f)
    up = np.asarray(up, dtype=np.float64)
    if np.linalg.norm(np.cross(f, up)) < 1e-6:
        return np.array([0.0, 1.0, 0.0])
    return up


def sample_cameras(K: int = DEFAULT_VIEWS, radius: float = DEFAULT_RADIUS, focal: float = DEFAULT_FOCAL,
                   resolution=(512, 512), seed: int = 0) -> list[Camera]:
    """Fibonacci placement on the upper hemisphere, elevation from 90 down to 0 degrees.

    The seed only rotates the spiral about the vertical axis.
    """
    if K < 1:
        raise ValueError("need at least one camera")
    golden = math.pi * (3.0 - math.sqrt(5.0))
    phase = np.random.default_rng(seed).uniform(0.0, 2.0 * math.pi) if seed else 0.0
    cams = []
    for i in range(K):
        z = 1.0 - i / (K - 1) if K > 1 else 1.0
        rho = math.sqrt(max(0.0, 1.0 - z * z))
        phi = phase + i * golden
        pos = radius * np.array([rho * math.cos(phi), rho * math.sin(phi), z])
        cams.append(Camera(pos, np.zeros(3), _safe_up(pos, np.zeros(3)), focal, resolution))
    return cams


def parse_camera_spec(spec: str, resolution=(512, 512), focal: float = DEFAULT_FOCAL) -> list[Camera]:
    """``hemisphere:K:R`` or a path to a file of ``px py pz lx ly lz fov`` lines (fov in degrees)."""
    if spec.startswith("hemisphere"):
        parts = spec.split(":")
        K = int(parts[1]) if len(parts) > 1 and parts[1] else DEFAULT_VIEWS
        R = float(parts[2]) if len(parts) > 2 and parts[2] else DEFAULT_RADIUS
        return sample_cameras(K, R, focal, resolution)
    cams = []
    with open(spec) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            vals = line.split()
            if len(vals) != 7:
                raise ValueError(f"{spec}:{n}: expected 7 numbers, got {len(vals)}")
            v = [float(x) for x in vals]
            cams.append(Camera.from_fov(v[0:3], v[3:6], v[6], resolution))
    if not cams:
        raise ValueError(f"{spec}: no cameras")
    return cams


Scene = Union[VoxelGrid, tuple]


def _ray_box(o, d, h):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t0 = (-h - o) * inv
        t1 = (h - o) * inv
    lo = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
    tn = np.maximum(lo.max(axis=-1), 0.0)
    tf = hi.min(axis=-1)
    return tn, tf


def render(scene: Scene, camera: Camera, step: float | None = None, background: float = 1.0) -> np.ndarray:
    """Render to an ``(H, W, 3)`` image in [0, 1].

    Each ray is cut into segments of length ``step`` inside the scene box (the
    last one shortened) and sampled at segment midpoints; a segment with
    density ``rho`` and length ``ds`` has opacity ``1 - exp(-rho * ds)``.
    """
    if isinstance(scene, VoxelGrid):
        grid, fld = scene, None
        bbox = grid.bbox
    else:
        fld, grid = scene
        bbox = fld.bbox
    if step is None:
        step = 0.5 * float(np.min((fld or grid).voxel_size))
    if step <= 0:
        raise ValueError("step must be positive")
    W, H = camera.resolution
    o, d = camera.rays()
    o = o.reshape(-1, 3)
    d = d.reshape(-1, 3)
    tn, tf = _ray_box(o, d, bbox.extents)
    color = np.zeros((len(o), 3))
    trans = np.ones(len(o))
    hit = np.flatnonzero(tf > tn)
    n_seg = np.ceil((tf[hit] - tn[hit]) / step).astype(np.int64)
    values = grid.channels()
    dens = values[..., 0]
    for i in range(int(n_seg.max()) if hit.size else 0):
        live = n_seg > i
        rays = hit[live]
        a = tn[rays] + i * step
        b = np.minimum(a + step, tf[rays])
        ds = b - a
        x = o[rays] + d[rays] * (0.5 * (a + b))[:, None]
        if fld is not None:
            x = map_query(fld, x)
        rho = trilinear(dens, grid.bbox, x)
        nz = rho > 0
        if not nz.any():
            continue
        rays, x, rho, ds = rays[nz], x[nz], rho[nz], ds[nz]
        att = np.exp(-rho * ds)
        sh = trilinear(values[..., 1:], grid.bbox, x)
        rgb = eval_sh(sh, d[rays])
        color[rays] += (trans[rays] * (1.0 - att))[:, None] * rgb
        trans[rays] *= att
    img = color + background * trans[:, None]
    return img.reshape(H, W, 3)


def render_views(scene: Scene, cameras: Sequence[Camera], step: float | None = None) -> list[np.ndarray]:
    return [render(scene, c, step) for c in cameras]


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)
