"""Binary grid/mapping files, OBJ mesh export and image writers.

VXG1: magic, u32 Dx Dy Dz, u32 C, 3 x f32 half extents, then C planar
channels of Dx*Dy*Dz f32 values, each x-fastest.

VXM1: magic, u32 Dx Dy Dz, 3 x f32 synthesis half extents, 3 x f32 exemplar
half extents, then 3 f32 per voxel (xyz interleaved), voxels x-fastest.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

from .grid import DENSITY_THRESHOLD, SH_COEFFS, BBox, MappingField, TransformedGrid, VoxelGrid

VXG_MAGIC = b"VXG1"
VXM_MAGIC = b"VXM1"


class FormatError(ValueError):
    pass


def write_vxg(path, values: np.ndarray, bbox: BBox) -> None:
    """Write a channels-last volume ``(X, Y, Z, C)``."""
    if values.ndim == 3:
        values = values[..., None]
    dx, dy, dz, c = values.shape
    header = VXG_MAGIC + struct.pack("<4I3f", dx, dy, dz, c, *bbox.half_extents)
    # planar channels, x fastest: (C, Z, Y, X) in C order
    body = np.ascontiguousarray(values.transpose(3, 2, 1, 0), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_vxg(path) -> tuple[np.ndarray, BBox]:
    data = Path(path).read_bytes()
    if data[:4] != VXG_MAGIC:
        raise FormatError(f"{path}: not a VXG1 file")
    dx, dy, dz, c = struct.unpack_from("<4I", data, 4)
    half = struct.unpack_from("<3f", data, 20)
    n = dx * dy * dz * c
    if len(data) != 32 + 4 * n:
        raise FormatError(f"{path}: expected {32 + 4 * n} bytes, found {len(data)}")
    arr = np.frombuffer(data, dtype="<f4", offset=32, count=n).reshape(c, dz, dy, dx)
    return arr.transpose(3, 2, 1, 0).astype(np.float64), BBox(half)


def save_grid(path, grid: VoxelGrid | TransformedGrid) -> None:
    write_vxg(path, grid.channels(), grid.bbox)


def load_voxel_grid(path, threshold: float = DENSITY_THRESHOLD) -> VoxelGrid:
    values, bbox = read_vxg(path)
    if values.shape[3] != 1 + SH_COEFFS:
        raise FormatError(f"{path}: radiance grids need {1 + SH_COEFFS} channels, found {values.shape[3]}")
    return VoxelGrid.from_channels(values, bbox, threshold)


def load_transformed_grid(path) -> TransformedGrid:
    values, bbox = read_vxg(path)
    return TransformedGrid.from_channels(values, bbox)


def write_vxm(path, field: MappingField) -> None:
    dx, dy, dz = field.dims
    header = VXM_MAGIC + struct.pack("<3I6f", dx, dy, dz, *field.bbox.half_extents, *field.exemplar_bbox.half_extents)
    body = np.ascontiguousarray(field.coords.transpose(2, 1, 0, 3), dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_vxm_raw(path) -> tuple[np.ndarray, BBox, BBox]:
    """Coordinates exactly as stored (unclamped), with both boxes."""
    data = Path(path).read_bytes()
    if data[:4] != VXM_MAGIC:
        raise FormatError(f"{path}: not a VXM1 file")
    dx, dy, dz = struct.unpack_from("<3I", data, 4)
    half = struct.unpack_from("<6f", data, 16)
    n = dx * dy * dz * 3
    if len(data) != 40 + 4 * n:
        raise FormatError(f"{path}: expected {40 + 4 * n} bytes, found {len(data)}")
    coords = np.frombuffer(data, dtype="<f4", offset=40, count=n).reshape(dz, dy, dx, 3)
    return coords.transpose(2, 1, 0, 3).astype(np.float64), BBox(half[:3]), BBox(half[3:])


def read_vxm(path) -> MappingField:
    coords, bbox, ex_bbox = read_vxm_raw(path)
    return MappingField(coords, bbox, ex_bbox)


def write_obj(path, vertices: np.ndarray, triangles: np.ndarray) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(v) for v in parts[1:4]])
        elif parts[0] == "f":
            tris.append([int(v.split("/")[0]) - 1 for v in parts[1:4]])
    return np.asarray(verts, dtype=np.float64).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6; ``image`` is ``(H, W, 3)`` in [0, 1]."""
    img = to_uint8(image)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P6\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise FormatError(f"{path}: not a binary PPM")
    w, h = int(m.group(1)), int(m.group(2))
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=m.end())
    return pix.reshape(h, w, 3).astype(np.float64) / 255.0


def write_png(path, image: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(to_uint8(image)).save(path)
