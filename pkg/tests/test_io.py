import numpy as np
import pytest

from voxsyn import io
from voxsyn.grid import BBox, MappingField, VoxelGrid


def test_vxg_roundtrip_and_layout(tmp_path, rng):
    dims = (3, 4, 5)
    g = VoxelGrid(rng.uniform(0, 5, dims).astype(np.float32), rng.normal(size=dims + (27,)).astype(np.float32),
                  BBox.for_dims(dims))
    path = tmp_path / "g.vxg"
    io.save_grid(path, g)
    back = io.load_voxel_grid(path)
    np.testing.assert_array_equal(back.density, g.density)
    np.testing.assert_array_equal(back.sh, g.sh)
    raw = path.read_bytes()
    assert raw[:4] == b"VXG1"
    first = np.frombuffer(raw, "<f4", count=2, offset=32)
    # x fastest within the first (density) plane
    np.testing.assert_array_equal(first, [g.density[0, 0, 0], g.density[1, 0, 0]])


def test_vxm_roundtrip(tmp_path):
    b = BBox.for_dims((4, 3, 2))
    f = MappingField.identity((4, 3, 2), b)
    io.write_vxm(tmp_path / "m.vxm", f)
    back = io.read_vxm(tmp_path / "m.vxm")
    np.testing.assert_allclose(back.coords, f.coords, atol=1e-6)
    assert back.bbox.close_to(b)


def test_bad_magic(tmp_path):
    p = tmp_path / "x.vxg"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(io.FormatError):
        io.read_vxg(p)


def test_ppm_roundtrip(tmp_path, rng):
    img = rng.random((7, 5, 3))
    io.write_ppm(tmp_path / "a.ppm", img)
    back = io.read_ppm(tmp_path / "a.ppm")
    assert back.shape == (7, 5, 3)
    np.testing.assert_allclose(back, np.round(img * 255) / 255, atol=1e-9)


def test_obj_roundtrip(tmp_path):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.5]], float)
    t = np.array([[0, 1, 2]])
    io.write_obj(tmp_path / "m.obj", v, t)
    v2, t2 = io.read_obj(tmp_path / "m.obj")
    np.testing.assert_allclose(v2, v)
    np.testing.assert_array_equal(t2, t)
