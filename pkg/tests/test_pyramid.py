import numpy as np
import pytest

from voxsyn.grid import voxel_centers, trilinear
from voxsyn.pyramid import (DEFAULT_SCHEDULE, SynthesisConfig, build_pyramid, downsample, geometric_schedule,
                            load_pyramid_dir, max_dim_schedule, procedural_exemplar, save_pyramid_dir,
                            scale_schedule)
from conftest import constant_grid


def test_default_schedule():
    assert max_dim_schedule(SynthesisConfig()) == [16, 21, 28, 38, 51, 68, 91, 121]


def test_schedule_aspect_and_rounding():
    dims = scale_schedule(SynthesisConfig(), (121, 121, 47))
    assert dims[-1] == (121, 121, 47)
    assert [d[0] for d in dims] == list(DEFAULT_SCHEDULE)
    # half-up rounding of the aspect-scaled minor axis
    assert dims[0] == (16, 16, 6)
    assert all(d[0] == d[1] == d[2] for d in scale_schedule(SynthesisConfig(), (64, 64, 64)))


def test_non_default_r_gives_geometric_schedule():
    cfg = SynthesisConfig(r=1.5, N=3)
    assert max_dim_schedule(cfg) == geometric_schedule(121, 1.5, 3) == [36, 54, 81, 121]


def test_config_validation():
    for bad in (dict(r=1.0), dict(p=4), dict(w_a=1.5), dict(alpha=0), dict(T_e=0),
                dict(N=2, max_dim_schedule=[8, 8, 9]), dict(N=1, max_dim_schedule=[8, 9, 10])):
        with pytest.raises(ValueError):
            SynthesisConfig(**bad)


@pytest.mark.filterwarnings("ignore::voxsyn.xform.EmptySurfaceWarning")
def test_build_pyramid_levels_and_constant():
    g = constant_grid((40, 40, 20), density=2.0, sh_value=0.3)
    cfg = SynthesisConfig(N=2, max_dim_schedule=[16, 24, 40])
    pyr = build_pyramid(g, cfg)
    assert len(pyr) == 3
    assert [max(d) for d in pyr.dims] == [16, 24, 40]
    for lv in pyr.levels:
        assert np.allclose(lv.grid.density, 2.0) and np.allclose(lv.grid.sh, 0.3)
        assert lv.grid.bbox.close_to(g.bbox)
    with pytest.raises(ValueError):
        build_pyramid(constant_grid((20, 20, 10)), cfg)


def test_downsample_roundtrip_band_limited():
    g = procedural_exemplar("terrain", (64, 64, 32), seed=2)
    small = downsample(g, (48, 48, 24))
    up = trilinear(small.density, small.bbox, voxel_centers(g.dims, g.bbox))
    err = np.linalg.norm(up - g.density) / np.linalg.norm(g.density)
    assert err <= 0.1


def test_procedural_determinism_and_bands():
    a = procedural_exemplar("terrain", (64, 64, 64), 7)
    b = procedural_exemplar("terrain", (64, 64, 64), 7)
    np.testing.assert_array_equal(a.density, b.density)
    np.testing.assert_array_equal(a.sh, b.sh)
    assert np.all(a.density[:, :, -1] == 0)
    assert 0.1 <= a.occupied.mean() <= 0.6
    for kind in ("arches", "blobs"):
        g = procedural_exemplar(kind, (32, 32, 32), 1)
        assert 0 <= g.density.min() and g.density.max() <= 10
        assert g.occupied.any()
    with pytest.raises(ValueError):
        procedural_exemplar("castle", (16, 16, 16))


def test_pyramid_dir_roundtrip(tmp_path):
    g = procedural_exemplar("blobs", (24, 24, 24), 3)
    cfg = SynthesisConfig(N=1, max_dim_schedule=[16, 24])
    pyr = build_pyramid(g, cfg)
    save_pyramid_dir(pyr, tmp_path)
    back = load_pyramid_dir(tmp_path, cfg)
    assert back.dims == pyr.dims
    np.testing.assert_allclose(back[1].grid.density, pyr[1].grid.density, rtol=1e-6)
    assert back.high_res is not None
