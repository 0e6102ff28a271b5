"""The compiled and numpy kernel backends must agree bit for bit."""
import numpy as np
import pytest

from voxsyn import _pykernels, kernels
from conftest import random_features

needs_ext = pytest.mark.skipif("cython" not in kernels.BACKENDS, reason="compiled extension not built")


@needs_ext
@pytest.mark.parametrize("w_a", [0.5, 0.3, 1.0])
def test_pair_distances_parity(rng, w_a):
    q = random_features(rng, (9, 8, 7))
    k = random_features(rng, (8, 9, 10))
    mq = 5 * 4 * 3
    mk = 4 * 5 * 6
    qi = rng.integers(0, mq, 400)
    ki = rng.integers(0, mk, 400)
    a = kernels.BACKENDS["cython"].pair_distances(q, k, 5, w_a, qi, ki)
    b = _pykernels.pair_distances(q, k, 5, w_a, qi, ki)
    np.testing.assert_array_equal(a, b)


@needs_ext
def test_improve_parity(rng):
    q = random_features(rng, (9, 8, 7))
    k = random_features(rng, (8, 9, 10))
    mq, mk = 60, 120
    assign0 = rng.integers(0, mk, mq)
    dist0 = _pykernels.pair_distances(q, k, 5, 0.5, np.arange(mq), assign0)
    cand = rng.integers(0, mk, mq)
    outs = []
    for mod in (kernels.BACKENDS["cython"], _pykernels):
        a, d = assign0.copy(), dist0.copy()
        n = mod.improve(q, k, 5, 0.5, cand, a, d)
        outs.append((n, a, d))
    assert outs[0][0] == outs[1][0]
    np.testing.assert_array_equal(outs[0][1], outs[1][1])
    np.testing.assert_array_equal(outs[0][2], outs[1][2])
    assert np.all(outs[0][2] <= dist0)


@needs_ext
def test_point_triangle_parity(rng):
    pts = rng.normal(size=(2000, 3))
    a, b, c = (rng.normal(size=(2000, 3)) for _ in range(3))
    np.testing.assert_array_equal(kernels.BACKENDS["cython"].point_triangle_dist2(pts, a, b, c),
                                  _pykernels.point_triangle_dist2(pts, a, b, c))


def test_point_triangle_against_dense_sampling(rng):
    a, b, c = np.array([0, 0, 0.0]), np.array([1, 0, 0.0]), np.array([0, 1, 0.0])
    pts = rng.normal(size=(30, 3))
    u, v = np.meshgrid(np.linspace(0, 1, 301), np.linspace(0, 1, 301))
    m = u + v <= 1
    tri = a + u[m, None] * (b - a) + v[m, None] * (c - a)
    d2 = kernels.point_triangle_dist2(pts, np.tile(a, (30, 1)), np.tile(b, (30, 1)), np.tile(c, (30, 1)))
    for p, d in zip(pts, d2):
        ref = ((tri - p) ** 2).sum(1).min()
        assert d <= ref + 1e-12
        assert d == pytest.approx(ref, abs=2e-5)


@needs_ext
def test_mesh_distance_parity(rng):
    verts = rng.uniform(-0.8, 0.8, size=(30, 3))
    faces = rng.integers(0, 30, size=(20, 3)).astype(np.int64)
    args = ((12, 11, 10), np.array([-0.9, -0.9, -0.9]), np.array([0.16, 0.17, 0.18]), 0.3)
    a = kernels.BACKENDS["cython"].mesh_distance(verts, faces, *args)
    b = _pykernels.mesh_distance(verts, faces, *args)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-15)
    assert a.max() == 0.3


@needs_ext
def test_score_block_parity(rng):
    qa = (rng.integers(-200, 200, size=(50, 30)) / 128).astype(np.float32)
    ka = (rng.integers(-200, 200, size=(40, 30)) / 128).astype(np.float32)
    qg = (rng.integers(-128, 128, size=(50, 10)) / 128).astype(np.float32)
    kg = (rng.integers(-128, 128, size=(40, 10)) / 128).astype(np.float32)
    args = (qa @ ka.T, qg @ kg.T, (qa.astype(float) ** 2).sum(1), (ka.astype(float) ** 2).sum(1),
            (qg.astype(float) ** 2).sum(1), (kg.astype(float) ** 2).sum(1), 0.3, 0.01, True)
    res = []
    for mod in (kernels.BACKENDS["cython"], _pykernels):
        best, arg, cm = np.full(50, np.inf), np.zeros(50, np.int64), np.empty(40)
        mod.score_block(*args, best, arg, 7, cm)
        res.append((best, arg, cm))
    for x, y in zip(*res):
        np.testing.assert_array_equal(x, y)


def test_backend_switching():
    prev = kernels.BACKEND
    with kernels.using("python"):
        assert kernels.BACKEND == "python"
    assert kernels.BACKEND == prev
    with pytest.raises(ValueError):
        kernels.set_backend("fortran")
