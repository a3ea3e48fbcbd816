"""Numba and numpy kernel backends must agree bit for bit."""

import numpy as np
import pytest

from coopsim import kernels

pytestmark = pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not importable")


def both(name):
    return kernels.implementation(name, "numpy"), kernels.implementation(name, "numba")


@pytest.mark.parametrize("seed", range(20))
def test_hungarian_backends_agree(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 9))
    cost = rng.integers(0, 5, (n, n)).astype(np.float64) if seed % 2 else rng.random((n, n))
    np_impl, nb_impl = both("hungarian")
    a = np_impl(cost.copy())
    b = nb_impl(cost.copy())
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


@pytest.mark.parametrize("seed", range(10))
def test_hungarian_duals_certify_optimality(seed):
    rng = np.random.default_rng(100 + seed)
    cost = rng.random((6, 6))
    assign, u, v = kernels.hungarian_square(cost)
    reduced = cost - u[:, None] - v[None, :]
    assert reduced.min() >= -1e-12
    assert np.allclose(reduced[np.arange(6), assign], 0.0, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("nearest", [False, True])
def test_sample_grid_backends_agree(seed, nearest):
    rng = np.random.default_rng(seed)
    src = rng.random((30, 40))
    yaw = rng.uniform(-np.pi, np.pi)
    c, s = np.cos(yaw), np.sin(yaw)
    args = (src, -5.0, -3.0, 0.5, 25, 35, -4.0, -6.0, 0.5, c, -s, s, c,
            float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3)), nearest)
    np_impl, nb_impl = both("sample_grid")
    assert np.array_equal(np_impl(*args), nb_impl(*args))


@pytest.mark.parametrize("seed", range(10))
def test_box_kernels_backends_agree(seed):
    rng = np.random.default_rng(seed)
    boxes = np.column_stack([rng.uniform(-20, 20, 6), rng.uniform(-20, 20, 6),
                             rng.uniform(-np.pi, np.pi, 6), rng.uniform(0.5, 6, 6),
                             rng.uniform(0.5, 3, 6)])
    np_r, nb_r = both("rasterize_boxes")
    m1 = np_r(boxes, -25.0, -25.0, 0.5, 100, 100)
    assert np.array_equal(m1, nb_r(boxes, -25.0, -25.0, 0.5, 100, 100))
    mask = rng.random((100, 100)) < 0.1
    np_h, nb_h = both("box_hits")
    assert np.array_equal(np_h(mask, boxes, -25.0, -25.0, 0.5), nb_h(mask, boxes, -25.0, -25.0, 0.5))


@pytest.mark.parametrize("seed", range(10))
def test_segment_raster_backends_agree(seed):
    rng = np.random.default_rng(seed)
    segs = rng.uniform(-20, 20, (5, 4))
    np_impl, nb_impl = both("rasterize_segments")
    assert np.array_equal(np_impl(segs, 0.5, -25.0, -25.0, 0.5, 100, 100),
                          nb_impl(segs, 0.5, -25.0, -25.0, 0.5, 100, 100))


def test_box_hits_counts_cells_inside():
    mask = np.zeros((10, 10), dtype=bool)
    mask[4:6, 4:6] = True
    hits = kernels.box_hits(mask, np.array([[5.0, 5.0, 0.0, 2.0, 2.0], [0.5, 0.5, 0.0, 0.9, 0.9]]),
                            (0.0, 0.0), 1.0)
    assert hits.tolist() == [4, 0]


def test_set_backend_round_trip():
    prev = kernels.set_backend("numpy")
    try:
        assert kernels.BACKEND == "numpy"
        with pytest.raises(ValueError):
            kernels.set_backend("fortran")
    finally:
        kernels.set_backend(prev)
