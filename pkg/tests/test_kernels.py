"""The accelerated kernels must agree with the reference numpy paths."""

import numpy as np
import pytest

import factorfield as ff
from factorfield import _kernels as K

from conftest import make_field


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_spatial_forward_matches_sample_spatial(rng, dtype):
    field = make_field(rng, resolution=(7, 9, 11), r_density=5, dtype=dtype)
    grid = field.density
    x = rng.uniform(-1, 1, (200, 3))
    x[:4] = [[-1, -1, -1], [1, 1, 1], [-1, 1, -1], [1, -1, 1]]  # boundary hits
    want = ff.sample_spatial(grid, x.astype(dtype))
    from factorfield.field import _grid_coords
    u = _grid_coords(grid, x.astype(dtype))
    out = np.empty((200, 3 * grid.rank), dtype=dtype)
    K.spatial_forward(grid.matrices, grid.vectors, u, out)
    atol = 1e-5 if dtype == np.float32 else 1e-12
    assert np.allclose(out, want, atol=atol)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_numpy_fallback_matches_accelerated(rng, dtype):
    field = make_field(rng, resolution=(6, 6, 6), r_density=3, dtype=dtype)
    grid = field.density
    from factorfield.field import _grid_coords
    x = rng.uniform(-1, 1, (64, 3)).astype(dtype)
    u = _grid_coords(grid, x)
    a = np.empty((64, 9), dtype=dtype)
    b = np.empty((64, 9), dtype=dtype)
    K.spatial_forward(grid.matrices, grid.vectors, u, a)
    K._np_spatial_forward(*grid.matrices, *grid.vectors, u, b)
    assert np.allclose(a, b, atol=1e-5 if dtype == np.float32 else 1e-12)


def test_spatial_backward_matches_numpy_fallback(rng):
    field = make_field(rng, resolution=(6, 7, 8), r_density=4, dtype=np.float64)
    grid = field.density
    from factorfield.field import _grid_coords
    x = rng.uniform(-1, 1, (120, 3))
    u = _grid_coords(grid, x)
    g = rng.normal(size=(120, 12))

    def run(backend):
        gm = [np.zeros_like(m) for m in grid.matrices]
        gv = [np.zeros_like(v) for v in grid.vectors]
        if backend == "accel":
            K.spatial_backward(grid.matrices, grid.vectors, u,
                               np.ascontiguousarray(g), gm, gv)
        else:
            K._np_spatial_backward(*grid.matrices, *grid.vectors, u,
                                   np.ascontiguousarray(g), *gm, *gv)
        return gm, gv

    gm_a, gv_a = run("accel")
    gm_b, gv_b = run("numpy")
    for a, b in zip(gm_a + gv_a, gm_b + gv_b):
        assert np.allclose(a, b, atol=1e-10)


def test_spatial_backward_deterministic_across_calls(rng):
    field = make_field(rng, resolution=(8, 8, 8), r_density=4, dtype=np.float32)
    grid = field.density
    from factorfield.field import _grid_coords
    u = _grid_coords(grid, rng.uniform(-1, 1, (5000, 3)).astype(np.float32))
    g = rng.normal(size=(5000, 12)).astype(np.float32)

    def run():
        gm = [np.zeros_like(m) for m in grid.matrices]
        gv = [np.zeros_like(v) for v in grid.vectors]
        K.spatial_backward(grid.matrices, grid.vectors, u, np.ascontiguousarray(g),
                           gm, gv)
        return gm + gv

    first = run()
    for _ in range(3):
        again = run()
        assert all(np.array_equal(a, b) for a, b in zip(first, again))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_bias_relu_paths_agree(rng, dtype):
    z = rng.normal(size=(50, 16)).astype(dtype)
    b = rng.normal(size=16).astype(dtype)
    a1 = z.copy()
    a2 = z.copy()
    K.bias_relu(a1, b)
    K._np_bias_relu(a2, b)
    assert np.array_equal(a1, a2)
    assert (a1 >= 0).all()


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_relu_backward_paths_agree(rng, dtype):
    h = np.maximum(rng.normal(size=(50, 16)), 0).astype(dtype)
    g = rng.normal(size=(50, 16)).astype(dtype)
    g1 = g.copy()
    g2 = g.copy()
    K.relu_backward(g1, h)
    K._np_relu_backward(g2, h)
    assert np.array_equal(g1, g2)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_pe_forward_paths_agree(rng, dtype):
    x = rng.uniform(-2, 2, (40, 3)).astype(dtype)
    a = np.empty((40, 3 + 6 * 5), dtype=dtype)
    b = np.empty_like(a)
    K.pe_forward(x, 5, a)
    K._np_pe_forward(x, 5, b)
    # double-angle recurrence vs libm: equal to accumulated rounding
    tol = 2e-5 if dtype == np.float32 else 1e-12
    assert np.abs(a - b).max() < tol
