import numpy as np
import pytest

import factorfield as ff


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_field(rng, resolution=(8, 8, 8), r_density=2, r_appearance=3, k=1,
               m=3, r_param=2, dtype=np.float64, perturb_params=True):
    """Small random field; parameter vectors nudged off 1 so p matters."""
    ranges = [(0.0, 1.0)] * k
    sizes = [m] * k
    field = ff.fresh_field(resolution, ff.Aabb([-1, -1, -1], [1, 1, 1]),
                           r_density, r_appearance, ranges, sizes, r_param,
                           rng, dtype=dtype)
    if perturb_params and k:
        for axes in (field.density_params, field.appearance_params):
            for v in axes.vectors:
                v += rng.uniform(-0.25, 0.25, v.shape).astype(dtype)
    return field


def make_decoders(field, rng, hidden=8, pe=2, sh=1, density_bias=-1.0,
                  dtype=np.float64):
    return ff.fresh_decoders(field, ff.EncodingConfig(pe, sh), hidden, rng,
                             density_bias=density_bias, dtype=dtype)


@pytest.fixture
def tiny_field(rng):
    return make_field(rng)


@pytest.fixture
def tiny_model(rng):
    field = make_field(rng)
    decoders = make_decoders(field, rng)
    return field, decoders
