"""Shared forward pipeline: ray samples -> features -> decoders -> compositing.

The same code path serves inference (``record=False``) and training, where the
recorded :class:`ForwardTrace` feeds the hand-derived backward pass in
:mod:`factorfield.grad`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._kernels import pe_forward, spatial_forward
from .decoder import DecoderPair, sigmoid, softplus
from .encoding import sh_encoding
from .field import FactorizedField, _grid_coords, _param_coords, sample_line
from .render import (
    MaskVolume,
    Rays,
    RenderConfig,
    _importance_batch,
    composite_segments,
    exclusive_cumsum_segments,
    intersect_aabb_batch,
    stratified_samples_batch,
)


@dataclass
class SampleBatch:
    """Flat per-ray sample runs (ray_ids ascending) plus ray geometry."""

    origins: np.ndarray    # (B, 3)
    dirs: np.ndarray       # (B, 3) unit
    params: np.ndarray     # (B, K) raw parameter tuples
    ray_ids: np.ndarray    # (S,)
    t: np.ndarray          # (S,) depths along the ray
    deltas: np.ndarray     # (S,) step sizes (world units)
    slots: np.ndarray      # (S,) index of the sample in its ray's ladder
    n_rays: int
    n_slots: int

    @property
    def n_samples(self) -> int:
        return self.t.shape[0]


@dataclass
class ForwardTrace:
    """Everything the backward pass needs that is cheaper stored than rebuilt."""

    batch: SampleBatch
    x_norm: np.ndarray      # (S, 3) normalized positions, field dtype
    u_params: np.ndarray    # (S, K) continuous param-axis coords
    x_in_d: np.ndarray      # density MLP input
    h_d: np.ndarray         # density hidden activations (post-ReLU)
    x_in_c: np.ndarray      # color MLP input
    h_c: np.ndarray
    sigma: np.ndarray       # (S,)
    rgb_samples: np.ndarray  # (S, 3)
    trans: np.ndarray       # (S,) transmittance before each sample
    weights: np.ndarray     # (S,)
    t_final: np.ndarray     # (B,)
    background: np.ndarray
    spatial_rank: dict      # which -> rank, for input splitting


def ladder_deltas(t2d: np.ndarray, t_far: np.ndarray) -> np.ndarray:
    """Step sizes over a full (B, n) sample ladder; last step reaches t_far."""
    d = np.empty_like(t2d)
    d[:, :-1] = t2d[:, 1:] - t2d[:, :-1]
    d[:, -1] = t_far - t2d[:, -1]
    return np.maximum(d, 0.0)


def flatten_ladder(t2d: np.ndarray, deltas2d: np.ndarray, keep: np.ndarray,
                   origins: np.ndarray, dirs: np.ndarray, params: np.ndarray) -> SampleBatch:
    """Drop masked-out ladder entries and flatten to per-ray runs."""
    b, n = t2d.shape
    ray_ids, slots = np.nonzero(keep)
    return SampleBatch(
        origins=origins,
        dirs=dirs,
        params=params,
        ray_ids=ray_ids,
        t=t2d[ray_ids, slots],
        deltas=deltas2d[ray_ids, slots],
        slots=slots,
        n_rays=b,
        n_slots=n,
    )


def build_sample_batch(field: FactorizedField, origins: np.ndarray, dirs: np.ndarray,
                       params: np.ndarray, n_samples: int, jitter: bool,
                       rng: Optional[np.random.Generator],
                       mask: Optional[MaskVolume] = None):
    """Stratified ladder clipped to the field AABB, mask-culled and flattened.

    Returns (batch, hit, t0, t1, t2d) where batch covers only hit rays.
    """
    t0, t1, hit = intersect_aabb_batch(origins, dirs, field.aabb)
    o, d, p = origins[hit], dirs[hit], params[hit]
    t0h, t1h = t0[hit], t1[hit]
    t2d = stratified_samples_batch(t0h, t1h, n_samples, jitter, rng)
    deltas2d = ladder_deltas(t2d, t1h)
    keep = np.ones(t2d.shape, dtype=bool)
    if mask is not None:
        pts = o[:, None, :] + t2d[..., None] * d[:, None, :]
        keep = mask.lookup(pts.reshape(-1, 3)).reshape(t2d.shape)
    batch = flatten_ladder(t2d, deltas2d, keep, o, d, p)
    return batch, hit, t0h, t1h, t2d


def add_importance_samples(field: FactorizedField, batch: SampleBatch,
                           first_weights: np.ndarray, t0: np.ndarray, t1: np.ndarray,
                           n_extra: int, rng: np.random.Generator,
                           mask: Optional[MaskVolume] = None) -> SampleBatch:
    """Union of the uniform ladder with inverse-CDF draws from its weights."""
    b, n = batch.n_rays, batch.n_slots
    w2d = np.zeros((b, n), dtype=np.float64)
    w2d[batch.ray_ids, batch.slots] = first_weights
    edges = t0[:, None] + np.linspace(0.0, 1.0, n + 1)[None, :] * (t1 - t0)[:, None]
    t_extra = _importance_batch(edges, w2d, n_extra, rng)
    # rebuild the full per-ray ladder: sorted union of uniform + importance;
    # culled uniform slots come back as bin midpoints so deltas stay local
    t_uniform = np.empty((b, n), dtype=np.float64)
    t_uniform.fill(np.nan)
    t_uniform[batch.ray_ids, batch.slots] = batch.t
    missing = np.isnan(t_uniform)
    if missing.any():
        mids = edges[:, :-1] + 0.5 * np.diff(edges, axis=1)
        t_uniform[missing] = mids[missing]
    t_union = np.sort(np.concatenate([t_uniform, t_extra], axis=1), axis=1)
    deltas2d = ladder_deltas(t_union, t1)
    keep = np.ones(t_union.shape, dtype=bool)
    if mask is not None:
        pts = batch.origins[:, None, :] + t_union[..., None] * batch.dirs[:, None, :]
        keep = mask.lookup(pts.reshape(-1, 3)).reshape(t_union.shape)
    return flatten_ladder(t_union, deltas2d, keep, batch.origins, batch.dirs, batch.params)


def _decoder_input(grid, axes, u_sp: np.ndarray, u_par_s: Optional[np.ndarray],
                   tail_width: int, dtype) -> tuple[np.ndarray, int]:
    """Preallocated [spatial blocks || param product || tail] input buffer.

    The tail slice is left for the caller to fill; returns (buffer, tail offset).
    """
    s = u_sp.shape[0]
    r = grid.rank
    rp = axes.rank if (axes is not None and axes.dims) else 0
    out = np.empty((s, 3 * r + rp + tail_width), dtype=dtype)
    spatial_forward(grid.matrices, grid.vectors, u_sp, out[:, :3 * r])
    if rp:
        prod = out[:, 3 * r:3 * r + rp]
        prod[:] = sample_line(axes.vectors[0], u_par_s[:, 0])
        for k in range(1, axes.dims):
            prod *= sample_line(axes.vectors[k], u_par_s[:, k])
    return out, 3 * r + rp


def forward_samples(field: FactorizedField, decoders: DecoderPair, batch: SampleBatch,
                    background, record: bool = False, density_only: bool = False):
    """Decode and composite a sample batch.

    Returns (rgb (B,3), weights (S,), t_final (B,), trace or None).
    """
    dtype = field.dtype
    bg = np.asarray(background, dtype=dtype)
    enc = decoders.encoding
    if batch.n_samples == 0:
        rgb = np.broadcast_to(bg, (batch.n_rays, 3)).astype(dtype).copy()
        ones = np.ones(batch.n_rays, dtype=dtype)
        return rgb, np.zeros(0, dtype=dtype), ones, None

    rid = batch.ray_ids
    x_world = batch.origins[rid] + batch.t[:, None] * batch.dirs[rid]
    x_norm = np.clip(field.aabb.normalize(x_world), -1.0, 1.0).astype(dtype)
    u_sp = _grid_coords(field.density, x_norm)
    if field.param_dims:
        u_par_s = _param_coords(field.density_params, batch.params).astype(dtype)[rid]
    else:
        u_par_s = None
    deltas = batch.deltas.astype(dtype)

    # density branch
    x_in_d, off = _decoder_input(field.density, field.density_params, u_sp, u_par_s,
                                 enc.pe_length, dtype)
    pe_forward(x_world.astype(dtype), enc.pe_frequencies, x_in_d[:, off:])
    raw_d, h_d = decoders.density_mlp.forward(x_in_d, return_hidden=True)
    sigma = softplus(raw_d[:, 0])

    if density_only:
        a = sigma * deltas
        trans = np.exp(-exclusive_cumsum_segments(a, rid, batch.n_rays))
        weights = trans * (-np.expm1(-a))
        t_final = np.exp(-np.bincount(rid, weights=a, minlength=batch.n_rays)).astype(dtype)
        return None, weights, t_final, None

    # appearance branch
    x_in_c, off = _decoder_input(field.appearance, field.appearance_params, u_sp, u_par_s,
                                 enc.sh_length, dtype)
    sh_rays = sh_encoding(batch.dirs, enc.sh_degree).astype(dtype)
    x_in_c[:, off:] = sh_rays[rid]
    raw_c, h_c = decoders.color_mlp.forward(x_in_c, return_hidden=True)
    rgb_samples = sigmoid(raw_c)

    rgb, weights, t_final = composite_segments(sigma, rgb_samples, deltas, rid,
                                               batch.n_rays, bg)
    if not record:
        return rgb, weights, t_final, None

    trans = np.exp(-exclusive_cumsum_segments(sigma * deltas, rid, batch.n_rays))
    trace = ForwardTrace(
        batch=batch, x_norm=x_norm,
        u_params=u_par_s if u_par_s is not None else np.zeros((batch.n_samples, 0), dtype=dtype),
        x_in_d=x_in_d, h_d=h_d, x_in_c=x_in_c, h_c=h_c,
        sigma=sigma, rgb_samples=rgb_samples, trans=trans.astype(dtype),
        weights=weights, t_final=t_final, background=bg,
        spatial_rank={"density": field.density.rank, "appearance": field.appearance.rank},
    )
    return rgb, weights, t_final, trace


def render_rays(field: FactorizedField, decoders: DecoderPair, rays: Rays,
                params: np.ndarray, config: RenderConfig,
                mask: Optional[MaskVolume] = None,
                rng: Optional[np.random.Generator] = None):
    """Inference path: stratified pass, optional importance pass, background fill.

    Returns (rgb (N,3) float64, hit (N,) bool).
    """
    n = len(rays)
    bg = np.asarray(config.background, dtype=np.float64)
    out = np.tile(bg, (n, 1))
    batch, hit, t0, t1, _ = build_sample_batch(
        field, rays.origins, rays.directions, np.asarray(params, dtype=np.float64),
        config.n_samples, config.jitter, rng, mask)
    if not hit.any():
        return out, hit
    if config.n_importance > 0:
        _, w1, _, _ = forward_samples(field, decoders, batch, bg, density_only=True)
        imp_rng = rng if rng is not None else np.random.default_rng(0)
        batch = add_importance_samples(field, batch, w1, t0, t1,
                                       config.n_importance, imp_rng, mask)
    rgb, _, _, _ = forward_samples(field, decoders, batch, bg)
    out[hit] = rgb.astype(np.float64)
    return out, hit


def eval_density_grid(field: FactorizedField, decoders: DecoderPair, lattice,
                      p, chunk: int = 131072) -> np.ndarray:
    """Density on a corner-aligned normalized lattice; used for masking."""
    gx, gy, gz = (int(v) for v in lattice)
    axes = [np.linspace(-1.0, 1.0, g) for g in (gx, gy, gz)]
    xs, ys, zs = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    enc = decoders.encoding
    dtype = field.dtype
    out = np.empty(pts.shape[0], dtype=dtype)
    if field.param_dims:
        u_par_row = _param_coords(field.density_params, p[None]).astype(dtype)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        xn = pts[lo:hi].astype(dtype)
        u_sp = _grid_coords(field.density, xn)
        u_par_s = np.broadcast_to(u_par_row, (hi - lo, field.param_dims)) \
            if field.param_dims else None
        x_in, off = _decoder_input(field.density, field.density_params, u_sp, u_par_s,
                                   enc.pe_length, dtype)
        x_world = field.aabb.denormalize(pts[lo:hi]).astype(dtype)
        pe_forward(x_world, enc.pe_frequencies, x_in[:, off:])
        raw = decoders.density_mlp.forward(x_in)
        out[lo:hi] = softplus(raw[:, 0])
    return out.reshape(gx, gy, gz)
