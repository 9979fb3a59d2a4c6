"""Camera model, ray sampling, compositing, and acceleration structures."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .decoder import DecoderPair
from .field import Aabb, FactorizedField


@dataclass
class Camera:
    """Pinhole camera; pose is camera-to-world, looking along -z, y up."""

    pose: np.ndarray  # (4, 4)
    focal: float
    width: int
    height: int

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64).reshape(4, 4)
        rot = self.pose[:3, :3]
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-5:
            raise ValueError("camera rotation block must be orthonormal")
        if not self.focal > 0:
            raise ValueError("focal length must be positive")

    @property
    def position(self) -> np.ndarray:
        return self.pose[:3, 3]


@dataclass
class Rays:
    """A batch of rays (unit directions)."""

    origins: np.ndarray     # (N, 3)
    directions: np.ndarray  # (N, 3)

    def __len__(self) -> int:
        return self.origins.shape[0]


@dataclass
class RenderConfig:
    n_samples: int = 96
    n_importance: int = 0
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sigma_threshold: float = 1e-3
    jitter: bool = False
    chunk_rays: int = 8192

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (3,) or (bg < 0).any() or (bg > 1).any():
            raise ValueError("background must be rgb in [0,1]^3")


def generate_rays(camera: Camera) -> Rays:
    """One ray per pixel, row-major; pixel centers at (i,j)+0 offsets so the
    center pixel of an odd-sized image looks exactly along -z."""
    h, w, f = camera.height, camera.width, camera.focal
    j, i = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [(j - (w - 1) / 2.0) / f, -(i - (h - 1) / 2.0) / f, -np.ones_like(j, dtype=np.float64)],
        axis=-1,
    ).reshape(-1, 3)
    dirs = dirs_cam @ camera.pose[:3, :3].T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.position, dirs.shape).copy()
    return Rays(origins, dirs)


def intersect_aabb_batch(origins: np.ndarray, directions: np.ndarray, aabb: Aabb):
    """Slab intersection clipped to t >= 0; returns (t_near, t_far, hit)."""
    d = np.where(np.abs(directions) < 1e-12, 1e-12, directions)
    inv = 1.0 / d
    t_a = (aabb.lo - origins) * inv
    t_b = (aabb.hi - origins) * inv
    t_lo = np.minimum(t_a, t_b).max(axis=-1)
    t_hi = np.maximum(t_a, t_b).min(axis=-1)
    t_near = np.maximum(t_lo, 0.0)
    hit = t_near < t_hi
    return t_near, t_hi, hit


def intersect_aabb(origin: np.ndarray, direction: np.ndarray, aabb: Aabb) -> Optional[tuple[float, float]]:
    """Single-ray slab test; None on miss."""
    t0, t1, hit = intersect_aabb_batch(np.asarray(origin, dtype=np.float64)[None],
                                       np.asarray(direction, dtype=np.float64)[None], aabb)
    if not hit[0]:
        return None
    return float(t0[0]), float(t1[0])


def stratified_samples(t_near: float, t_far: float, n: int,
                       jitter: bool = False, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """One depth per equal bin; bin centers when jitter is off."""
    if not t_near < t_far:
        raise ValueError("t_near must be < t_far")
    if n < 2:
        raise ValueError("need at least 2 samples")
    return stratified_samples_batch(np.array([t_near]), np.array([t_far]), n, jitter, rng)[0]


def stratified_samples_batch(t0: np.ndarray, t1: np.ndarray, n: int,
                             jitter: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
    """(B,) near/far bounds -> (B, n) strictly increasing depths."""
    edges = np.linspace(0.0, 1.0, n + 1)
    if jitter:
        if rng is None:
            raise ValueError("jittered sampling needs an rng")
        offs = rng.uniform(0.0, 1.0, size=(t0.shape[0], n))
    else:
        offs = 0.5
    frac = edges[:-1] + offs / n
    return t0[:, None] + frac * (t1 - t0)[:, None]


def importance_samples(bin_edges: np.ndarray, weights: np.ndarray, n_extra: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Inverse-CDF draws from the piecewise-constant density given by weights.

    All-zero weights fall back to a uniform draw over the full span.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != edges.shape[0] - 1:
        raise ValueError("need one weight per bin")
    if (w < 0).any():
        raise ValueError("weights must be non-negative")
    out = _importance_batch(edges[None], w[None], n_extra, rng)[0]
    return np.sort(out)


def _importance_batch(edges: np.ndarray, weights: np.ndarray, n_extra: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(B, n+1) edges, (B, n) weights -> (B, n_extra) draws (unsorted)."""
    b, n = weights.shape
    total = weights.sum(axis=1, keepdims=True)
    uniform = np.full((b, n), 1.0 / n)
    pdf = np.where(total > 0, weights / np.where(total > 0, total, 1.0), uniform)
    cdf = np.cumsum(pdf, axis=1)
    cdf[:, -1] = 1.0  # guard cumulative roundoff
    u = rng.uniform(0.0, 1.0, size=(b, n_extra))
    # row-offset trick: one searchsorted over a flattened, strictly increasing cdf
    row = np.arange(b)[:, None]
    idx = np.searchsorted((cdf + 2.0 * row).ravel(), (u + 2.0 * row).ravel(), side="left")
    idx = idx.reshape(b, n_extra) - row * n
    idx = np.clip(idx, 0, n - 1)
    lo_cdf = np.where(idx > 0, np.take_along_axis(cdf, np.maximum(idx - 1, 0), axis=1), 0.0)
    hi_cdf = np.take_along_axis(cdf, idx, axis=1)
    denom = np.where(hi_cdf > lo_cdf, hi_cdf - lo_cdf, 1.0)
    frac = (u - lo_cdf) / denom
    left = np.take_along_axis(edges, idx, axis=1)
    right = np.take_along_axis(edges, idx + 1, axis=1)
    return left + frac * (right - left)


# ---------------------------------------------------------------------------
# flat per-ray segment compositing


def segment_starts(ray_ids: np.ndarray, n_rays: int) -> np.ndarray:
    """First flat index of every ray's sample run (ray_ids sorted ascending)."""
    return np.searchsorted(ray_ids, np.arange(n_rays))


def exclusive_cumsum_segments(values: np.ndarray, ray_ids: np.ndarray, n_rays: int) -> np.ndarray:
    if len(values) == 0:
        return values.copy()
    cs = np.cumsum(values)
    # rays whose samples were all culled get a garbage base; it is never read
    # because ray_ids only names non-empty segments
    starts = np.minimum(segment_starts(ray_ids, n_rays), len(values) - 1)
    base = cs[starts] - values[starts]
    return cs - values - base[ray_ids]


def suffix_sum_segments(values: np.ndarray, ray_ids: np.ndarray, n_rays: int) -> np.ndarray:
    """Per-segment sum of strictly-later entries."""
    totals = np.bincount(ray_ids, weights=values, minlength=n_rays).astype(values.dtype)
    incl = exclusive_cumsum_segments(values, ray_ids, n_rays) + values
    return totals[ray_ids] - incl


def composite_segments(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
                       ray_ids: np.ndarray, n_rays: int, background: np.ndarray):
    """Emission-absorption quadrature over flat per-ray sample runs.

    Returns (rgb (n_rays, 3), weights (S,), t_final (n_rays,)).  Rays with no
    samples resolve to the background.
    """
    dtype = sigmas.dtype
    a = sigmas * deltas
    cum = exclusive_cumsum_segments(a, ray_ids, n_rays)
    trans = np.exp(-cum)
    alpha = -np.expm1(-a)
    weights = trans * alpha
    t_final = np.exp(-np.bincount(ray_ids, weights=a, minlength=n_rays)).astype(dtype)
    rgb = np.empty((n_rays, 3), dtype=dtype)
    wc = weights[:, None] * colors
    for ch in range(3):
        rgb[:, ch] = np.bincount(ray_ids, weights=wc[:, ch], minlength=n_rays)
    rgb += t_final[:, None] * np.asarray(background, dtype=dtype)
    return rgb, weights, t_final


def composite(sigmas: np.ndarray, colors: np.ndarray, deltas: np.ndarray,
              background) -> tuple[np.ndarray, np.ndarray, float]:
    """Single-ray compositing: alpha_i = 1-exp(-sigma_i delta_i), front to back."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    colors = np.atleast_2d(np.asarray(colors, dtype=np.float64))
    deltas = np.asarray(deltas, dtype=np.float64)
    if (sigmas < 0).any() or (deltas < 0).any():
        raise ValueError("sigmas and deltas must be non-negative")
    n = sigmas.shape[0]
    ray_ids = np.zeros(n, dtype=np.intp)
    rgb, weights, t_final = composite_segments(
        sigmas, colors, deltas, ray_ids, 1, np.asarray(background, dtype=np.float64))
    return rgb[0], weights, float(t_final[0])


# ---------------------------------------------------------------------------
# occupancy mask


@dataclass
class MaskVolume:
    """Binary occupancy over a world-anchored cell grid."""

    resolution: tuple[int, int, int]
    bits: np.ndarray  # bool (Gx, Gy, Gz)
    aabb: Aabb

    def occupied_fraction(self) -> float:
        return float(self.bits.mean())

    def lookup(self, x_world: np.ndarray) -> np.ndarray:
        """True where points fall in occupied cells (outside the box: False)."""
        x = np.atleast_2d(x_world)
        g = np.asarray(self.resolution)
        t = (x - self.aabb.lo) / self.aabb.extent
        inside = ((t >= 0.0) & (t <= 1.0)).all(axis=1)
        idx = np.clip((t * g).astype(np.intp), 0, g - 1)
        out = np.zeros(x.shape[0], dtype=bool)
        sel = inside
        out[sel] = self.bits[idx[sel, 0], idx[sel, 1], idx[sel, 2]]
        return out

    def occupied_aabb(self, margin_cells: int = 1) -> Optional[Aabb]:
        """World box of occupied cells, padded by whole cells; None when empty."""
        occ = np.argwhere(self.bits)
        if occ.size == 0:
            return None
        g = np.asarray(self.resolution)
        lo_cell = np.maximum(occ.min(axis=0) - margin_cells, 0)
        hi_cell = np.minimum(occ.max(axis=0) + 1 + margin_cells, g)
        cell = self.aabb.extent / g
        return Aabb(self.aabb.lo + lo_cell * cell, self.aabb.lo + hi_cell * cell)


def _dilate(bits: np.ndarray) -> np.ndarray:
    out = bits.copy()
    for axis in range(3):
        shifted = np.zeros_like(bits)
        sl_a = [slice(None)] * 3
        sl_b = [slice(None)] * 3
        sl_a[axis] = slice(1, None)
        sl_b[axis] = slice(None, -1)
        shifted[tuple(sl_a)] |= out[tuple(sl_b)]
        shifted[tuple(sl_b)] |= out[tuple(sl_a)]
        out |= shifted
    return out


def build_mask(field: FactorizedField, decoders: DecoderPair, resolution,
               sigma_threshold: float, param_samples) -> MaskVolume:
    """Occupancy from corner density maxima over all given parameter tuples.

    A cell is occupied when any of its 8 corners exceeds the threshold for any
    parameter sample; the result is dilated by one cell.
    """
    from .pipeline import eval_density_grid  # local import breaks module cycle

    param_samples = np.atleast_2d(np.asarray(param_samples, dtype=np.float64))
    if param_samples.shape[0] == 0:
        raise ValueError("need at least one parameter sample")
    g = tuple(int(v) for v in resolution)
    corner_max = None
    for p in param_samples:
        sig = eval_density_grid(field, decoders, (g[0] + 1, g[1] + 1, g[2] + 1), p)
        corner_max = sig if corner_max is None else np.maximum(corner_max, sig)
    occ_corner = corner_max > sigma_threshold
    cells = np.zeros(g, dtype=bool)
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                cells |= occ_corner[dx:dx + g[0], dy:dy + g[1], dz:dz + g[2]]
    return MaskVolume(g, _dilate(cells), Aabb(field.aabb.lo.copy(), field.aabb.hi.copy()))


def render_image(field: FactorizedField, decoders: DecoderPair, camera: Camera,
                 p, config: RenderConfig, mask: Optional[MaskVolume] = None,
                 rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Render an (height, width, 3) float image in [0, 1]."""
    from .pipeline import render_rays  # local import breaks module cycle

    rays = generate_rays(camera)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    bg = np.asarray(config.background, dtype=np.float64)
    image = np.empty((len(rays), 3), dtype=np.float64)
    if config.jitter and rng is None:
        rng = np.random.default_rng(0)
    for lo in range(0, len(rays), config.chunk_rays):
        hi = min(lo + config.chunk_rays, len(rays))
        chunk = Rays(rays.origins[lo:hi], rays.directions[lo:hi])
        params = np.broadcast_to(p, (hi - lo, p.shape[0]))
        rgb, _ = render_rays(field, decoders, chunk, params, config, mask=mask, rng=rng)
        image[lo:hi] = rgb
    return np.clip(image, 0.0, 1.0).reshape(camera.height, camera.width, 3)
