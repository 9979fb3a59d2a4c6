"""Factorized (3+K)-D feature grids.

A scene is stored as two vector-matrix factorized 3D grids (density and
appearance) plus, per grid, a set of CP-factorized parameter axes.  Spatial
features at a point are the per-component products of a bilinearly sampled
plane and a linearly sampled axis vector, one block per plane/axis pairing;
parameter features are products of linearly sampled axis vectors.  All
interpolation is corner-aligned: node 0 sits at normalized -1, node N-1 at +1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# plane/axis pairings, in feature-block order: (XY, Z), (XZ, Y), (YZ, X)
PLANE_AXES = ((0, 1), (0, 2), (1, 2))
LINE_AXES = (2, 1, 0)


@dataclass
class Aabb:
    """Axis-aligned box; normalized coordinates map lo -> -1, hi -> +1."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        self.hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not (np.isfinite(self.lo).all() and np.isfinite(self.hi).all()):
            raise ValueError("aabb bounds must be finite")
        if not (self.lo < self.hi).all():
            raise ValueError(f"aabb requires lo < hi per axis, got {self.lo} .. {self.hi}")

    @property
    def extent(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """World coordinates -> [-1, 1]^3 (no clamping)."""
        return (np.asarray(x) - self.lo) * (2.0 / self.extent) - 1.0

    def denormalize(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u) + 1.0) * (0.5 * self.extent) + self.lo

    def contains(self, x: np.ndarray, slack: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        return ((x >= self.lo - slack) & (x <= self.hi + slack)).all(axis=-1)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Aabb":
        return Aabb(np.array(d["lo"]), np.array(d["hi"]))


@dataclass
class FactorizedGrid:
    """Rank-R vector-matrix factorization of a 3D feature volume.

    matrices[k] has shape (R, Na, Nb) for plane PLANE_AXES[k]; vectors[k] has
    shape (R, Nc) for axis LINE_AXES[k].  The represented per-channel volume is
    M_r(plane) * v_r(axis), blocks concatenated in PLANE_AXES order.
    """

    resolution: tuple[int, int, int]
    matrices: list[np.ndarray]
    vectors: list[np.ndarray]

    @property
    def rank(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def dtype(self):
        return self.matrices[0].dtype

    def validate(self) -> None:
        res = tuple(int(n) for n in self.resolution)
        if len(self.matrices) != 3 or len(self.vectors) != 3:
            raise ValueError("grid needs exactly three plane/axis pairs")
        r = self.rank
        for k, (pa, la) in enumerate(zip(PLANE_AXES, LINE_AXES)):
            want_m = (r, res[pa[0]], res[pa[1]])
            want_v = (r, res[la])
            if self.matrices[k].shape != want_m:
                raise ValueError(f"matrix {k} shape {self.matrices[k].shape} != {want_m}")
            if self.vectors[k].shape != want_v:
                raise ValueError(f"vector {k} shape {self.vectors[k].shape} != {want_v}")

    def copy(self) -> "FactorizedGrid":
        return FactorizedGrid(
            tuple(self.resolution),
            [m.copy() for m in self.matrices],
            [v.copy() for v in self.vectors],
        )

    def astype(self, dtype) -> "FactorizedGrid":
        return FactorizedGrid(
            tuple(self.resolution),
            [m.astype(dtype) for m in self.matrices],
            [v.astype(dtype) for v in self.vectors],
        )


@dataclass
class ParameterAxes:
    """CP factorization of the K-D parameter space.

    vectors[k] has shape (R_p, M_k); ranges[k] = (lo, hi) maps raw parameter k
    onto [0, 1] across that axis.  Fresh axes are all-ones so a new model is
    parameter-independent.
    """

    ranges: list[tuple[float, float]]
    vectors: list[np.ndarray]

    @property
    def dims(self) -> int:
        return len(self.vectors)

    @property
    def rank(self) -> int:
        return self.vectors[0].shape[0] if self.vectors else 0

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(v.shape[1] for v in self.vectors)

    def validate(self) -> None:
        if len(self.ranges) != len(self.vectors):
            raise ValueError("one (lo, hi) range per parameter axis required")
        for k, v in enumerate(self.vectors):
            if v.ndim != 2 or v.shape[1] < 2:
                raise ValueError(f"parameter axis {k} needs at least 2 nodes")
            if v.shape[0] != self.rank:
                raise ValueError("parameter axes must share one rank")
            if not np.isfinite(v).all():
                raise ValueError(f"parameter axis {k} holds non-finite weights")
            lo, hi = self.ranges[k]
            if not lo < hi:
                raise ValueError(f"parameter range {k} requires lo < hi, got ({lo}, {hi})")

    def copy(self) -> "ParameterAxes":
        return ParameterAxes([tuple(r) for r in self.ranges], [v.copy() for v in self.vectors])

    def astype(self, dtype) -> "ParameterAxes":
        return ParameterAxes([tuple(r) for r in self.ranges], [v.astype(dtype) for v in self.vectors])


@dataclass
class FactorizedField:
    """Full (3+K)-D scene representation: split density/appearance storage."""

    density: FactorizedGrid
    appearance: FactorizedGrid
    density_params: ParameterAxes
    appearance_params: ParameterAxes
    aabb: Aabb

    def validate(self) -> None:
        self.density.validate()
        self.appearance.validate()
        self.density_params.validate()
        self.appearance_params.validate()
        if tuple(self.density.resolution) != tuple(self.appearance.resolution):
            raise ValueError("density/appearance grids must share one resolution")
        if self.density_params.dims != self.appearance_params.dims:
            raise ValueError("parameter axes must share dims")
        for (a_lo, a_hi), (b_lo, b_hi) in zip(self.density_params.ranges, self.appearance_params.ranges):
            if a_lo != b_lo or a_hi != b_hi:
                raise ValueError("parameter axes must share ranges")

    @property
    def param_dims(self) -> int:
        return self.density_params.dims

    @property
    def param_ranges(self) -> list[tuple[float, float]]:
        return [tuple(r) for r in self.density_params.ranges]

    @property
    def dtype(self):
        return self.density.dtype

    def feature_length(self, which: str) -> int:
        grid, axes = self.select(which)
        return 3 * grid.rank + axes.rank

    def select(self, which: str) -> tuple[FactorizedGrid, ParameterAxes]:
        if which == "density":
            return self.density, self.density_params
        if which == "appearance":
            return self.appearance, self.appearance_params
        raise ValueError(f"unknown grid selector {which!r}")

    def copy(self) -> "FactorizedField":
        return FactorizedField(
            self.density.copy(),
            self.appearance.copy(),
            self.density_params.copy(),
            self.appearance_params.copy(),
            Aabb(self.aabb.lo.copy(), self.aabb.hi.copy()),
        )

    def astype(self, dtype) -> "FactorizedField":
        return FactorizedField(
            self.density.astype(dtype),
            self.appearance.astype(dtype),
            self.density_params.astype(dtype),
            self.appearance_params.astype(dtype),
            Aabb(self.aabb.lo.copy(), self.aabb.hi.copy()),
        )


def fresh_grid(resolution, rank: int, rng: np.random.Generator, scale: float = 0.1,
               dtype=np.float32) -> FactorizedGrid:
    """Zero-mean uniform init of the spatial factors."""
    res = tuple(int(n) for n in resolution)
    mats = [rng.uniform(-scale, scale, size=(rank, res[a], res[b])).astype(dtype)
            for a, b in PLANE_AXES]
    vecs = [rng.uniform(-scale, scale, size=(rank, res[a])).astype(dtype)
            for a in LINE_AXES]
    g = FactorizedGrid(res, mats, vecs)
    g.validate()
    return g


def fresh_axes(ranges, sizes, rank: int, dtype=np.float32) -> ParameterAxes:
    """Parameter vectors start at exactly 1: a fresh field ignores p."""
    vecs = [np.ones((rank, int(m)), dtype=dtype) for m in sizes]
    axes = ParameterAxes([tuple(map(float, r)) for r in ranges], vecs)
    if vecs:
        axes.validate()
    return axes


def fresh_field(resolution, aabb: Aabb, r_density: int, r_appearance: int,
                param_ranges, param_sizes, r_param: int,
                rng: np.random.Generator, scale: float = 0.1,
                dtype=np.float32) -> FactorizedField:
    f = FactorizedField(
        density=fresh_grid(resolution, r_density, rng, scale, dtype),
        appearance=fresh_grid(resolution, r_appearance, rng, scale, dtype),
        density_params=fresh_axes(param_ranges, param_sizes, r_param, dtype),
        appearance_params=fresh_axes(param_ranges, param_sizes, r_param, dtype),
        aabb=aabb,
    )
    f.validate()
    return f


def _line_coords(u: np.ndarray, n: int):
    """Continuous corner-aligned coordinate in [0, n-1] -> (i0, frac)."""
    i0 = np.floor(u).astype(np.intp)
    np.clip(i0, 0, n - 2, out=i0)
    return i0, u - i0


def sample_plane(mat: np.ndarray, ua: np.ndarray, ub: np.ndarray) -> np.ndarray:
    """Bilinear sample of an (R, Na, Nb) plane stack at continuous coords.

    Returns (S, R).
    """
    _, na, nb = mat.shape
    ia, fa = _line_coords(ua, na)
    ib, fb = _line_coords(ub, nb)
    fa = fa.astype(mat.dtype)
    fb = fb.astype(mat.dtype)
    m00 = mat[:, ia, ib]
    m01 = mat[:, ia, ib + 1]
    m10 = mat[:, ia + 1, ib]
    m11 = mat[:, ia + 1, ib + 1]
    top = m00 + (m01 - m00) * fb
    bot = m10 + (m11 - m10) * fb
    return (top + (bot - top) * fa).T


def sample_line(vec: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Linear sample of an (R, N) vector stack at continuous coords -> (S, R)."""
    _, n = vec.shape
    i0, f = _line_coords(u, n)
    f = f.astype(vec.dtype)
    v0 = vec[:, i0]
    v1 = vec[:, i0 + 1]
    return (v0 + (v1 - v0) * f).T


def _grid_coords(grid: FactorizedGrid, x: np.ndarray) -> np.ndarray:
    """Normalized [-1,1]^3 points -> continuous corner-aligned grid coords."""
    res = np.asarray(grid.resolution, dtype=x.dtype) if x.dtype.kind == "f" \
        else np.asarray(grid.resolution, dtype=np.float64)
    return (x + 1.0) * 0.5 * (res - 1)


def sample_spatial(grid: FactorizedGrid, x: np.ndarray) -> np.ndarray:
    """Spatial feature of points x in [-1,1]^3: three length-R product blocks.

    Block order (XY*Z, XZ*Y, YZ*X); output shape (..., 3*R).
    """
    x = np.asarray(x)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    if not np.isfinite(pts).all():
        raise ValueError("sample positions must be finite")
    u = _grid_coords(grid, pts)
    blocks = []
    for k, ((a, b), c) in enumerate(zip(PLANE_AXES, LINE_AXES)):
        m = sample_plane(grid.matrices[k], u[:, a], u[:, b])
        v = sample_line(grid.vectors[k], u[:, c])
        blocks.append(m * v)
    out = np.concatenate(blocks, axis=1)
    return out[0] if single else out


def _param_coords(axes: ParameterAxes, p: np.ndarray) -> np.ndarray:
    """Raw parameter tuples -> continuous axis coords; rejects out-of-range."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    if p.shape[1] != axes.dims:
        raise ValueError(f"expected {axes.dims} parameter values, got {p.shape[1]}")
    u = np.empty_like(p)
    for k, (lo, hi) in enumerate(axes.ranges):
        span = hi - lo
        slack = 1e-9 * span
        bad = (p[:, k] < lo - slack) | (p[:, k] > hi + slack)
        if bad.any():
            raise ParameterRangeError(k, float(p[bad, k][0]), (lo, hi))
        t = np.clip((p[:, k] - lo) / span, 0.0, 1.0)
        u[:, k] = t * (axes.sizes[k] - 1)
    return u


class ParameterRangeError(ValueError):
    """Raised for parameter queries outside the declared training range."""

    def __init__(self, axis: int, value: float, rng: tuple[float, float]):
        self.axis = axis
        self.value = value
        self.range = rng
        super().__init__(
            f"parameter {axis} value {value} outside declared range [{rng[0]}, {rng[1]}]"
        )


def sample_params(axes: ParameterAxes, p: np.ndarray) -> np.ndarray:
    """CP parameter feature: per-component product over the K axes -> (..., R_p)."""
    p = np.asarray(p)
    single = p.ndim == 1
    u = _param_coords(axes, p)
    out = np.ones((u.shape[0], axes.rank), dtype=axes.vectors[0].dtype if axes.vectors else np.float32)
    for k in range(axes.dims):
        out = out * sample_line(axes.vectors[k], u[:, k])
    return out[0] if single else out


def sample_feature(field: FactorizedField, which: str, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Concatenated [spatial blocks || parameter block] feature."""
    grid, axes = field.select(which)
    spatial = sample_spatial(grid, x)
    if axes.dims == 0:
        return spatial
    param = sample_params(axes, p)
    if spatial.ndim == 1:
        if param.ndim == 2:
            param = param[0]
        return np.concatenate([spatial, param])
    if param.ndim == 1:
        param = np.broadcast_to(param, (spatial.shape[0], param.shape[0]))
    return np.concatenate([spatial, param], axis=1)


def _resample_line(arr: np.ndarray, axis: int, new_n: int) -> np.ndarray:
    """Corner-aligned linear resampling of one axis."""
    old_n = arr.shape[axis]
    if new_n == old_n:
        return arr.copy()
    u = np.linspace(0.0, old_n - 1.0, new_n)
    i0, f = _line_coords(u, old_n)
    f = f.astype(arr.dtype)
    a0 = np.take(arr, i0, axis=axis)
    a1 = np.take(arr, i0 + 1, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = new_n
    return a0 + (a1 - a0) * f.reshape(shape)


def upsample(grid: FactorizedGrid, new_resolution) -> FactorizedGrid:
    """Grow the grid; values at coinciding old/new node coordinates persist."""
    new_res = tuple(int(n) for n in new_resolution)
    old_res = tuple(grid.resolution)
    if any(n < o for n, o in zip(new_res, old_res)):
        raise ValueError(f"upsample cannot shrink {old_res} -> {new_res}; use crop_to_aabb")
    mats = []
    for k, (a, b) in enumerate(PLANE_AXES):
        m = _resample_line(grid.matrices[k], 1, new_res[a])
        m = _resample_line(m, 2, new_res[b])
        mats.append(np.ascontiguousarray(m))
    vecs = [np.ascontiguousarray(_resample_line(grid.vectors[k], 1, new_res[a]))
            for k, a in enumerate(LINE_AXES)]
    out = FactorizedGrid(new_res, mats, vecs)
    out.validate()
    return out


def _crop_grid(grid: FactorizedGrid, t_lo: np.ndarray, t_hi: np.ndarray,
               new_res) -> FactorizedGrid:
    """Resample factors so the new grid spans the [t_lo, t_hi] sub-box (in [0,1])."""
    old_res = np.asarray(grid.resolution)
    new_res = tuple(int(n) for n in new_res)
    coords = [np.linspace(t_lo[a] * (old_res[a] - 1), t_hi[a] * (old_res[a] - 1), new_res[a])
              for a in range(3)]

    def along(arr, axis_in_arr, axis_world):
        u = coords[axis_world]
        i0, f = _line_coords(u, old_res[axis_world])
        f = f.astype(arr.dtype)
        a0 = np.take(arr, i0, axis=axis_in_arr)
        a1 = np.take(arr, i0 + 1, axis=axis_in_arr)
        shape = [1] * arr.ndim
        shape[axis_in_arr] = len(u)
        return a0 + (a1 - a0) * f.reshape(shape)

    mats = []
    for k, (a, b) in enumerate(PLANE_AXES):
        m = along(grid.matrices[k], 1, a)
        m = along(m, 2, b)
        mats.append(np.ascontiguousarray(m))
    vecs = [np.ascontiguousarray(along(grid.vectors[k], 1, a))
            for k, a in enumerate(LINE_AXES)]
    out = FactorizedGrid(new_res, mats, vecs)
    out.validate()
    return out


def crop_to_aabb(field: FactorizedField, new_aabb: Aabb, new_resolution=None) -> FactorizedField:
    """Re-anchor the field on a sub-box; values inside it are preserved.

    Default resolution keeps the old per-axis node spacing.
    """
    old = field.aabb
    if (new_aabb.lo < old.lo - 1e-9).any() or (new_aabb.hi > old.hi + 1e-9).any():
        raise ValueError("new aabb must lie inside the current aabb")
    t_lo = (new_aabb.lo - old.lo) / old.extent
    t_hi = (new_aabb.hi - old.lo) / old.extent
    if new_resolution is None:
        old_res = np.asarray(field.density.resolution)
        frac = (new_aabb.hi - new_aabb.lo) / old.extent
        new_resolution = np.maximum(2, np.rint(frac * (old_res - 1)).astype(int) + 1)
    return FactorizedField(
        density=_crop_grid(field.density, t_lo, t_hi, new_resolution),
        appearance=_crop_grid(field.appearance, t_lo, t_hi, new_resolution),
        density_params=field.density_params.copy(),
        appearance_params=field.appearance_params.copy(),
        aabb=new_aabb,
    )


def count_parameters(field: FactorizedField) -> int:
    """Exact stored-weight count of the field (decoders excluded)."""
    total = 0
    for grid in (field.density, field.appearance):
        total += sum(m.size for m in grid.matrices)
        total += sum(v.size for v in grid.vectors)
    for axes in (field.density_params, field.appearance_params):
        total += sum(v.size for v in axes.vectors)
    return int(total)
