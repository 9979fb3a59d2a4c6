"""Synthetic scene datasets: camera protocols, analytic volumes, and the
reference raymarcher that doubles as data generator and test oracle."""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .field import Aabb
from .render import Camera, generate_rays, intersect_aabb_batch

_UP = np.array([0.0, 1.0, 0.0])
# azimuthal nudge applied to the up vector at the poles (gimbal degeneracy)
_POLE_NUDGE = 1e-4


def look_at_pose(position, target, up=_UP) -> np.ndarray:
    """Camera-to-world pose at `position` looking at `target` (-z forward)."""
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    z = position - target
    z = z / np.linalg.norm(z)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-8:
        nudged = np.array([np.sin(_POLE_NUDGE), np.cos(_POLE_NUDGE), 0.0])
        x = np.cross(nudged, z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    pose = np.eye(4)
    pose[:3, 0] = x
    pose[:3, 1] = y
    pose[:3, 2] = z
    pose[:3, 3] = position
    return pose


def azel_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.cos(el) * np.sin(az), np.sin(el), np.cos(el) * np.cos(az)])


def pose_from_azel(azimuth_deg: float, elevation_deg: float, radius: float,
                   look_at=(0.0, 0.0, 0.0)) -> np.ndarray:
    look_at = np.asarray(look_at, dtype=np.float64)
    return look_at_pose(look_at + radius * azel_direction(azimuth_deg, elevation_deg), look_at)


# ---------------------------------------------------------------------------
# icosphere protocol

_PHI = (1.0 + np.sqrt(5.0)) / 2.0
_ICO_VERTS = np.array([
    (-1, _PHI, 0), (1, _PHI, 0), (-1, -_PHI, 0), (1, -_PHI, 0),
    (0, -1, _PHI), (0, 1, _PHI), (0, -1, -_PHI), (0, 1, -_PHI),
    (_PHI, 0, -1), (_PHI, 0, 1), (-_PHI, 0, -1), (-_PHI, 0, 1),
], dtype=np.float64)
_ICO_FACES = np.array([
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
], dtype=np.intp)


def icosphere_vertices(level: int) -> np.ndarray:
    """Unit vertices of the geodesic icosphere; counts 12/42/92/162/252.

    Level L splits each icosahedron edge into L+1 segments, so the vertex
    count is 10*(L+1)^2 + 2.
    """
    if not 0 <= level <= 4:
        raise ValueError("subdivision level must be in [0, 4]")
    nu = level + 1
    pts = []
    base = _ICO_VERTS / np.linalg.norm(_ICO_VERTS[0])
    for fa, fb, fc in _ICO_FACES:
        a, b, c = base[fa], base[fb], base[fc]
        for i in range(nu + 1):
            for j in range(nu + 1 - i):
                k = nu - i - j
                pts.append((i * a + j * b + k * c) / nu)
    pts = np.asarray(pts)
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    # shared edge/corner points are bitwise equal across faces; round defensively
    _, idx = np.unique(np.round(pts, 9), axis=0, return_index=True)
    return pts[np.sort(idx)]


def icosphere_cameras(level: int, radius: float, look_at=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """One pose per unique icosphere vertex, all looking at `look_at`."""
    look_at = np.asarray(look_at, dtype=np.float64)
    return [look_at_pose(look_at + radius * v, look_at) for v in icosphere_vertices(level)]


def inference_path(n_views: int, azimuth_range=(-180.0, 180.0),
                   elevation_range=(-90.0, 90.0), radius: float = 3.0,
                   look_at=(0.0, 0.0, 0.0)) -> list[np.ndarray]:
    """Spherical sweep with azimuth and elevation varying linearly end-to-end."""
    if n_views < 2:
        raise ValueError("need at least 2 views")
    azs = np.linspace(azimuth_range[0], azimuth_range[1], n_views)
    els = np.linspace(elevation_range[0], elevation_range[1], n_views)
    return [pose_from_azel(a, e, radius, look_at) for a, e in zip(azs, els)]


# ---------------------------------------------------------------------------
# analytic volumes and transfer functions


@dataclass
class AnalyticVolume:
    """Closed-form scalar field in [0,1] over its AABB, optionally driven by
    up to three parameters (center shift, radius scale, secondary amplitude)."""

    kind: str
    centers: np.ndarray
    radii: np.ndarray
    amplitudes: np.ndarray
    param_dims: int = 0
    move_dir: np.ndarray = dc_field(default_factory=lambda: np.array([0.8, 0.0, 0.0]))
    shell_thickness: float = 0.12
    aabb: Aabb = dc_field(default_factory=lambda: Aabb(np.full(3, -1.0), np.full(3, 1.0)))

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64).reshape(-1)
        self.move_dir = np.asarray(self.move_dir, dtype=np.float64).reshape(3)
        if self.kind not in ("blob-sum", "shell", "moving-blob"):
            raise ValueError(f"unknown volume kind {self.kind!r}")

    def scalar(self, x: np.ndarray, p=()) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        if p.shape[0] != self.param_dims:
            raise ValueError(f"volume expects {self.param_dims} parameters, got {p.shape[0]}")
        centers = self.centers
        radii = self.radii
        amps = self.amplitudes.copy()
        if self.kind == "moving-blob":
            if self.param_dims >= 1:
                centers = centers + (p[0] - 0.5) * self.move_dir
            if self.param_dims >= 2:
                radii = radii * (0.7 + 0.6 * p[1])
            if self.param_dims >= 3 and amps.shape[0] > 1:
                amps[1:] *= p[2]
        x = np.atleast_2d(x)
        total = np.zeros(x.shape[0])
        for c, r, a in zip(centers, radii, amps):
            d2 = ((x - c) ** 2).sum(axis=1)
            if self.kind == "shell":
                dist = np.sqrt(d2)
                total += a * np.exp(-((dist - r) ** 2) / (2.0 * self.shell_thickness**2))
            else:
                total += a * np.exp(-d2 / (2.0 * r**2))
        return np.clip(total, 0.0, 1.0)


def demo_volume(kind: str, param_dims: int = 0) -> AnalyticVolume:
    """Deterministic stock scenes used by the CLI and the test suite."""
    if kind == "blob-sum":
        return AnalyticVolume(
            kind, centers=[(-0.25, 0.1, 0.0), (0.3, -0.15, 0.2), (0.05, 0.3, -0.3)],
            radii=[0.3, 0.24, 0.2], amplitudes=[0.9, 0.75, 0.6], param_dims=0)
    if kind == "shell":
        return AnalyticVolume(kind, centers=[(0.0, 0.0, 0.0)], radii=[0.55],
                              amplitudes=[0.9], param_dims=0)
    if kind == "moving-blob":
        return AnalyticVolume(
            kind, centers=[(-0.1, 0.05, 0.0), (0.25, -0.2, -0.15)],
            radii=[0.3, 0.2], amplitudes=[0.9, 0.65],
            param_dims=max(1, min(param_dims, 3)))
    raise ValueError(f"unknown demo volume {kind!r}")


@dataclass
class TransferFunction:
    """Piecewise-linear value -> (rgb, opacity) map with sorted control points."""

    values: np.ndarray
    colors: np.ndarray
    opacities: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        self.colors = np.atleast_2d(np.asarray(self.colors, dtype=np.float64))
        self.opacities = np.asarray(self.opacities, dtype=np.float64).reshape(-1)
        if not (np.diff(self.values) > 0).all():
            raise ValueError("control point values must be strictly increasing")
        if ((self.opacities < 0) | (self.opacities > 1)).any():
            raise ValueError("opacity must be in [0, 1]")
        if len(self.values) != len(self.opacities) or len(self.values) != len(self.colors):
            raise ValueError("control point arrays must align")

    @staticmethod
    def from_points(points) -> "TransferFunction":
        vals, cols, ops = zip(*points)
        return TransferFunction(np.array(vals), np.array(cols), np.array(ops))

    def apply(self, s: np.ndarray):
        s = np.asarray(s, dtype=np.float64)
        rgb = np.stack([np.interp(s, self.values, self.colors[:, ch]) for ch in range(3)], axis=-1)
        return rgb, np.interp(s, self.values, self.opacities)

    def to_points(self) -> list:
        return [[float(v), [float(c) for c in col], float(o)]
                for v, col, o in zip(self.values, self.colors, self.opacities)]


def default_tf() -> TransferFunction:
    return TransferFunction.from_points([
        (0.00, (0.10, 0.10, 0.80), 0.00),
        (0.35, (0.20, 0.55, 0.85), 0.04),
        (0.60, (0.15, 0.80, 0.35), 0.45),
        (0.80, (0.95, 0.75, 0.20), 0.80),
        (1.00, (0.90, 0.20, 0.15), 0.95),
    ])


def reference_render(volume: AnalyticVolume, tf: TransferFunction, camera: Camera,
                     p=(), steps: int = 256, background=(1.0, 1.0, 1.0),
                     density_scale: float = 12.0, chunk: int = 4096) -> np.ndarray:
    """Dense emission-absorption raymarch of the analytic field.

    Opacity o maps to extinction -ln(1-o)*density_scale per world unit, so a
    TF opacity of o over a unit path reproduces alpha o at scale 1.
    """
    if steps < 64:
        raise ValueError("reference raymarch needs steps >= 64")
    rays = generate_rays(camera)
    bg = np.asarray(background, dtype=np.float64)
    out = np.tile(bg, (len(rays), 1))
    t0, t1, hit = intersect_aabb_batch(rays.origins, rays.directions, volume.aabb)
    idx = np.nonzero(hit)[0]
    for lo in range(0, idx.shape[0], chunk):
        sel = idx[lo:lo + chunk]
        o, d = rays.origins[sel], rays.directions[sel]
        tn, tfar = t0[sel], t1[sel]
        frac = (np.arange(steps) + 0.5) / steps
        ts = tn[:, None] + frac[None, :] * (tfar - tn)[:, None]
        pts = o[:, None, :] + ts[..., None] * d[:, None, :]
        sval = volume.scalar(pts.reshape(-1, 3), p).reshape(ts.shape)
        rgb, opac = tf.apply(sval)
        sigma = -np.log1p(-np.minimum(opac, 0.999)) * density_scale
        delta = ((tfar - tn) / steps)[:, None]
        alpha = -np.expm1(-sigma * delta)
        trans = np.cumprod(1.0 - alpha, axis=1)
        trans = np.concatenate([np.ones((alpha.shape[0], 1)), trans[:, :-1]], axis=1)
        weights = trans * alpha
        color = (weights[..., None] * rgb.reshape(*ts.shape, 3)).sum(axis=1)
        t_final = np.exp(np.log1p(-np.clip(alpha, 0.0, 1 - 1e-12)).sum(axis=1))
        out[sel] = color + t_final[:, None] * bg
    return np.clip(out, 0.0, 1.0).reshape(camera.height, camera.width, 3)


# ---------------------------------------------------------------------------
# dataset container and disk format


@dataclass
class FrameRecord:
    file_path: str
    pose: np.ndarray
    params: np.ndarray


@dataclass
class SceneDataset:
    root: Path
    frames: list[FrameRecord]
    focal: float
    width: int
    height: int
    param_ranges: list[tuple[float, float]]
    param_names: list[str]
    background: np.ndarray
    aabb_hint: Aabb

    @property
    def param_dims(self) -> int:
        return len(self.param_ranges)

    def camera(self, frame: FrameRecord) -> Camera:
        return Camera(frame.pose, self.focal, self.width, self.height)

    def load_image(self, frame: FrameRecord) -> np.ndarray:
        with Image.open(self.root / frame.file_path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0

    def distinct_params(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, self.param_dims))
        stack = np.stack([f.params for f in self.frames])
        return np.unique(stack, axis=0)


def save_image(img: np.ndarray, path: Path) -> None:
    data = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def generate_dataset(volume: AnalyticVolume, tf: TransferFunction, poses,
                     param_samples, out_dir, width: int = 128, height: int = 128,
                     focal: Optional[float] = None, steps: int = 256,
                     background=(1.0, 1.0, 1.0), density_scale: float = 12.0,
                     param_names: Optional[list[str]] = None) -> SceneDataset:
    """Render every (parameter sample x pose) pair and write manifest + PNGs."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    param_samples = np.atleast_2d(np.asarray(param_samples, dtype=np.float64))
    if param_samples.size == 0:
        param_samples = param_samples.reshape(1, 0)
    k = param_samples.shape[1]
    if k != volume.param_dims:
        raise ValueError("parameter samples do not match the volume's coupling dims")
    if focal is None:
        focal = width / (2.0 * np.tan(np.deg2rad(25.0)))
    if param_names is None:
        param_names = [f"p{i}" for i in range(k)]
    ranges = [(float(param_samples[:, i].min()), float(param_samples[:, i].max()))
              for i in range(k)]

    frames = []
    index = 0
    for p in param_samples:
        for pose in poses:
            cam = Camera(pose, focal, width, height)
            img = reference_render(volume, tf, cam, p, steps=steps,
                                   background=background, density_scale=density_scale)
            rel = f"images/{index:04d}.png"
            save_image(img, out_dir / rel)
            frames.append(FrameRecord(rel, np.asarray(pose, dtype=np.float64), p.copy()))
            index += 1

    manifest = {
        "focal": float(focal),
        "width": int(width),
        "height": int(height),
        "background": [float(c) for c in np.asarray(background).reshape(3)],
        "param_names": param_names,
        "param_ranges": [[lo, hi] for lo, hi in ranges],
        "aabb_hint": volume.aabb.to_dict(),
        "generator": {
            "kind": volume.kind,
            "centers": volume.centers.tolist(),
            "radii": volume.radii.tolist(),
            "amplitudes": volume.amplitudes.tolist(),
            "param_dims": volume.param_dims,
            "move_dir": volume.move_dir.tolist(),
            "shell_thickness": volume.shell_thickness,
            "transfer_function": tf.to_points(),
            "steps": int(steps),
            "density_scale": float(density_scale),
        },
        "frames": [
            {
                "file_path": f.file_path,
                "transform_matrix": f.pose.tolist(),
                "params": f.params.tolist(),
            }
            for f in frames
        ],
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return load_dataset(out_dir)


def load_dataset(root) -> SceneDataset:
    root = Path(root)
    with open(root / "manifest.json") as fh:
        m = json.load(fh)
    frames = [
        FrameRecord(fr["file_path"], np.asarray(fr["transform_matrix"], dtype=np.float64),
                    np.asarray(fr["params"], dtype=np.float64))
        for fr in m["frames"]
    ]
    return SceneDataset(
        root=root,
        frames=frames,
        focal=float(m["focal"]),
        width=int(m["width"]),
        height=int(m["height"]),
        param_ranges=[(float(lo), float(hi)) for lo, hi in m["param_ranges"]],
        param_names=list(m.get("param_names", [])),
        background=np.asarray(m["background"], dtype=np.float64),
        aabb_hint=Aabb.from_dict(m["aabb_hint"]),
    )


def volume_from_manifest(root) -> tuple[AnalyticVolume, TransferFunction, dict]:
    """Rebuild the generating volume/TF: the oracle side of evaluations."""
    with open(Path(root) / "manifest.json") as fh:
        g = json.load(fh)["generator"]
    vol = AnalyticVolume(
        kind=g["kind"], centers=np.asarray(g["centers"]), radii=np.asarray(g["radii"]),
        amplitudes=np.asarray(g["amplitudes"]), param_dims=int(g["param_dims"]),
        move_dir=np.asarray(g["move_dir"]), shell_thickness=float(g["shell_thickness"]))
    pts = [(v, tuple(c), o) for v, c, o in g["transfer_function"]]
    return vol, TransferFunction.from_points(pts), g
