"""Loss assembly and the staged training loop."""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .decoder import DecoderPair
from .field import Aabb, FactorizedField, count_parameters, crop_to_aabb, upsample
from .grad import AdamState, adam_step, backward, parameter_map, zero_gradients
from .pipeline import add_importance_samples, build_sample_batch, forward_samples
from .render import MaskVolume, build_mask, generate_rays, intersect_aabb_batch


class TrainDivergenceError(RuntimeError):
    def __init__(self, iteration: int, term: str, value: float):
        self.iteration = iteration
        self.term = term
        super().__init__(f"non-finite {term} loss ({value}) at iteration {iteration}")


@dataclass
class TrainSchedule:
    iterations: int
    batch_rays: int = 4096
    lr_grid: float = 0.02
    lr_mlp: float = 0.001
    lambda1: tuple[float, int, float] = (1e-4, 2000, 1e-5)  # (initial, switch_iter, later)
    lambda2: float = 1.0
    grid_growth: list[tuple[int, int]] = dc_field(default_factory=list)  # (iter, voxel budget)
    mask_iter: int = 0          # 0 disables
    voxelskip_iter: int = 0     # 0 disables
    warmup: tuple[int, int] = (64, 500)  # (start_samples, end_iter)
    target_samples: int = 96
    importance_extra: int = 64
    sigma_threshold: float = 1e-3
    mask_resolution_cap: int = 128
    jitter: bool = True
    lr_decay: bool = False      # exponential decay to 0.1x over the run

    def validate(self) -> None:
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        milestones = [it for it, _ in self.grid_growth]
        if milestones != sorted(set(milestones)):
            raise ValueError("grid growth milestones must be strictly increasing")
        for it in milestones + [self.mask_iter, self.voxelskip_iter]:
            if it and self.iterations and it >= self.iterations:
                raise ValueError(f"milestone {it} must be < iterations {self.iterations}")
        if self.mask_iter and self.voxelskip_iter and self.voxelskip_iter <= self.mask_iter:
            raise ValueError("voxelskip_iter must come after mask_iter")
        if self.warmup[0] > self.target_samples:
            raise ValueError("warm-up start_samples must be <= target_samples")

    def lambda1_at(self, iteration: int) -> float:
        initial, switch, later = self.lambda1
        return later if iteration > switch else initial

    def samples_at(self, iteration: int) -> int:
        start, end_iter = self.warmup
        if end_iter <= 0 or iteration >= end_iter:
            return self.target_samples
        frac = iteration / end_iter
        return int(round(start + (self.target_samples - start) * frac))


def desk_schedule(iterations: int = 2000, voxel_budget: int = 64**3,
                  batch_rays: int = 4096) -> TrainSchedule:
    """Scaled-down staging for CPU-sized scenes: geometric grid growth from an
    initial coarse budget, early mask/shrink, late voxel skip + importance."""
    start_budget = max(16**3, voxel_budget // 16)
    marks = [int(iterations * f) for f in (0.25, 0.45, 0.65)]
    budgets = np.geomspace(start_budget, voxel_budget, len(marks) + 1)[1:]
    growth = []
    for m, b in zip(marks, budgets):
        if m >= 1 and m < iterations and (not growth or m > growth[-1][0]):
            growth.append((m, int(round(b))))
    mask_iter = int(iterations * 0.15)
    voxelskip_iter = int(iterations * 0.4)
    if voxelskip_iter <= mask_iter or voxelskip_iter >= iterations:
        voxelskip_iter = 0
    if mask_iter < 1 or mask_iter >= iterations:
        mask_iter = 0
    return TrainSchedule(
        iterations=iterations,
        batch_rays=batch_rays,
        lambda1=(1e-4, max(1, iterations // 4), 1e-5),
        grid_growth=growth,
        mask_iter=mask_iter,
        voxelskip_iter=voxelskip_iter,
        warmup=(32, max(1, int(iterations * 0.25))),
        target_samples=64,
        importance_extra=16,
    )


def paper_schedule(dynamic: bool = False) -> TrainSchedule:
    """Full-scale staging: 30k static / 90k dynamic iterations, growth at
    2k/4k/6k/8k from 128^3 toward 300^3, mask at 2k, voxel skip at 4k."""
    iterations = 90_000 if dynamic else 30_000
    budgets = np.geomspace(128**3, 300**3, 5)[1:]
    return TrainSchedule(
        iterations=iterations,
        batch_rays=4096,
        lambda1=(1e-4, 2000, 1e-5),
        grid_growth=[(it, int(round(b))) for it, b in zip((2000, 4000, 6000, 8000), budgets)],
        mask_iter=2000,
        voxelskip_iter=4000,
        warmup=(64, 2000),
        target_samples=192,
        importance_extra=64,
    )


@dataclass
class LossReport:
    iteration: int
    rec: float
    l1: float
    tv: float
    total: float
    psnr_batch: float

    def line(self) -> str:
        return (f"{self.iteration} rec={self.rec:.6f} l1={self.l1:.6f} "
                f"tv={self.tv:.6f} total={self.total:.6f} psnr={self.psnr_batch:.2f}")


# ---------------------------------------------------------------------------
# losses


def reconstruction_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over rays of the squared L2 color residual (channels summed)."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("prediction/target batch shapes must match")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    return float((diff**2).sum(axis=-1).mean())


def reconstruction_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    n = pred.shape[0]
    return (2.0 / n) * (pred.astype(np.float64) - target.astype(np.float64))


def _l1_groups(field: FactorizedField):
    spatial = [t for g in (field.density, field.appearance) for t in (*g.matrices, *g.vectors)]
    param = [v for a in (field.density_params, field.appearance_params) for v in a.vectors]
    return spatial, param


def l1_loss(field: FactorizedField) -> float:
    """Mean |w| over spatial factors; parameter vectors contribute |1 - w|."""
    spatial, param = _l1_groups(field)
    total = sum(np.abs(t).sum() for t in spatial)
    total += sum(np.abs(1.0 - v).sum() for v in param)
    return float(total / count_parameters(field))


def l1_grad(field: FactorizedField, grads: dict[str, np.ndarray], scale: float) -> None:
    """Adds scale * d(l1)/dw; subgradient 0 at kinks."""
    n = count_parameters(field)
    c = scale / n
    for gname, grid in (("density", field.density), ("appearance", field.appearance)):
        for k in range(3):
            grads[f"{gname}.mat{k}"] += c * np.sign(grid.matrices[k])
            grads[f"{gname}.vec{k}"] += c * np.sign(grid.vectors[k])
    for aname, axes in (("density_params", field.density_params),
                        ("appearance_params", field.appearance_params)):
        for k in range(axes.dims):
            grads[f"{aname}.axis{k}"] += -c * np.sign(1.0 - axes.vectors[k])


def _tv_stacks(field: FactorizedField):
    vec = [(f"{g}.vec{k}", grid.vectors[k])
           for g, grid in (("density", field.density), ("appearance", field.appearance))
           for k in range(3)]
    vec += [(f"{a}.axis{k}", axes.vectors[k])
            for a, axes in (("density_params", field.density_params),
                            ("appearance_params", field.appearance_params))
            for k in range(axes.dims)]
    mat = [(f"{g}.mat{k}", grid.matrices[k])
           for g, grid in (("density", field.density), ("appearance", field.appearance))
           for k in range(3)]
    return vec, mat


def tv_loss(field: FactorizedField) -> float:
    """Squared adjacent differences: vectors normalized by R*l per stack,
    matrices by R*h*w (both axes), each term averaged over its stacks."""
    vec, mat = _tv_stacks(field)
    tv1 = 0.0
    for _, v in vec:
        r, l = v.shape
        d = np.diff(v.astype(np.float64), axis=1)
        tv1 += (d**2).sum() / (r * l)
    tv1 /= max(len(vec), 1)
    tv2 = 0.0
    for _, m in mat:
        r, h, w = m.shape
        m64 = m.astype(np.float64)
        di = np.diff(m64, axis=1)
        dj = np.diff(m64, axis=2)
        tv2 += ((di**2).sum() + (dj**2).sum()) / (r * h * w)
    tv2 /= max(len(mat), 1)
    return float(tv1 + tv2)


def tv_grad(field: FactorizedField, grads: dict[str, np.ndarray], scale: float) -> None:
    vec, mat = _tv_stacks(field)
    for name, v in vec:
        r, l = v.shape
        c = scale / (len(vec) * r * l)
        d = np.diff(v, axis=1)
        g = np.zeros_like(v)
        g[:, 1:] += 2.0 * c * d
        g[:, :-1] -= 2.0 * c * d
        grads[name] += g
    for name, m in mat:
        r, h, w = m.shape
        c = scale / (len(mat) * r * h * w)
        g = np.zeros_like(m)
        di = np.diff(m, axis=1)
        dj = np.diff(m, axis=2)
        g[:, 1:, :] += 2.0 * c * di
        g[:, :-1, :] -= 2.0 * c * di
        g[:, :, 1:] += 2.0 * c * dj
        g[:, :, :-1] -= 2.0 * c * dj
        grads[name] += g


def psnr_from_rec(rec: float) -> float:
    if rec <= 0:
        return 99.0
    return min(99.0, float(10.0 * np.log10(3.0 / rec)))


# ---------------------------------------------------------------------------
# ray pool


@dataclass
class RayPool:
    origins: np.ndarray  # (P, 3) float32
    dirs: np.ndarray     # (P, 3) float32
    rgb: np.ndarray      # (P, 3) float32
    params: np.ndarray   # (P, K) float32

    def __len__(self) -> int:
        return self.origins.shape[0]


def build_ray_pool(dataset, aabb: Aabb) -> RayPool:
    """All training pixels as rays, dropping rays that miss the AABB."""
    origins, dirs, rgb, params = [], [], [], []
    for frame in dataset.frames:
        rays = generate_rays(dataset.camera(frame))
        _, _, hit = intersect_aabb_batch(rays.origins, rays.directions, aabb)
        img = dataset.load_image(frame).reshape(-1, 3)
        origins.append(rays.origins[hit].astype(np.float32))
        dirs.append(rays.directions[hit].astype(np.float32))
        rgb.append(img[hit])
        params.append(np.broadcast_to(frame.params.astype(np.float32),
                                      (int(hit.sum()), dataset.param_dims)).copy())
    pool = RayPool(np.concatenate(origins), np.concatenate(dirs),
                   np.concatenate(rgb), np.concatenate(params))
    if len(pool) == 0:
        raise ValueError("empty ray pool: no training ray intersects the AABB")
    return pool


def _resolution_for_budget(aabb: Aabb, budget: int) -> tuple[int, int, int]:
    """Per-axis resolution proportional to the AABB extents, ~budget voxels."""
    ext = aabb.extent
    unit = (budget / float(np.prod(ext))) ** (1.0 / 3.0)
    return tuple(int(max(2, round(e * unit))) for e in ext)


@dataclass
class TrainResult:
    field: FactorizedField
    decoders: DecoderPair
    reports: list[LossReport]
    mask: Optional[MaskVolume]


def train(dataset, field: FactorizedField, decoders: DecoderPair,
          schedule: TrainSchedule, seed: int = 0,
          log: Optional[Callable[[str], None]] = None,
          progress_every: int = 0) -> TrainResult:
    """Optimize the field/decoders on the dataset per the staged schedule.

    All stochasticity flows from `seed`; two runs with the same inputs produce
    identical loss streams.
    """
    schedule.validate()
    rng = np.random.default_rng(seed)
    pool = build_ray_pool(dataset, field.aabb)
    background = np.asarray(dataset.background, dtype=np.float64)

    params = parameter_map(field, decoders)
    state = AdamState.for_params(params)
    mask: Optional[MaskVolume] = None
    skipping = False
    reports: list[LossReport] = []
    t_start = time.time()

    def lr_for(it: int) -> dict[str, float]:
        decay = 0.1 ** (it / schedule.iterations) if schedule.lr_decay else 1.0
        return {name: (schedule.lr_mlp if name.endswith(("w1", "b1", "w2", "b2"))
                       else schedule.lr_grid) * decay
                for name in params}

    def refresh_model(new_field: FactorizedField):
        nonlocal field, params, state
        old_shapes = {k: v.shape for k, v in params.items()}
        field = new_field
        params = parameter_map(field, decoders)
        for name, arr in params.items():
            if old_shapes.get(name) != arr.shape:
                state.reset_tensor(name, arr)
            elif name.endswith(("w1", "b1", "w2", "b2")):
                pass  # decoder buffers stay valid
            else:
                state.reset_tensor(name, arr)  # grid tensors were re-sampled

    for it in range(1, schedule.iterations + 1):
        idx = rng.integers(0, len(pool), schedule.batch_rays)
        o = pool.origins[idx].astype(np.float64)
        d = pool.dirs[idx].astype(np.float64)
        gt = pool.rgb[idx].astype(np.float64)
        p = pool.params[idx].astype(np.float64)

        n_samples = schedule.samples_at(it)
        batch, hit, t0, t1, _ = build_sample_batch(
            field, o, d, p, n_samples, schedule.jitter, rng,
            mask=mask if skipping else None)
        if skipping and schedule.importance_extra > 0:
            _, w1, _, _ = forward_samples(field, decoders, batch, background,
                                          density_only=True)
            batch = add_importance_samples(field, batch, w1, t0, t1,
                                           schedule.importance_extra, rng,
                                           mask=mask if skipping else None)
        rgb_hit, _, _, trace = forward_samples(field, decoders, batch, background,
                                               record=True)
        pred = np.tile(background, (schedule.batch_rays, 1))
        pred[hit] = rgb_hit.astype(np.float64)

        rec = reconstruction_loss(pred, gt)
        l1 = l1_loss(field)
        tv = tv_loss(field)
        lam1 = schedule.lambda1_at(it)
        total = rec + lam1 * l1 + schedule.lambda2 * tv
        for term, value in (("rec", rec), ("l1", l1), ("tv", tv), ("total", total)):
            if not np.isfinite(value):
                raise TrainDivergenceError(it, term, value)

        grad_rgb = reconstruction_grad(pred, gt)[hit].astype(field.dtype)
        if trace is not None:
            grads = backward(field, decoders, trace, grad_rgb)
        else:
            grads = zero_gradients(params)
        l1_grad(field, grads, lam1)
        tv_grad(field, grads, schedule.lambda2)
        adam_step(params, grads, state, lr_for(it))

        report = LossReport(it, rec, l1, tv, total, psnr_from_rec(rec))
        reports.append(report)
        if log is not None:
            log(report.line())
        if progress_every and it % progress_every == 0:
            elapsed = time.time() - t_start
            print(f"[train] iter {it}/{schedule.iterations} "
                  f"psnr={report.psnr_batch:.2f} ({elapsed:.0f}s)", flush=True)

        # staged milestones
        if schedule.mask_iter and it == schedule.mask_iter:
            mask = _build_mask_now(field, decoders, dataset, schedule)
            box = mask.occupied_aabb(margin_cells=1)
            if box is None:
                print("[train] warning: occupancy mask is empty; skipping shrink", flush=True)
            else:
                new_aabb = Aabb(np.maximum(box.lo, field.aabb.lo),
                                np.minimum(box.hi, field.aabb.hi))
                refresh_model(crop_to_aabb(field, new_aabb))
        if schedule.voxelskip_iter and it == schedule.voxelskip_iter:
            mask = _build_mask_now(field, decoders, dataset, schedule)
            if not mask.bits.any():
                print("[train] warning: occupancy mask is empty; voxel skip disabled", flush=True)
                mask = None
            else:
                skipping = True
        for milestone, budget in schedule.grid_growth:
            if it == milestone:
                res = _resolution_for_budget(field.aabb, budget)
                res = tuple(max(r, c) for r, c in zip(res, field.density.resolution))
                new_field = FactorizedField(
                    density=upsample(field.density, res),
                    appearance=upsample(field.appearance, res),
                    density_params=field.density_params,
                    appearance_params=field.appearance_params,
                    aabb=field.aabb,
                )
                refresh_model(new_field)

    return TrainResult(field, decoders, reports, mask)


def _build_mask_now(field, decoders, dataset, schedule: TrainSchedule) -> MaskVolume:
    res = tuple(min(int(n), schedule.mask_resolution_cap) for n in field.density.resolution)
    params = dataset.distinct_params()
    if params.size == 0:
        params = np.zeros((1, 0))
    return build_mask(field, decoders, res, schedule.sigma_threshold, params)
