import numpy as np
import pytest

import factorfield as ff
from factorfield.dataset import demo_volume, default_tf, generate_dataset, icosphere_cameras
from factorfield.grad import parameter_map
from factorfield.train import TrainDivergenceError, build_ray_pool, psnr_from_rec

from conftest import make_decoders, make_field


class TestReconstructionLoss:
    def test_zero_for_equal(self, rng):
        batch = rng.uniform(0, 1, (32, 3))
        assert ff.reconstruction_loss(batch, batch) == 0.0

    def test_single_ray_squared_norm(self):
        pred = np.array([[0.1, 0.0, 0.0]])
        assert ff.reconstruction_loss(pred, np.zeros((1, 3))) == pytest.approx(0.01)

    def test_matches_scalar_loop_oracle(self, rng):
        pred = rng.uniform(0, 1, (64, 3))
        target = rng.uniform(0, 1, (64, 3))
        acc = 0.0
        for r in range(64):
            for ch in range(3):
                acc += (pred[r, ch] - target[r, ch]) ** 2
        assert ff.reconstruction_loss(pred, target) == pytest.approx(acc / 64, abs=1e-7)


class TestL1Loss:
    def test_fresh_parameter_vectors_contribute_zero(self, rng):
        field = make_field(rng, perturb_params=False)
        for grid in (field.density, field.appearance):
            for t in (*grid.matrices, *grid.vectors):
                t[:] = 0.0
        assert ff.l1_loss(field) == 0.0

    def test_mean_of_magnitudes(self, rng):
        field = make_field(rng, resolution=(2, 2, 2), r_density=1, r_appearance=1,
                           k=0)
        for grid in (field.density, field.appearance):
            for t in (*grid.matrices, *grid.vectors):
                t[:] = 0.0
        # plant the documented example weights in one matrix
        field.density.matrices[0][0] = np.array([[1.0, -1.0], [3.0, -3.0]])
        total_weights = ff.count_parameters(field)
        assert ff.l1_loss(field) == pytest.approx(8.0 / total_weights)

    def test_example_mean_is_two_over_their_count(self, rng):
        # spec arithmetic: weights {1,-1,3,-3} alone average to 2.0
        vals = np.array([1.0, -1.0, 3.0, -3.0])
        assert np.abs(vals).mean() == 2.0


class TestTvLoss:
    def test_constant_field_is_zero(self, rng):
        field = make_field(rng, perturb_params=False)
        for grid in (field.density, field.appearance):
            for t in (*grid.matrices, *grid.vectors):
                t[:] = 0.37
        assert ff.tv_loss(field) == pytest.approx(0.0, abs=1e-12)

    def test_single_vector_arithmetic(self):
        # one vector stack, one channel, values [0, 1]: 1 / (1*1*2) = 0.5
        vec = np.array([[0.0, 1.0]])
        r, l = vec.shape
        d = np.diff(vec, axis=1)
        assert (d**2).sum() / (r * l) == pytest.approx(0.5)

    def test_matches_double_loop_oracle(self, rng):
        field = make_field(rng, resolution=(8, 8, 8))
        vec_stacks = ([(g.vectors[k]) for g in (field.density, field.appearance)
                       for k in range(3)]
                      + [a.vectors[k] for a in (field.density_params,
                                                field.appearance_params)
                         for k in range(a.dims)])
        mat_stacks = [g.matrices[k] for g in (field.density, field.appearance)
                      for k in range(3)]
        tv1 = 0.0
        for v in vec_stacks:
            r, l = v.shape
            acc = 0.0
            for q in range(r):
                for i in range(1, l):
                    acc += (v[q, i] - v[q, i - 1]) ** 2
            tv1 += acc / (r * l)
        tv1 /= len(vec_stacks)
        tv2 = 0.0
        for m in mat_stacks:
            r, h, w = m.shape
            acc = 0.0
            for q in range(r):
                for i in range(h):
                    for j in range(w):
                        if i > 0:
                            acc += (m[q, i, j] - m[q, i - 1, j]) ** 2
                        if j > 0:
                            acc += (m[q, i, j] - m[q, i, j - 1]) ** 2
            tv2 += acc / (r * h * w)
        tv2 /= len(mat_stacks)
        assert ff.tv_loss(field) == pytest.approx(tv1 + tv2, abs=1e-7)


class TestSchedule:
    def test_milestones_validated(self):
        s = ff.TrainSchedule(iterations=100, grid_growth=[(50, 1000), (30, 2000)])
        with pytest.raises(ValueError):
            s.validate()
        s = ff.TrainSchedule(iterations=100, mask_iter=20, voxelskip_iter=10)
        with pytest.raises(ValueError):
            s.validate()
        s = ff.TrainSchedule(iterations=100, warmup=(200, 10), target_samples=64)
        with pytest.raises(ValueError):
            s.validate()

    def test_lambda1_switch(self):
        s = ff.TrainSchedule(iterations=10, lambda1=(1e-4, 5, 1e-5))
        assert s.lambda1_at(5) == 1e-4
        assert s.lambda1_at(6) == 1e-5

    def test_warmup_ramp(self):
        s = ff.TrainSchedule(iterations=100, warmup=(16, 50), target_samples=64)
        assert s.samples_at(0) == 16
        assert s.samples_at(25) == 40
        assert s.samples_at(50) == 64
        assert s.samples_at(99) == 64

    def test_desk_and_paper_schedules_valid(self):
        ff.desk_schedule(2000).validate()
        ff.desk_schedule(7).validate()
        ff.paper_schedule(False).validate()
        ff.paper_schedule(True).validate()
        assert ff.paper_schedule(True).iterations == 3 * ff.paper_schedule(False).iterations


@pytest.fixture(scope="module")
def micro_dataset(tmp_path_factory):
    vol = demo_volume("blob-sum")
    poses = icosphere_cameras(0, 3.0)[:6]
    return generate_dataset(vol, default_tf(), poses, np.zeros((1, 0)),
                            tmp_path_factory.mktemp("ds") / "d",
                            width=32, height=32, steps=64)


class TestTrainLoop:
    def test_zero_iterations_is_identity(self, micro_dataset, rng):
        field = make_field(rng, k=0, dtype=np.float32)
        dec = make_decoders(field, rng, dtype=np.float32)
        before = {k: v.copy() for k, v in parameter_map(field, dec).items()}
        result = ff.train(micro_dataset, field, dec,
                          ff.TrainSchedule(iterations=0), seed=3)
        after = parameter_map(result.field, result.decoders)
        assert all(np.array_equal(before[k], after[k]) for k in before)
        assert result.reports == []

    def test_fixed_seed_reproduces_loss_stream(self, micro_dataset):
        def run():
            r = np.random.default_rng(7)
            field = make_field(r, resolution=(6, 6, 6), k=0, dtype=np.float32)
            dec = make_decoders(field, r, hidden=8, pe=2, sh=1, dtype=np.float32)
            sched = ff.TrainSchedule(iterations=12, batch_rays=128,
                                     warmup=(8, 4), target_samples=16,
                                     grid_growth=[(6, 8**3)], mask_iter=4,
                                     voxelskip_iter=8, importance_extra=4)
            return ff.train(micro_dataset, field, dec, sched, seed=11)

        a, b = run(), run()
        assert [r.total for r in a.reports] == [r.total for r in b.reports]
        assert np.array_equal(a.field.density.matrices[0], b.field.density.matrices[0])

    def test_total_equals_weighted_terms(self, micro_dataset, rng):
        field = make_field(rng, resolution=(6, 6, 6), k=0, dtype=np.float32)
        dec = make_decoders(field, rng, hidden=8, pe=2, sh=1, dtype=np.float32)
        sched = ff.TrainSchedule(iterations=6, batch_rays=64, warmup=(8, 2),
                                 target_samples=12, lambda1=(1e-3, 3, 1e-4),
                                 lambda2=0.5)
        result = ff.train(micro_dataset, field, dec, sched, seed=1)
        for i, rep in enumerate(result.reports, start=1):
            lam1 = sched.lambda1_at(i)
            assert rep.total == pytest.approx(rep.rec + lam1 * rep.l1 + 0.5 * rep.tv,
                                              abs=1e-6)

    def test_loss_decreases_on_micro_scene(self, micro_dataset, rng):
        field = make_field(rng, resolution=(8, 8, 8), r_density=4, r_appearance=8,
                           k=0, dtype=np.float32)
        dec = make_decoders(field, rng, hidden=16, pe=4, sh=2,
                            density_bias=-5.0, dtype=np.float32)
        sched = ff.TrainSchedule(iterations=150, batch_rays=256, warmup=(16, 30),
                                 target_samples=32)
        result = ff.train(micro_dataset, field, dec, sched, seed=2)
        first = np.mean([r.rec for r in result.reports[:10]])
        last = np.mean([r.rec for r in result.reports[-10:]])
        assert last < first / 3

    def test_aabb_shrinks_and_stays_inside(self, micro_dataset, rng):
        field = make_field(rng, resolution=(10, 10, 10), r_density=4,
                           r_appearance=4, k=0, dtype=np.float32)
        dec = make_decoders(field, rng, hidden=16, pe=2, sh=1,
                            density_bias=-5.0, dtype=np.float32)
        old_lo, old_hi = field.aabb.lo.copy(), field.aabb.hi.copy()
        sched = ff.TrainSchedule(iterations=120, batch_rays=256, warmup=(16, 30),
                                 target_samples=32, mask_iter=100,
                                 sigma_threshold=1e-3)
        result = ff.train(micro_dataset, field, dec, sched, seed=2)
        assert (result.field.aabb.lo >= old_lo - 1e-9).all()
        assert (result.field.aabb.hi <= old_hi + 1e-9).all()

    def test_grid_growth_applies_budget(self, micro_dataset, rng):
        field = make_field(rng, resolution=(6, 6, 6), k=0, dtype=np.float32)
        dec = make_decoders(field, rng, hidden=8, pe=2, sh=1, dtype=np.float32)
        sched = ff.TrainSchedule(iterations=6, batch_rays=64, warmup=(8, 2),
                                 target_samples=12, grid_growth=[(3, 12**3)])
        result = ff.train(micro_dataset, field, dec, sched, seed=1)
        assert int(np.prod(result.field.density.resolution)) >= 10**3

    def test_divergence_reports_term_and_iteration(self, micro_dataset, rng):
        field = make_field(rng, resolution=(6, 6, 6), k=0, dtype=np.float32)
        field.density.matrices[0][0, 0, 0] = np.inf
        dec = make_decoders(field, rng, hidden=8, pe=2, sh=1, dtype=np.float32)
        sched = ff.TrainSchedule(iterations=3, batch_rays=32, warmup=(8, 2),
                                 target_samples=8)
        with pytest.raises(TrainDivergenceError) as err:
            ff.train(micro_dataset, field, dec, sched, seed=1)
        assert err.value.iteration == 1

    def test_empty_pool_aborts(self, micro_dataset, rng):
        field = make_field(rng, k=0, dtype=np.float32)
        field.aabb = ff.Aabb([50, 50, 50], [51, 51, 51])
        dec = make_decoders(field, rng, dtype=np.float32)
        with pytest.raises(ValueError, match="empty ray pool"):
            ff.train(micro_dataset, field, dec, ff.TrainSchedule(iterations=1), seed=0)


class TestRayPool:
    def test_content_rays_never_dropped(self, micro_dataset):
        """Filtering only drops rays whose pixels match the background."""
        ds = micro_dataset
        bg = np.asarray(ds.background)
        kept = build_ray_pool(ds, ds.aabb_hint)
        n_total = len(ds.frames) * ds.width * ds.height
        assert len(kept) <= n_total
        # reconstruct the dropped rays and check they are background pixels
        from factorfield.render import generate_rays, intersect_aabb_batch
        for frame in ds.frames:
            rays = generate_rays(ds.camera(frame))
            _, _, hit = intersect_aabb_batch(rays.origins, rays.directions,
                                             ds.aabb_hint)
            img = ds.load_image(frame).reshape(-1, 3)
            dropped = img[~hit]
            if dropped.size:
                assert np.abs(dropped - bg).max() <= 2.0 / 255.0

    def test_psnr_from_rec_cap(self):
        assert psnr_from_rec(0.0) == 99.0
        assert psnr_from_rec(3.0) == pytest.approx(0.0)
