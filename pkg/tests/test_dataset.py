import numpy as np
import pytest

from factorfield.dataset import (
    AnalyticVolume,
    TransferFunction,
    default_tf,
    demo_volume,
    generate_dataset,
    icosphere_cameras,
    icosphere_vertices,
    inference_path,
    load_dataset,
    look_at_pose,
    pose_from_azel,
    reference_render,
    volume_from_manifest,
)
from factorfield.render import Camera


class TestIcosphere:
    @pytest.mark.parametrize("level,count", [(0, 12), (1, 42), (2, 92), (3, 162), (4, 252)])
    def test_vertex_counts(self, level, count):
        assert icosphere_vertices(level).shape == (count, 3)

    def test_vertices_unit_and_distinct(self):
        for level in range(5):
            v = icosphere_vertices(level)
            assert np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-12)
            rounded = np.round(v, 6)
            assert np.unique(rounded, axis=0).shape[0] == v.shape[0]

    def test_cameras_at_radius_looking_at_target(self):
        target = np.array([0.5, -0.2, 1.0])
        poses = icosphere_cameras(1, 2.5, target)
        assert len(poses) == 42
        for pose in poses:
            pos = pose[:3, 3]
            assert np.linalg.norm(pos - target) == pytest.approx(2.5, abs=1e-6)
            # -z column points from the camera toward the target
            fwd = -pose[:3, 2]
            want = (target - pos) / np.linalg.norm(target - pos)
            assert np.allclose(fwd, want, atol=1e-9)

    def test_level_out_of_range(self):
        with pytest.raises(ValueError):
            icosphere_vertices(5)


class TestInferencePath:
    def test_endpoints_and_middle(self):
        poses = inference_path(181, radius=3.0)
        first, mid, last = poses[0], poses[90], poses[180]
        # azimuth -180 / elevation -90 start; 0/0 middle; 180/90 end
        assert np.allclose(first[:3, 3], 3.0 * np.array([0, -1, 0]), atol=1e-3)
        want_mid = 3.0 * np.array([np.sin(0), 0, np.cos(0)])
        assert np.allclose(mid[:3, 3], want_mid, atol=1e-9)
        assert np.allclose(last[:3, 3], 3.0 * np.array([0, 1, 0]), atol=1e-3)

    def test_three_views(self):
        poses = inference_path(3, radius=2.0)
        assert len(poses) == 3
        assert np.allclose(poses[1][:3, 3], [0, 0, 2.0], atol=1e-9)

    def test_unit_distance_everywhere(self):
        for pose in inference_path(13, radius=1.7, look_at=(1, 2, 3)):
            assert np.linalg.norm(pose[:3, 3] - [1, 2, 3]) == pytest.approx(1.7)
            rot = pose[:3, :3]
            assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-9

    def test_requires_two_views(self):
        with pytest.raises(ValueError):
            inference_path(1)


class TestTransferFunction:
    def test_interpolates_control_points(self):
        tf = TransferFunction.from_points([
            (0.0, (0, 0, 0), 0.0), (1.0, (1, 0.5, 0), 1.0)])
        rgb, op = tf.apply(np.array([0.5]))
        assert np.allclose(rgb[0], [0.5, 0.25, 0])
        assert op[0] == pytest.approx(0.5)

    def test_rejects_unsorted(self):
        with pytest.raises(ValueError):
            TransferFunction.from_points([(0.5, (0, 0, 0), 0.0), (0.2, (1, 1, 1), 1.0)])

    def test_rejects_bad_opacity(self):
        with pytest.raises(ValueError):
            TransferFunction.from_points([(0.0, (0, 0, 0), -0.1), (1.0, (1, 1, 1), 1.0)])


class TestAnalyticVolume:
    def test_scalar_in_unit_range(self, rng):
        for kind in ("blob-sum", "shell"):
            vol = demo_volume(kind)
            x = rng.uniform(-1, 1, (500, 3))
            s = vol.scalar(x)
            assert (s >= 0).all() and (s <= 1).all()

    def test_moving_blob_couples_to_parameter(self):
        vol = demo_volume("moving-blob", param_dims=1)
        x = np.array([[0.3, 0.05, 0.0]])
        assert vol.scalar(x, [0.0]) != vol.scalar(x, [1.0])

    def test_param_count_enforced(self):
        vol = demo_volume("moving-blob", param_dims=1)
        with pytest.raises(ValueError):
            vol.scalar(np.zeros((1, 3)), [])


class TestReferenceRender:
    def _camera(self, az=30.0, el=20.0, size=48):
        return Camera(pose_from_azel(az, el, 3.0), 55.0, size, size)

    def test_transparent_tf_gives_background(self):
        vol = demo_volume("blob-sum")
        tf = TransferFunction.from_points([
            (0.0, (1, 0, 0), 0.0), (1.0, (0, 1, 0), 0.0)])
        img = reference_render(vol, tf, self._camera(), background=(0.1, 0.2, 0.9))
        assert np.abs(img - np.array([0.1, 0.2, 0.9])).max() < 1e-12

    def test_step_doubling_converges(self):
        vol = demo_volume("blob-sum")
        tf = default_tf()
        cam = self._camera()
        a = reference_render(vol, tf, cam, steps=512)
        b = reference_render(vol, tf, cam, steps=1024)
        assert np.abs(a - b).max() < 1.0 / 255.0

    def test_centered_blob_is_left_right_symmetric(self):
        vol = AnalyticVolume("blob-sum", centers=[(0, 0, 0)], radii=[0.35],
                             amplitudes=[0.9])
        cam = Camera(pose_from_azel(0.0, 0.0, 3.0), 55.0, 49, 49)
        img = reference_render(vol, default_tf(), cam, steps=512)
        assert np.abs(img - img[:, ::-1]).max() < 1.0 / 255.0

    def test_rejects_few_steps(self):
        with pytest.raises(ValueError):
            reference_render(demo_volume("blob-sum"), default_tf(), self._camera(),
                             steps=32)


class TestGenerateDataset:
    def test_cartesian_frame_count_and_roundtrip(self, rng, tmp_path):
        vol = demo_volume("moving-blob", param_dims=1)
        poses = icosphere_cameras(0, 3.0)  # 12 cameras
        samples = np.linspace(0, 1, 3)[:, None]
        ds = generate_dataset(vol, default_tf(), poses, samples, tmp_path / "d",
                              width=24, height=24, steps=64)
        assert len(ds.frames) == 36
        again = load_dataset(tmp_path / "d")
        assert len(again.frames) == len(ds.frames)
        assert again.param_ranges == ds.param_ranges
        assert again.focal == ds.focal
        for a, b in zip(ds.frames, again.frames):
            assert a.file_path == b.file_path
            assert np.array_equal(a.pose, b.pose)
            assert np.array_equal(a.params, b.params)

    def test_regeneration_is_byte_identical(self, tmp_path):
        vol = demo_volume("blob-sum")
        poses = icosphere_cameras(0, 3.0)[:3]
        for name in ("a", "b"):
            generate_dataset(vol, default_tf(), poses, np.zeros((1, 0)),
                             tmp_path / name, width=16, height=16, steps=64)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                twin = tmp_path / "b" / f.relative_to(tmp_path / "a")
                assert f.read_bytes() == twin.read_bytes(), f.name

    def test_volume_rebuilt_from_manifest_matches(self, rng, tmp_path):
        vol = demo_volume("moving-blob", param_dims=2)
        poses = [pose_from_azel(10, 5, 3.0)]
        generate_dataset(vol, default_tf(), poses, np.array([[0.2, 0.8]]),
                         tmp_path / "d", width=16, height=16, steps=64)
        vol2, tf2, gen = volume_from_manifest(tmp_path / "d")
        x = rng.uniform(-1, 1, (50, 3))
        assert np.allclose(vol.scalar(x, [0.3, 0.6]), vol2.scalar(x, [0.3, 0.6]))

    def test_distinct_params(self, tmp_path):
        vol = demo_volume("moving-blob", param_dims=1)
        poses = icosphere_cameras(0, 3.0)[:2]
        ds = generate_dataset(vol, default_tf(), poses, np.array([[0.0], [0.5], [1.0]]),
                              tmp_path / "d", width=16, height=16, steps=64)
        assert ds.distinct_params().shape == (3, 1)


class TestPoseHelpers:
    def test_pole_poses_are_valid(self):
        for el in (-90.0, 90.0):
            pose = pose_from_azel(0.0, el, 2.0)
            rot = pose[:3, :3]
            assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-9
            assert np.isfinite(pose).all()

    def test_look_at_orthonormal(self, rng):
        for _ in range(20):
            pos = rng.normal(size=3) * 4
            if np.linalg.norm(pos) < 0.1:
                continue
            pose = look_at_pose(pos, np.zeros(3))
            rot = pose[:3, :3]
            assert np.abs(rot @ rot.T - np.eye(3)).max() < 1e-9
            assert np.linalg.det(rot) == pytest.approx(1.0, abs=1e-9)
