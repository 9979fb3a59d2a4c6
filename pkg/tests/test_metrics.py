import numpy as np
import pytest

import factorfield as ff


class TestPsnr:
    def test_identical_images_hit_cap(self, rng):
        img = rng.uniform(0, 1, (24, 24, 3))
        assert ff.psnr(img, img) == 99.0

    def test_uniform_difference(self, rng):
        a = rng.uniform(0.2, 0.8, (16, 16, 3))
        b = a + 0.1
        assert ff.psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        b = rng.uniform(0, 1, (16, 16, 3))
        assert ff.psnr(a, b) == ff.psnr(b, a)

    def test_monotone_in_noise(self, rng):
        a = rng.uniform(0.3, 0.7, (32, 32, 3))
        noise = rng.normal(size=a.shape)
        values = [ff.psnr(a, np.clip(a + amp * noise, 0, 1))
                  for amp in (0.01, 0.02, 0.05, 0.1)]
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            ff.psnr(np.zeros((4, 4, 3)), np.zeros((5, 4, 3)))


class TestSsim:
    def test_identical_is_one(self, rng):
        img = rng.uniform(0, 1, (24, 24, 3))
        assert ff.ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        a = np.full((16, 16, 3), 0.2)
        b = np.full((16, 16, 3), 0.8)
        # luma of constant gray is the gray; structural term is 1, contrast 1
        c1 = 1e-4
        want = (2 * 0.2 * 0.8 + c1) / (0.2**2 + 0.8**2 + c1)
        assert ff.ssim(a, b) == pytest.approx(want, abs=1e-9)
        assert want == pytest.approx(0.4707, abs=1e-4)

    def test_symmetry(self, rng):
        a = rng.uniform(0, 1, (20, 20, 3))
        b = rng.uniform(0, 1, (20, 20, 3))
        assert ff.ssim(a, b) == pytest.approx(ff.ssim(b, a), abs=1e-9)

    def test_range(self, rng):
        a = rng.uniform(0, 1, (16, 16, 3))
        b = 1.0 - a
        assert -1.0 <= ff.ssim(a, b) <= 1.0

    def test_small_images_rejected(self):
        with pytest.raises(ValueError):
            ff.ssim(np.zeros((8, 8, 3)), np.zeros((8, 8, 3)))

    def test_matches_skimage_when_available(self, rng):
        pytest.importorskip("skimage")
        from skimage.metrics import structural_similarity
        a = rng.uniform(0, 1, (32, 32, 3))
        b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
        luma = np.array([0.299, 0.587, 0.114])
        want = structural_similarity(a @ luma, b @ luma, data_range=1.0,
                                     gaussian_weights=True, sigma=1.5,
                                     use_sample_covariance=False)
        assert ff.ssim(a, b) == pytest.approx(want, abs=2e-3)
