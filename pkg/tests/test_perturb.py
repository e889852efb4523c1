import numpy as np
import pytest

from servosim.perturb import PerturbationConfig, perturb
from servosim.simenv import make_poster_texture


def fresh_rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


class TestPerturb:
    def test_disabled_is_identity(self):
        img = make_poster_texture(0, 120, 90)
        cfg = PerturbationConfig(enabled=False)
        out = perturb(img, cfg, fresh_rng())
        assert np.array_equal(out, img)

    def test_null_parameters_identity(self):
        img = make_poster_texture(1, 120, 90)
        cfg = PerturbationConfig(brightness=0.0, contrast=0.0, erase_prob=0.0,
                                 noise_sigma=0.0)
        out = perturb(img, cfg, fresh_rng())
        assert np.array_equal(out, img)

    def test_same_seed_bit_identical(self):
        img = make_poster_texture(2, 160, 120)
        cfg = PerturbationConfig()
        a = perturb(img, cfg, fresh_rng(7))
        b = perturb(img, cfg, fresh_rng(7))
        assert np.array_equal(a, b)

    def test_output_range_valid(self):
        img = make_poster_texture(3, 160, 120)
        cfg = PerturbationConfig(noise_sigma=0.3)
        for seed in range(20):
            out = perturb(img, cfg, fresh_rng(seed))
            assert out.dtype == np.uint8
            assert out.min() >= 0 and out.max() <= 255

    def test_forced_erase_rectangle_geometry(self):
        # erase always on, no other effects: exactly one rectangle of the
        # requested area fraction is overwritten, the rest is untouched
        img = np.full((100, 100, 3), 200, dtype=np.uint8)
        cfg = PerturbationConfig(brightness=0.0, contrast=0.0, erase_prob=1.0,
                                 erase_scale=(0.25, 0.25), erase_ratio=(1.0, 1.0),
                                 noise_sigma=0.0)
        out = perturb(img, cfg, fresh_rng(3))
        changed = np.any(out != img, axis=2)
        ys, xs = np.nonzero(changed)
        h = ys.max() - ys.min() + 1
        w = xs.max() - xs.min() + 1
        assert h * w == changed.sum()  # a single solid rectangle
        assert abs(h * w - 2500) <= 2 * (h + w)  # area 2500 up to rounding

    def test_erase_frequency_and_area_bounds(self):
        img = np.full((80, 80, 3), 128, dtype=np.uint8)
        cfg = PerturbationConfig(brightness=0.0, contrast=0.0, erase_prob=0.5,
                                 noise_sigma=0.0)
        rng = fresh_rng(11)
        hits = 0
        n = 1000
        for _ in range(n):
            out = perturb(img, cfg, rng)
            changed = np.any(out != img, axis=2)
            count = int(changed.sum())
            if count:
                hits += 1
                frac = count / (80 * 80)
                assert 0.015 <= frac <= 0.35  # bounds up to integer rounding
        assert abs(hits / n - 0.5) < 0.05

    def test_brightness_only_scales(self):
        img = np.full((50, 50, 3), 100, dtype=np.uint8)
        cfg = PerturbationConfig(brightness=0.6, contrast=0.0, erase_prob=0.0,
                                 noise_sigma=0.0)
        out = perturb(img, cfg, fresh_rng(5))
        assert len(np.unique(out)) == 1  # uniform stays uniform
        factor = float(out[0, 0, 0]) / 100.0
        assert 0.4 - 0.01 <= factor <= 1.6 + 0.01

    def test_contrast_pulls_toward_mean(self):
        img = np.zeros((10, 10, 3), dtype=np.uint8)
        img[:, 5:] = 200  # two-level image, mean gray = 100
        cfg = PerturbationConfig(brightness=0.0, contrast=0.4, erase_prob=0.0,
                                 noise_sigma=0.0)
        # find a draw with factor < 1 (contrast reduction)
        for seed in range(30):
            out = perturb(img, cfg, fresh_rng(seed))
            if out[0, 0, 0] > 0:
                spread_in = 200
                spread_out = int(out[0, 9, 0]) - int(out[0, 0, 0])
                assert spread_out < spread_in
                break
        else:
            pytest.fail("no contrast-reducing draw found")

    def test_validation(self):
        with pytest.raises(ValueError):
            PerturbationConfig(erase_prob=1.5)
        with pytest.raises(ValueError):
            PerturbationConfig(erase_scale=(0.4, 0.1))

    def test_blur_flag_applies_spatial_blur(self):
        img = np.zeros((60, 60, 3), dtype=np.uint8)
        img[30:, :] = 255
        cfg = PerturbationConfig(brightness=0.0, contrast=0.0, erase_prob=0.0,
                                 noise_sigma=0.0, blur_sigma_px=3.0)
        out = perturb(img, cfg, fresh_rng(0))
        # the hard edge is softened
        assert 10 < int(out[30, 30, 0]) < 245
