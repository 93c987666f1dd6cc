import math

import numpy as np
import pytest

from thermoface.errors import EmptyMaskError
from thermoface.imaging import ThermalImage, gaussian_kernel1d
from thermoface.vesselness import (
    VesselnessConfig,
    extract_signature,
    vesselness_at_scale,
    vesselness_multiscale,
)


def gaussian_ridge(amplitude, sigma_r, size=61, horizontal=True):
    offsets = np.arange(size, dtype=np.float64) - size // 2
    profile = amplitude * np.exp(-0.5 * (offsets / sigma_r) ** 2)
    data = np.tile(profile[:, None], (1, size))
    return ThermalImage(data if horizontal else data.T, units="raw")


def ridge_vesselness_oracle(amplitude, sigma_r, s, gamma, beta, c, offsets):
    """Closed-form response of a Gaussian ridge under the defined operators.

    The ridge is constant along one axis, so the 2D pipeline reduces to one
    dimension: convolve the Gaussian profile with the defined sampled and
    truncated blur kernel analytically (a finite sum of shifted Gaussians),
    take the exact central second difference, scale-normalize, and evaluate
    the vesselness formula with lambda1 = 0.
    """
    kernel = gaussian_kernel1d(s)
    radius = len(kernel) // 2

    def blurred(y):
        taps = y - np.arange(-radius, radius + 1)
        return float(kernel @ (amplitude * np.exp(-0.5 * (taps / sigma_r) ** 2)))

    values = []
    for y in offsets:
        hyy = (blurred(y - 1) - 2.0 * blurred(y) + blurred(y + 1)) * s**gamma
        lam2 = hyy
        if lam2 > 0:
            values.append(0.0)
            continue
        strength = abs(lam2)
        values.append(1.0 - math.exp(-(strength**2) / (2.0 * c**2)))
    return np.array(values)


class TestSingleScale:
    def test_uniform_image_all_zero(self):
        out = vesselness_at_scale(ThermalImage(np.full((30, 30), 0.7)), 3.0, VesselnessConfig())
        assert np.all(out.values == 0.0)

    def test_bright_blob_suppressed_by_blobness(self):
        ys, xs = np.mgrid[0:41, 0:41] - 20.0
        blob = np.exp(-(ys**2 + xs**2) / (2 * 4.0**2))
        cfg = VesselnessConfig(beta=0.5, s_min=3, s_max=5)
        out = vesselness_at_scale(ThermalImage(blob, units="raw"), 4.0, cfg)
        # isotropic Hessian: ratio ~ 1, so the response cannot exceed
        # exp(-1/(2 beta^2)) ~ 0.135 of the structureness ceiling
        assert out.values[20, 20] <= math.exp(-1.0 / (2 * 0.5**2)) + 0.01

    def test_ridge_crest_matches_closed_form_oracle(self):
        amplitude, sigma_r, s = 100.0, 3.0, 4.0
        img = gaussian_ridge(amplitude, sigma_r)
        c = 0.05 * amplitude
        cfg = VesselnessConfig(beta=0.5, c_struct=c, s_min=3, s_max=5, gamma=2.0)
        out = vesselness_at_scale(img, s, cfg)
        offsets = np.array([0, 1, 2, 3, 5, 8])
        expected = ridge_vesselness_oracle(amplitude, sigma_r, s, 2.0, 0.5, c, offsets)
        got = out.values[30 + offsets, 30]
        np.testing.assert_allclose(got, expected, atol=1e-3)

    def test_ridge_crest_near_structureness_ceiling(self):
        img = gaussian_ridge(100.0, 3.0)
        cfg = VesselnessConfig(s_min=3, s_max=5)
        out = vesselness_at_scale(img, 4.0, cfg)
        # constant along the ridge makes the blobness ratio exactly zero, so
        # the response is the structureness factor itself; with automatic c
        # the crest sits at strength = 2c
        crest = out.values[30, :].max()
        assert crest == pytest.approx(1.0 - math.exp(-2.0), abs=1e-12)

    def test_dark_ridge_rejected(self):
        img = gaussian_ridge(-100.0, 3.0)
        out = vesselness_at_scale(img, 3.0, VesselnessConfig())
        assert np.all(out.values[28:33, :] == 0.0)

    def test_paper_mode_formula(self):
        img = gaussian_ridge(100.0, 3.0)
        c = 5.0
        cfg = VesselnessConfig(c_struct=c, formula_mode="paper", s_min=3, s_max=3)
        out = vesselness_at_scale(img, 3.0, cfg)
        # lambda1 = 0 on the crest row, so the first factor is
        # 1 - exp(0) = 0 and this variant kills the pure ridge
        assert np.all(out.values[30, 5:-5] == 0.0)

    def test_paper_mode_on_blob(self):
        ys, xs = np.mgrid[0:41, 0:41] - 20.0
        blob = -np.exp(-(ys**2 + xs**2) / (2 * 4.0**2))  # bright-centered? no: dark
        cfg = VesselnessConfig(formula_mode="paper")
        out = vesselness_at_scale(ThermalImage(-blob, units="raw"), 4.0, cfg)
        center = out.values[20, 20]
        # bright blob: ratio 1 gives first factor 1 - exp(-1/(2 b^2)) = 0.86
        assert 0 < center < 1

    def test_scale_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            vesselness_at_scale(ThermalImage(np.zeros((10, 10))), 9.0, VesselnessConfig())


class TestMultiscale:
    def test_single_scale_range_equals_single_map(self, rng):
        img = ThermalImage(rng.random((25, 25)))
        cfg = VesselnessConfig(s_min=4, s_max=4)
        multi = vesselness_multiscale(img, cfg)
        single = vesselness_at_scale(img, 4.0, cfg)
        np.testing.assert_array_equal(multi.values, single.values)
        assert multi.scales == (4.0,)

    def test_equals_pointwise_max_of_per_scale_maps(self, rng):
        img = ThermalImage(rng.random((30, 30)))
        cfg = VesselnessConfig()
        per_scale = [vesselness_at_scale(img, s, cfg).values for s in cfg.scales()]
        multi = vesselness_multiscale(img, cfg)
        np.testing.assert_array_equal(multi.values, np.maximum.reduce(per_scale))

    def test_tube_argmax_scale_tracks_radius(self):
        # a hard-edged bar of half-width 4 blurred at scale s peaks, under
        # second-derivative normalization, exactly at s = 4; a fixed c keeps
        # the per-scale responses magnitude-comparable (automatic c anchors
        # every scale's crest to the same value by construction)
        data = np.zeros((81, 81))
        data[37:45, :] = 100.0  # half-width 4, edges at rows 36.5 / 44.5
        img = ThermalImage(data, units="raw")
        cfg = VesselnessConfig(s_min=3, s_max=5, c_struct=25.0)
        stack = [vesselness_at_scale(img, s, cfg).values for s in (3.0, 4.0, 5.0)]
        argmax = np.argmax(np.stack(stack), axis=0)
        centerline = np.concatenate([argmax[40, 10:-10], argmax[41, 10:-10]])
        assert (centerline == 1).mean() >= 0.8

    def test_range_bounds(self, rng):
        for mode in ("frangi", "paper"):
            img = ThermalImage(rng.random((30, 30)) * 3, units="raw")
            out = vesselness_multiscale(img, VesselnessConfig(formula_mode=mode))
            assert np.all(out.values >= 0.0)
            assert np.all(out.values < 1.0)

    def test_rotation_equivariance_quarter_turn(self):
        rng = np.random.default_rng(5)
        base = np.zeros((50, 50))
        base[24, 10:40] = 90.0
        base += rng.random((50, 50))
        img = ThermalImage(base, units="raw")
        cfg = VesselnessConfig(c_struct=1.0)
        straight = vesselness_multiscale(img, cfg).values
        rotated = vesselness_multiscale(ThermalImage(np.rot90(base), units="raw"), cfg).values
        np.testing.assert_allclose(rotated, np.rot90(straight), atol=1e-9)

    def test_gain_monotonicity_with_fixed_c(self, rng):
        data = rng.random((30, 30))
        cfg = VesselnessConfig(c_struct=0.02)
        low = vesselness_multiscale(ThermalImage(data, units="raw"), cfg).values
        high = vesselness_multiscale(ThermalImage(3.0 * data, units="raw"), cfg).values
        assert np.all(high >= low - 1e-12)


class TestExtractSignature:
    def test_all_zero_frontal(self, toy_model):
        img = ThermalImage(np.zeros(toy_model.frame_shape))
        out = extract_signature(img, toy_model.support_mask(), VesselnessConfig())
        assert np.all(out.values == 0.0)

    def test_off_mask_exactly_zero(self, toy_model, rng):
        img = ThermalImage(rng.random(toy_model.frame_shape))
        mask = toy_model.support_mask()
        out = extract_signature(img, mask, VesselnessConfig())
        assert np.all(out.values[~mask] == 0.0)

    def test_empty_mask_rejected(self, rng):
        with pytest.raises(EmptyMaskError):
            extract_signature(ThermalImage(rng.random((20, 20))), np.zeros((20, 20), bool), VesselnessConfig())

    def test_mask_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            extract_signature(ThermalImage(rng.random((20, 20))), np.ones((10, 10), bool), VesselnessConfig())

    def test_scale_robustness_real_beats_binary(self):
        from thermoface.synthetic import scale_robustness_experiment

        result = scale_robustness_experiment(n_images=3, seed=21)
        assert result["mean_real"] >= 0.8
        assert result["mean_real"] > result["mean_binary"]


class TestConfig:
    def test_scales_enumeration(self):
        assert VesselnessConfig(s_min=3, s_max=5, s_step=1).scales() == (3.0, 4.0, 5.0)
        assert VesselnessConfig(s_min=2, s_max=3, s_step=0.5).scales() == (2.0, 2.5, 3.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            VesselnessConfig(s_min=0.5)
        with pytest.raises(ValueError):
            VesselnessConfig(s_min=5, s_max=3)
        with pytest.raises(ValueError):
            VesselnessConfig(beta=0.0)
        with pytest.raises(ValueError):
            VesselnessConfig(formula_mode="other")

    def test_hash_tracks_numeric_changes(self):
        a = VesselnessConfig()
        b = VesselnessConfig(beta=0.6)
        assert a.config_hash != b.config_hash
        assert a.config_hash == VesselnessConfig().config_hash
