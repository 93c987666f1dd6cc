import math

import numpy as np
import pytest

from thermoface.enhancement import DiffusionConfig, anisotropic_diffuse, conductance, enhance_detail
from thermoface.imaging import ThermalImage


def single_step_oracle(data: np.ndarray, k: float, dt: float, mode: str) -> np.ndarray:
    """Direct per-pixel evaluation of the 4-neighbor update, replicate borders."""
    h, w = data.shape
    out = data.copy()

    def g(d):
        return math.exp(-abs(d) / k**2) if mode == "paper" else math.exp(-((d / k) ** 2))

    for y in range(h):
        for x in range(w):
            total = 0.0
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                ny = min(max(ny, 0), h - 1)
                nx = min(max(nx, 0), w - 1)
                d = data[ny, nx] - data[y, x]
                total += g(d) * d
            out[y, x] += dt * total
    return out


class TestConductance:
    def test_zero_gradient_is_one(self):
        assert conductance(0.0, 20.0, "paper") == 1.0
        assert conductance(0.0, 7.0, "perona_malik") == 1.0

    def test_paper_value_at_k20(self):
        # exp(-400 / 20**2) = exp(-1)
        assert conductance(400.0, 20.0, "paper") == pytest.approx(math.exp(-1), abs=1e-12)

    def test_perona_malik_value_at_k20(self):
        assert conductance(20.0, 20.0, "perona_malik") == pytest.approx(math.exp(-1), abs=1e-12)

    def test_range(self, rng):
        vals = conductance(rng.random(100) * 500, 20.0, "paper")
        assert np.all((vals > 0) & (vals <= 1))

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            conductance(1.0, 0.0, "paper")
        with pytest.raises(ValueError):
            conductance(1.0, 1.0, "weird")


class TestAnisotropicDiffuse:
    def test_uniform_unchanged(self):
        img = ThermalImage(np.full((9, 9), 42.0), units="raw")
        out = anisotropic_diffuse(img, DiffusionConfig(iterations=7))
        np.testing.assert_allclose(out.data, img.data, atol=1e-12)

    @pytest.mark.parametrize("mode", ["paper", "perona_malik"])
    def test_single_step_matches_hand_formula(self, rng, mode):
        data = rng.random((3, 3)) * 200
        cfg = DiffusionConfig(k=20.0, iterations=1, dt=0.2, exponent_mode=mode)
        out = anisotropic_diffuse(ThermalImage(data, units="raw"), cfg)
        np.testing.assert_allclose(out.data, single_step_oracle(data, 20.0, 0.2, mode), atol=1e-10)

    def test_single_step_matches_on_larger_grid(self, rng):
        data = rng.random((7, 11)) * 255
        cfg = DiffusionConfig(k=20.0, iterations=1, dt=0.25, exponent_mode="paper")
        out = anisotropic_diffuse(ThermalImage(data, units="raw"), cfg)
        np.testing.assert_allclose(out.data, single_step_oracle(data, 20.0, 0.25, "paper"), atol=1e-10)

    def test_step_edge_preservation_perona_malik(self, rng):
        # 200-count edge: conductance exp(-(200/20)^2) ~ 0, flux across the
        # edge is negligible while flat-region noise diffuses freely
        data = np.where(np.arange(40) < 20, 0.0, 200.0)[None, :].repeat(40, axis=0)
        data += rng.normal(0, 5.0, data.shape)
        cfg = DiffusionConfig(k=20.0, iterations=20, dt=0.2, exponent_mode="perona_malik")
        out = anisotropic_diffuse(ThermalImage(data, units="raw"), cfg).data
        edge_before = np.abs(data[:, 20] - data[:, 19]).mean()
        edge_after = np.abs(out[:, 20] - out[:, 19]).mean()
        assert edge_after >= 0.95 * edge_before
        noise_before = data[:, 5:15].std(axis=1).mean()
        noise_after = out[:, 5:15].std(axis=1).mean()
        assert noise_after <= 0.5 * noise_before

    def test_step_edge_diffuses_in_paper_mode(self):
        # this conductance variant divides |grad| by k^2, so a 200-count edge
        # sees exp(-0.5) ~ 0.61 and keeps diffusing; the modes genuinely differ
        data = np.where(np.arange(40) < 20, 0.0, 200.0)[None, :].repeat(8, axis=0)
        img = ThermalImage(data, units="raw")
        paper = anisotropic_diffuse(img, DiffusionConfig(k=20.0, iterations=20, exponent_mode="paper")).data
        pm = anisotropic_diffuse(img, DiffusionConfig(k=20.0, iterations=20, exponent_mode="perona_malik")).data
        paper_edge = abs(paper[4, 20] - paper[4, 19])
        pm_edge = abs(pm[4, 20] - pm[4, 19])
        assert pm_edge >= 0.95 * 200.0
        assert paper_edge < 0.5 * pm_edge

    def test_extremum_principle(self, rng):
        data = rng.random((16, 16)) * 255
        img = ThermalImage(data, units="raw")
        cfg = DiffusionConfig(k=15.0, iterations=1, dt=0.25)
        current = img
        for _ in range(25):
            current = anisotropic_diffuse(current, cfg)
            assert current.data.min() >= data.min() - 1e-9
            assert current.data.max() <= data.max() + 1e-9

    def test_global_sum_preserved(self, rng):
        data = np.zeros((24, 24))
        data[6:18, 6:18] = rng.random((12, 12)) * 100
        out = anisotropic_diffuse(ThermalImage(data, units="raw"), DiffusionConfig(k=20.0, iterations=20))
        assert abs(out.data.sum() - data.sum()) <= 1e-4 * abs(data.sum())

    def test_unstable_dt_rejected(self):
        with pytest.raises(ValueError):
            DiffusionConfig(dt=0.3)


class TestEnhanceDetail:
    def test_uniform_gives_zero(self):
        out = enhance_detail(ThermalImage(np.full((10, 10), 0.6)), DiffusionConfig())
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_constant_offset_invariance(self, rng):
        # commutes with constant offsets up to float rounding of (a+c)-(b+c)
        data = rng.random((12, 12)) * 50
        cfg = DiffusionConfig(k=10.0, iterations=5)
        base = enhance_detail(ThermalImage(data, units="raw"), cfg).data
        shifted = enhance_detail(ThermalImage(data + 17.25, units="raw"), cfg).data
        np.testing.assert_allclose(base, shifted, atol=1e-12)

    def test_detail_concentrates_near_edge(self):
        data = np.where(np.arange(60) < 30, 20.0, 220.0)[None, :].repeat(20, axis=0)
        cfg = DiffusionConfig(k=20.0, iterations=20, exponent_mode="paper")
        detail = enhance_detail(ThermalImage(data, units="raw"), cfg).data
        peak = np.abs(detail).max()
        off_edge = np.abs(detail[:, list(range(8)) + list(range(52, 60))])
        assert off_edge.max() < 0.1 * peak

    def test_output_may_be_negative(self):
        data = np.where(np.arange(20) < 10, 20.0, 220.0)[None, :].repeat(8, axis=0)
        detail = enhance_detail(ThermalImage(data, units="raw"), DiffusionConfig(k=20.0)).data
        assert detail.min() < 0 < detail.max()
