import numpy as np
import pytest

from thermoface.aam import AAM, AppearanceModel, params_from_shape, shape_from_params, similarity_params
from thermoface.errors import FitError
from thermoface.icaam import (
    FitConfig,
    _warped_template_error,
    compose_inverse_warp,
    fit,
    init_from_mask,
    precompute,
)
from thermoface.imaging import ThermalImage
from thermoface.segmentation import SegmentationMask, fit_face_ellipse
from thermoface.synthetic import pose_params, render_model_face, sample_pose
from thermoface.warp import barycentric_coordinates


def perturbed_init(model, true_landmarks, rng, shape_sigma=0.5, scale_jitter=0.05, translation=5.0):
    sigmas = np.sqrt(model.shape.variances)
    centroid = true_landmarks.mean(axis=0)
    scale = rng.uniform(1 - scale_jitter, 1 + scale_jitter)
    shift = rng.uniform(-translation, translation, size=2)
    init = params_from_shape(model.shape, scale * (true_landmarks - centroid) + centroid + shift)
    init[4:] += rng.uniform(-shape_sigma, shape_sigma, size=sigmas.size) * sigmas
    return init


class TestPrecompute:
    def test_hessian_symmetric_positive_definite(self, toy_pre):
        h = toy_pre.hessian
        assert np.array_equal(h, h.T)
        assert np.linalg.eigvalsh(h)[0] > 0

    def test_steepest_descent_orthogonal_to_appearance(self, toy_model, toy_pre):
        overlap = toy_model.appearance.basis @ toy_pre.steepest_descent.T
        assert np.abs(overlap).max() < 1e-9

    def test_zero_appearance_model_uses_identity_projection(self, toy_model, toy_pre):
        bare = AAM(
            shape=toy_model.shape,
            appearance=AppearanceModel(
                mean=toy_model.appearance.mean,
                basis=np.zeros((0, toy_model.appearance.mean.size)),
                variances=np.zeros(0),
            ),
            mesh=toy_model.mesh,
            raster=toy_model.raster,
            points=toy_model.points,
        )
        pre = precompute(bare)
        gx_sd = pre.jacobian[:, :, 0]
        assert pre.steepest_descent.shape == gx_sd.shape
        # without appearance components the rows are plain gradient products,
        # so they generally overlap the toy model's appearance basis
        assert not np.allclose(pre.steepest_descent, toy_pre.steepest_descent)

    def test_jacobian_vertex_parameter_is_barycentric_weight(self, toy_model, toy_pre):
        # a basis vector moving only vertex v in x moves each pixel of v's
        # triangles by its barycentric weight for v
        raster = toy_model.raster
        pixel = 220
        vids = raster.vertex_ids[pixel]
        basis = toy_model.shape.full_basis()
        for slot, vid in enumerate(vids):
            unit = np.zeros(basis.shape[1])
            unit[2 * vid] = 1.0
            coeffs = basis @ unit
            dx = coeffs @ toy_pre.jacobian[:, pixel, 0]
            residual_norm = np.linalg.norm(unit - basis.T @ coeffs)
            if residual_norm < 1e-8:
                assert dx == pytest.approx(raster.bary[pixel, slot], abs=1e-9)

    def test_jacobian_matches_finite_differences(self, toy_model, toy_pre):
        raster = toy_model.raster
        sample_pixels = np.arange(0, raster.n_pixels, 977)
        eps = 1e-4
        for j in range(0, toy_model.shape.n_params, 2):
            p_plus = np.zeros(toy_model.shape.n_params)
            p_plus[j] = eps
            s_plus = shape_from_params(toy_model.shape, p_plus)
            s_minus = shape_from_params(toy_model.shape, -p_plus)
            for pixel in sample_pixels:
                w = raster.bary[pixel]
                vid = raster.vertex_ids[pixel]
                pos_plus = w @ s_plus[vid]
                pos_minus = w @ s_minus[vid]
                fd = (pos_plus - pos_minus) / (2 * eps)
                np.testing.assert_allclose(toy_pre.jacobian[j, pixel], fd, atol=1e-4)

    def test_singular_hessian_reports_condition(self, toy_model):
        flat = AAM(
            shape=toy_model.shape,
            appearance=AppearanceModel(
                mean=np.zeros_like(toy_model.appearance.mean),
                basis=np.zeros((0, toy_model.appearance.mean.size)),
                variances=np.zeros(0),
            ),
            mesh=toy_model.mesh,
            raster=toy_model.raster,
            points=toy_model.points,
        )
        with pytest.raises(FitError, match="condition"):
            precompute(flat)


class TestInitFromMask:
    def test_self_consistency(self, toy_model):
        mask = SegmentationMask(toy_model.support_mask())
        params = init_from_mask(mask, toy_model)
        implied = shape_from_params(toy_model.shape, params)
        offset = np.abs(implied - toy_model.shape.mean)
        assert offset.max() < 0.02 * max(toy_model.frame_shape)

    def test_double_scale_mask(self, toy_model):
        support = toy_model.support_mask()
        ys, xs = np.nonzero(support)
        big = np.zeros((2 * support.shape[0], 2 * support.shape[1]), dtype=bool)
        big[2 * ys, 2 * xs] = True
        big[2 * ys + 1, 2 * xs] = True
        big[2 * ys, 2 * xs + 1] = True
        big[2 * ys + 1, 2 * xs + 1] = True
        params = init_from_mask(SegmentationMask(big), toy_model)
        implied = shape_from_params(toy_model.shape, params)
        implied_size = np.sqrt(((implied - implied.mean(0)) ** 2).sum(1).mean())
        mean = toy_model.shape.mean
        base_size = np.sqrt(((mean - mean.mean(0)) ** 2).sum(1).mean())
        assert implied_size / base_size == pytest.approx(2.0, rel=0.02)

    def test_rotation_follows_mask_within_clamp(self, toy_model):
        support = toy_model.support_mask()
        from scipy.ndimage import rotate

        rotated = rotate(support.astype(float), angle=-10.0, reshape=True, order=1) > 0.5
        params = init_from_mask(SegmentationMask(rotated), toy_model)
        implied = shape_from_params(toy_model.shape, params)
        ell = fit_face_ellipse(SegmentationMask(rotated))
        # implied orientation should be near the mask's
        centered = implied - implied.mean(axis=0)
        cov = centered.T @ centered
        major = np.linalg.eigh(cov)[1][:, 1]
        ang = np.arctan2(major[1], major[0]) % np.pi
        diff = (ang - ell.orientation + np.pi / 2) % np.pi - np.pi / 2
        assert abs(np.degrees(diff)) < 6.0

    def test_empty_mask_rejected(self, toy_model):
        from thermoface.errors import EmptyMaskError

        with pytest.raises(EmptyMaskError):
            init_from_mask(SegmentationMask(np.zeros((40, 40), dtype=bool)), toy_model)


class TestComposeInverseWarp:
    def test_zero_update_is_identity(self, toy_model, toy_pre, rng):
        params = sample_pose(toy_model, rng)
        out = compose_inverse_warp(params, np.zeros_like(params), toy_model, toy_pre)
        np.testing.assert_allclose(out, params, atol=1e-9)

    def test_pure_translation_inverts(self, toy_model, toy_pre):
        zero = np.zeros(toy_model.shape.n_params)
        delta = similarity_params(toy_model.shape, translation=(3.0, -2.0))
        out = compose_inverse_warp(zero, delta, toy_model, toy_pre)
        expected = similarity_params(toy_model.shape, translation=(-3.0, 2.0))
        np.testing.assert_allclose(out, expected, atol=1e-9)

    def test_matches_dense_composition_to_first_order(self, toy_model, toy_pre, rng):
        # oracle: numerically invert the update warp per vertex with the
        # deformed-mesh barycentric map, then push through the current warp
        mesh = toy_model.mesh
        mean = toy_model.shape.mean

        def dense_compose(params, delta):
            s_delta = shape_from_params(toy_model.shape, delta)
            s_cur = shape_from_params(toy_model.shape, params)
            out = np.zeros_like(mean)
            for i, target in enumerate(mean):
                tri = None
                for t in mesh.triangles:
                    w = barycentric_coordinates(s_delta[t], target[0], target[1])
                    if min(w) >= -1e-9:
                        tri = (t, w)
                        break
                if tri is None:
                    best, best_min = None, -np.inf
                    for t in mesh.triangles:
                        w = barycentric_coordinates(s_delta[t], target[0], target[1])
                        if min(w) > best_min:
                            best_min, best = min(w), (t, w)
                    tri = best
                t, (w1, w2, w3) = tri
                canonical_pre = w1 * mean[t[0]] + w2 * mean[t[1]] + w3 * mean[t[2]]
                for t2 in mesh.triangles:
                    w = barycentric_coordinates(mean[t2], canonical_pre[0], canonical_pre[1])
                    if min(w) >= -1e-9:
                        out[i] = w[0] * s_cur[t2[0]] + w[1] * s_cur[t2[1]] + w[2] * s_cur[t2[2]]
                        break
                else:
                    out[i] = canonical_pre + (s_cur - mean)[i]
            return out

        params = sample_pose(toy_model, rng, max_rotation=0.1, scale_range=(0.95, 1.05))
        for magnitude in (0.5, 0.25):
            delta = np.zeros_like(params)
            delta[:4] = rng.normal(0, magnitude, 4)
            delta[4:] = rng.normal(0, magnitude, delta.size - 4)
            composed = compose_inverse_warp(params, delta, toy_model, toy_pre)
            got = shape_from_params(toy_model.shape, composed)
            want = dense_compose(params, delta)
            err = np.abs(got - want).max()
            assert err <= 0.8 * (np.linalg.norm(delta) ** 2)


class TestFit:
    def test_perfect_init_converges_immediately(self, toy_model, toy_pre):
        # zero pose on the canonical frame samples at integer pixel centers,
        # so the warp chain is exact and the error sits at the true optimum
        pose = np.zeros(toy_model.shape.n_params)
        img = render_model_face(toy_model, pose, frame_shape=toy_model.frame_shape)
        result = fit(img, pose, toy_model, toy_pre, FitConfig())
        assert result.converged
        assert result.iterations <= 1
        assert result.error <= 1e-8

    def test_recovers_perturbed_init(self, toy_model, toy_pre, rng):
        failures = 0
        for _ in range(20):
            pose = sample_pose(toy_model, rng)
            img = render_model_face(toy_model, pose)
            true_lm = shape_from_params(toy_model.shape, pose)
            init = perturbed_init(toy_model, true_lm, rng)
            result = fit(img, init, toy_model, toy_pre, FitConfig())
            rms = np.sqrt(((result.landmarks - true_lm) ** 2).sum(axis=1).mean())
            if not (result.converged and rms < 0.5):
                failures += 1
        assert failures <= 1

    def test_far_init_reports_not_converged(self, toy_model, toy_pre):
        target = np.array([112.0, 112.0]) - toy_model.shape.mean.mean(axis=0)
        pose = pose_params(toy_model, translation=tuple(target))
        img = render_model_face(toy_model, pose, frame_shape=(224, 640))
        # displace by three face widths onto the flat zero background
        far = pose_params(toy_model, translation=tuple(target + np.array([3 * 128.0, 0.0])))
        result = fit(img, far, toy_model, toy_pre, FitConfig())
        assert not result.converged

    def test_fully_outside_image_rejected(self, toy_model, toy_pre):
        img = ThermalImage(np.zeros((64, 64)))
        away = pose_params(toy_model, translation=(4000.0, 4000.0))
        with pytest.raises(FitError):
            fit(img, away, toy_model, toy_pre, FitConfig())

    def test_damped_error_sequence_non_increasing(self, toy_model, toy_pre, rng):
        pose = sample_pose(toy_model, rng)
        img = render_model_face(toy_model, pose)
        true_lm = shape_from_params(toy_model.shape, pose)
        init = perturbed_init(toy_model, true_lm, rng)
        result = fit(img, init, toy_model, toy_pre, FitConfig())
        assert result.converged
        seq = _accepted_error_sequence(toy_model, toy_pre, img, init)
        assert len(seq) >= 2
        assert all(b <= a + 1e-15 for a, b in zip(seq, seq[1:]))
        assert seq[-1] == pytest.approx(result.error, rel=1e-9)

    def test_gain_equivariance_with_rank_one_appearance(self, toy_model, toy_pre, rng):
        # a model whose single appearance direction is the mean texture can
        # absorb a global gain, so the optimum does not move
        mean = toy_model.appearance.mean
        direction = mean / np.linalg.norm(mean)
        model = AAM(
            shape=toy_model.shape,
            appearance=AppearanceModel(
                mean=mean, basis=direction[None, :], variances=np.array([1.0])
            ),
            mesh=toy_model.mesh,
            raster=toy_model.raster,
            points=toy_model.points,
        )
        pre = precompute(model)
        pose = sample_pose(toy_model, rng, max_rotation=0.05)
        img = render_model_face(toy_model, pose)
        scaled = ThermalImage(img.data * 2.5)
        true_lm = shape_from_params(toy_model.shape, pose)
        init = perturbed_init(toy_model, true_lm, rng, shape_sigma=0.2, scale_jitter=0.02, translation=2.0)
        # gain scales the objective by a constant, so the minimizer of the
        # unscaled fit must be stationary for the scaled image too
        res_a = fit(img, init, model, pre, FitConfig())
        res_b = fit(scaled, res_a.params, model, pre, FitConfig())
        assert np.abs(res_a.landmarks - res_b.landmarks).max() < 1e-3
        # and a fresh scaled fit lands in the same noise-floor basin
        res_c = fit(scaled, init, model, pre, FitConfig())
        assert np.abs(res_a.landmarks - res_c.landmarks).max() < 0.25

    def test_alpha_reproduces_appearance_objective(self, toy_model, toy_pre, rng):
        # plugging the recovered texture coefficients into the full
        # appearance objective must not beat the reported error
        pose = sample_pose(toy_model, rng)
        alpha_true = rng.normal(0, 0.05, min(3, toy_model.appearance.n_components))
        img = render_model_face(toy_model, pose, alpha=alpha_true)
        true_lm = shape_from_params(toy_model.shape, pose)
        init = perturbed_init(toy_model, true_lm, rng, shape_sigma=0.2, translation=2.0)
        result = fit(img, init, toy_model, toy_pre, FitConfig())
        error_image, _, _ = _warped_template_error(toy_model, img.data, result.params)
        residual = error_image - result.alpha @ toy_model.appearance.basis
        assert residual @ residual <= result.error + 1e-8

    def test_non_finite_init_rejected(self, toy_model, toy_pre):
        bad = np.full(toy_model.shape.n_params, np.nan)
        with pytest.raises(FitError):
            fit(ThermalImage(np.zeros((64, 64))), bad, toy_model, toy_pre)


def _accepted_error_sequence(model, pre, img, init):
    cfg = FitConfig()
    params = init.copy()
    error_image, error, _ = _warped_template_error(model, img.data, params)
    seq = [error]
    for _ in range(cfg.max_iterations):
        delta = pre.hessian_inv @ (pre.steepest_descent @ error_image)
        if np.linalg.norm(delta) < cfg.param_tol:
            break
        accepted = None
        for h in range(9):
            step = delta / (2.0**h)
            candidate = compose_inverse_warp(params, step, model, pre)
            cand_image, cand_error, _ = _warped_template_error(model, img.data, candidate)
            if cand_error < error and h == 0:
                accepted = (candidate, cand_image, cand_error)
                break
            if cand_error < error and (accepted is None or cand_error < accepted[2]):
                accepted = (candidate, cand_image, cand_error)
        if accepted is None:
            break
        params, error_image, new_error = accepted
        drop = (error - new_error) / max(error, 1e-300)
        error = new_error
        seq.append(error)
        if drop < cfg.error_tol:
            break
    return seq
