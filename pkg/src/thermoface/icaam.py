"""Inverse compositional fitting of the shape model to an enhanced image.

The fixed template is the canonical mean texture. Each iteration warps the
image onto the canonical support with the current parameters, forms the error
against the mean texture, and solves the precomputed Gauss-Newton normal
equations for a warp update, which is then composed inversely with the
current warp. Appearance variation is handled by projecting the steepest
descent images orthogonal to the texture basis (project-out), so texture
coefficients are recovered once after convergence instead of being iterated.

Everything that does not depend on the image (template gradient, warp
Jacobians, steepest descent images, the Hessian and its inverse) is computed
once per model in :func:`precompute`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_erosion

from .aam import AAM, params_from_shape, shape_from_params
from .errors import FitError
from .imaging import ThermalImage
from .segmentation import SegmentationMask, fit_face_ellipse
from .warp import bilinear_sample

__all__ = [
    "FitConfig",
    "Precomputed",
    "FitResult",
    "precompute",
    "init_from_mask",
    "fit",
    "compose_inverse_warp",
]

MAX_INIT_ROTATION = math.radians(20.0)


@dataclass(frozen=True)
class FitConfig:
    """Termination and damping controls for the fit loop."""

    max_iterations: int = 50
    param_tol: float = 1e-3
    error_tol: float = 1e-5
    damping: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.param_tol <= 0 or self.error_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class Precomputed:
    """Image-independent quantities of the inverse compositional solver.

    ``steepest_descent`` rows are template-gradient steepest descent images
    with the appearance-basis component projected out; ``hessian`` is their
    Gram matrix (symmetric positive definite for a usable model).
    """

    jacobian: np.ndarray
    steepest_descent: np.ndarray
    hessian: np.ndarray
    hessian_inv: np.ndarray
    vertex_entry_tri: np.ndarray
    vertex_entry_starts: np.ndarray
    vertex_entry_counts: np.ndarray


def _template_gradient(model: AAM) -> tuple[np.ndarray, np.ndarray]:
    """Mean-texture gradient over the support, zeroed along the mesh rim.

    Pixels within two pixels of the support boundary see the artificial
    face-to-zero step whose linearization radius is under a pixel; keeping
    them in the normal equations shrinks every Gauss-Newton step, so their
    gradient is masked out and updates are driven by interior structure.
    """
    frame = np.zeros(model.frame_shape, dtype=np.float64)
    yx = model.raster.pixel_yx
    frame[yx[:, 0], yx[:, 1]] = model.appearance.mean
    gy, gx = np.gradient(frame)
    support = model.support_mask()
    interior = binary_erosion(support, structure=np.ones((5, 5), dtype=bool), border_value=0)
    keep = interior[yx[:, 0], yx[:, 1]].astype(np.float64)
    return gx[yx[:, 0], yx[:, 1]] * keep, gy[yx[:, 0], yx[:, 1]] * keep


def _vertex_incidence(model: AAM) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-vertex lists of incident triangles, flattened for vectorized use."""
    tris = model.mesh.triangles
    n_points = model.shape.n_points
    vertex_of_entry = tris.ravel()
    tri_of_entry = np.repeat(np.arange(tris.shape[0], dtype=np.int32), 3)
    order = np.argsort(vertex_of_entry, kind="stable")
    entry_tri = tri_of_entry[order]
    counts = np.bincount(vertex_of_entry, minlength=n_points)
    if np.any(counts == 0):
        raise FitError("mesh leaves a landmark outside every triangle")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return entry_tri, starts.astype(np.int64), counts.astype(np.int64)


def precompute(model: AAM) -> Precomputed:
    """Steepest descent images, Gauss-Newton Hessian, and composition tables.

    The warp Jacobian at zero parameters is barycentric: moving one vertex
    moves each pixel of its triangles by the pixel's barycentric weight for
    that vertex. Projected steepest descent rows are orthogonal to every
    appearance component; a singular Hessian is reported with its condition
    number.
    """
    if model.shape.n_params < 1:
        raise FitError("model has no shape or similarity parameters")
    raster = model.raster
    basis = model.shape.full_basis().reshape(model.shape.n_params, model.shape.n_points, 2)
    # dW/dp per pixel: barycentric blend of the basis motion of its 3 vertices
    vertex_motion = basis[:, raster.vertex_ids, :]  # (P, N, 3, 2)
    jacobian = np.einsum("pnid,ni->pnd", vertex_motion, raster.bary)
    gx, gy = _template_gradient(model)
    sd = jacobian[:, :, 0] * gx + jacobian[:, :, 1] * gy
    app = model.appearance.basis
    if app.shape[0] > 0:
        sd = sd - (sd @ app.T) @ app
    hessian = sd @ sd.T
    eigvals = np.linalg.eigvalsh(hessian)
    if eigvals[0] <= eigvals[-1] * 1e-12 or eigvals[0] <= 0:
        cond = float("inf") if eigvals[0] <= 0 else float(eigvals[-1] / eigvals[0])
        raise FitError(f"singular Gauss-Newton Hessian (condition number {cond:.3e})")
    entry_tri, starts, counts = _vertex_incidence(model)
    return Precomputed(
        jacobian=jacobian,
        steepest_descent=sd,
        hessian=hessian,
        hessian_inv=np.linalg.inv(hessian),
        vertex_entry_tri=entry_tri,
        vertex_entry_starts=starts,
        vertex_entry_counts=counts,
    )


def _wrap_half_pi(angle: float) -> float:
    """Fold an axis angle difference into (-pi/2, pi/2]."""
    return -((-angle + math.pi / 2) % math.pi - math.pi / 2)


def init_from_mask(mask: SegmentationMask, model: AAM) -> np.ndarray:
    """Similarity initialization matching the mask's moment ellipse.

    The canonical support region's own moment ellipse is mapped onto the
    mask's in center and scale; the rotation is the orientation difference,
    clamped to +-20 degrees because near-circular masks estimate it poorly.
    Deformation coefficients start at zero.
    """
    ellipse = fit_face_ellipse(mask)
    reference = fit_face_ellipse(SegmentationMask(model.support_mask()))
    scale = math.sqrt((ellipse.a * ellipse.b) / (reference.a * reference.b))
    rotation = _wrap_half_pi(ellipse.orientation - reference.orientation)
    rotation = max(-MAX_INIT_ROTATION, min(MAX_INIT_ROTATION, rotation))
    mean = model.shape.mean
    cos_t, sin_t = math.cos(rotation), math.sin(rotation)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    ref_center = np.array(reference.center)
    target = scale * (mean - ref_center) @ rot.T + np.array(ellipse.center)
    return params_from_shape(model.shape, target)


@dataclass(frozen=True)
class FitResult:
    """Converged (or stalled) state of one fit."""

    landmarks: np.ndarray
    params: np.ndarray
    alpha: np.ndarray
    error: float
    iterations: int
    converged: bool


def _warped_template_error(model: AAM, image: np.ndarray, params: np.ndarray):
    """Error image against the mean texture and its projected squared norm."""
    shape = shape_from_params(model.shape, params)
    pos = np.einsum("ni,nid->nd", model.raster.bary, shape[model.raster.vertex_ids])
    values = bilinear_sample(image, pos[:, 0], pos[:, 1])
    values = values - values.mean()
    error_image = values - model.appearance.mean
    app = model.appearance.basis
    sq = float(error_image @ error_image)
    if app.shape[0] > 0:
        sq -= float(((app @ error_image) ** 2).sum())
        sq = max(sq, 0.0)
    return error_image, sq, pos


def compose_inverse_warp(
    params: np.ndarray, delta: np.ndarray, model: AAM, pre: Precomputed | None = None
) -> np.ndarray:
    """Compose the current warp with the inverse of the update warp.

    Each canonical vertex is moved backwards through the update (first-order
    inverse), pushed through the current warp by the affine maps of its
    incident triangles, and the averaged result is re-projected onto the
    shape basis. The projection is least squares and exact for in-span
    shapes, so a zero update returns the parameters unchanged.
    """
    shape_model = model.shape
    params = np.asarray(params, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if params.shape != delta.shape or params.shape != (shape_model.n_params,):
        raise ValueError("parameter vectors must both match the model")
    if pre is None:
        entry_tri, starts, counts = _vertex_incidence(model)
    else:
        entry_tri, starts, counts = (
            pre.vertex_entry_tri,
            pre.vertex_entry_starts,
            pre.vertex_entry_counts,
        )
    mean = shape_model.mean
    motion = (delta @ shape_model.full_basis()).reshape(-1, 2)
    backtracked = mean - motion
    current = shape_from_params(shape_model, params)

    tris = model.mesh.triangles[entry_tri]  # (K, 3)
    a, b, c = mean[tris[:, 0]], mean[tris[:, 1]], mean[tris[:, 2]]
    vertex_ids = np.repeat(np.arange(shape_model.n_points), counts)
    p = backtracked[vertex_ids]
    det = (b[:, 1] - c[:, 1]) * (a[:, 0] - c[:, 0]) + (c[:, 0] - b[:, 0]) * (a[:, 1] - c[:, 1])
    w1 = ((b[:, 1] - c[:, 1]) * (p[:, 0] - c[:, 0]) + (c[:, 0] - b[:, 0]) * (p[:, 1] - c[:, 1])) / det
    w2 = ((c[:, 1] - a[:, 1]) * (p[:, 0] - c[:, 0]) + (a[:, 0] - c[:, 0]) * (p[:, 1] - c[:, 1])) / det
    w3 = 1.0 - w1 - w2
    targets = (
        w1[:, None] * current[tris[:, 0]]
        + w2[:, None] * current[tris[:, 1]]
        + w3[:, None] * current[tris[:, 2]]
    )
    sums = np.add.reduceat(targets, starts, axis=0)
    composed = sums / counts[:, None]
    return params_from_shape(shape_model, composed)


def fit(
    img_enhanced: ThermalImage,
    init: np.ndarray,
    model: AAM,
    pre: Precomputed,
    cfg: FitConfig | None = None,
) -> FitResult:
    """Minimize the canonical-frame error by inverse compositional updates.

    Iterates warp, error, and the precomputed normal equations; with damping
    on, a step that raises the error is halved up to 8 times and the accepted
    error sequence never increases. Convergence means the update norm fell
    below ``param_tol`` or the relative error change below ``error_tol``;
    stalling (no non-increasing step found) reports ``converged=False``.
    Appearance coefficients are recovered from the final error image.
    """
    cfg = cfg or FitConfig()
    init = np.asarray(init, dtype=np.float64)
    if not np.all(np.isfinite(init)):
        raise FitError("initialization parameters must be finite")
    image = img_enhanced.data
    height, width = image.shape

    params = init.copy()
    error_image, error, pos = _warped_template_error(model, image, params)
    inside = (
        (pos[:, 0] > -0.5) & (pos[:, 0] < width - 0.5) & (pos[:, 1] > -0.5) & (pos[:, 1] < height - 0.5)
    )
    if not inside.any():
        raise FitError("initialization places the mesh entirely outside the image")
    if not math.isfinite(error):
        raise FitError("non-finite fitting error at initialization")

    sd = pre.steepest_descent
    h_inv = pre.hessian_inv
    converged = False
    made_progress = False
    iterations = 0
    for _ in range(cfg.max_iterations):
        iterations += 1
        delta = h_inv @ (sd @ error_image)
        if np.linalg.norm(delta) < cfg.param_tol:
            converged = True
            break
        accepted = None
        # take the full Gauss-Newton step whenever it descends; otherwise
        # pick the most productive of the halved steps instead of the first
        # acceptable one, which can be microscopically small
        for h in range(9 if cfg.damping else 1):
            step = delta / (2.0**h)
            candidate = compose_inverse_warp(params, step, model, pre)
            cand_error_image, cand_error, _ = _warped_template_error(model, image, candidate)
            descends = cand_error < error
            if not cfg.damping or (descends and h == 0):
                accepted = (candidate, cand_error_image, cand_error, step)
                break
            if descends and (accepted is None or cand_error < accepted[2]):
                accepted = (candidate, cand_error_image, cand_error, step)
        if accepted is None:
            # no descent step exists: a local minimum if we ever moved,
            # a flat plateau (e.g. mesh off the face) if we never did
            converged = made_progress
            break
        made_progress = True
        params, error_image, new_error, step = accepted
        relative_drop = (error - new_error) / max(error, 1e-300)
        error = new_error
        if relative_drop < cfg.error_tol:
            converged = True
            break
        if np.linalg.norm(step) < cfg.param_tol:
            converged = True
            break

    app = model.appearance.basis
    alpha = app @ error_image if app.shape[0] > 0 else np.zeros(0)
    return FitResult(
        landmarks=shape_from_params(model.shape, params),
        params=params,
        alpha=alpha,
        error=error,
        iterations=iterations,
        converged=converged,
    )
