"""Statistical shape and appearance model over a triangulated face mesh.

The shape model is a PCA basis over Procrustes-aligned landmark vectors plus
four similarity vectors spanning global scale, rotation, and translation of
the mean shape. Training data is projected orthogonal to the similarity span
before the PCA, so the combined basis is exactly orthonormal and a parameter
vector splits cleanly into (similarity, deformation) parts.

The appearance model is a PCA basis over canonical-frame pixel vectors of
detail-enhanced training images, each warped onto the mean mesh and freed of
its DC component. All coordinates are canonical-frame pixels: the mean shape
is scaled so its bounding box's long side is 128 px and placed with a 4 px
margin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .enhancement import DiffusionConfig, enhance_detail
from .errors import DegenerateShapeError, ModelFormatError
from .imaging import ThermalImage
from .warp import (
    FrameRaster,
    TriangulatedMesh,
    delaunay_mesh,
    rasterize_mesh,
    triangle_areas,
    warp_via_raster,
)

__all__ = [
    "PointDefinition",
    "ShapeModel",
    "AppearanceModel",
    "AAM",
    "procrustes_align",
    "mirror_augment",
    "train_shape_model",
    "train_appearance_model",
    "train_aam",
    "shape_from_params",
    "params_from_shape",
    "similarity_params",
    "synthesize_frontal",
    "read_landmarks",
    "write_landmarks",
    "save_model",
    "load_model",
]

MODEL_FORMAT_VERSION = 1
FRAME_LONG_SIDE = 128
FRAME_MARGIN = 4


# ---------------------------------------------------------------------------
# Landmark and point-definition files


@dataclass(frozen=True)
class PointDefinition:
    """Model-wide landmark ordering: point names plus the mirror permutation."""

    names: tuple[str, ...]
    mirror: np.ndarray

    def __post_init__(self):
        mirror = np.asarray(self.mirror, dtype=np.int32)
        if mirror.shape != (len(self.names),):
            raise ValueError("mirror permutation length must match point count")
        if not np.array_equal(mirror[mirror], np.arange(len(self.names))):
            raise ValueError("mirror permutation must be an involution")
        object.__setattr__(self, "mirror", mirror)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def count(self) -> int:
        return len(self.names)

    def save(self, path) -> None:
        lines = [f"P {self.count}"]
        lines += [f"{name} {idx}" for name, idx in zip(self.names, self.mirror)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "PointDefinition":
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
        head = lines[0].split()
        if len(head) != 2 or head[0] != "P":
            raise ValueError(f"{path}: point definition must start with 'P <count>'")
        count = int(head[1])
        if len(lines) != count + 1:
            raise ValueError(f"{path}: expected {count} point lines")
        names = []
        mirror = []
        for ln in lines[1:]:
            name, idx = ln.split()
            names.append(name)
            mirror.append(int(idx))
        return cls(names=tuple(names), mirror=np.array(mirror))


def read_landmarks(path) -> np.ndarray:
    """Read an (L, 2) landmark array from 'L <count>' followed by 'x y' lines."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    head = lines[0].split()
    if len(head) != 2 or head[0] != "L":
        raise ValueError(f"{path}: landmark file must start with 'L <count>'")
    count = int(head[1])
    if len(lines) != count + 1:
        raise ValueError(f"{path}: expected {count} landmark lines")
    pts = np.array([[float(v) for v in ln.split()] for ln in lines[1:]], dtype=np.float64)
    if pts.shape != (count, 2):
        raise ValueError(f"{path}: each landmark line must hold 'x y'")
    return pts


def write_landmarks(path, points: np.ndarray) -> None:
    points = np.asarray(points, dtype=np.float64)
    lines = [f"L {points.shape[0]}"]
    lines += [f"{float(x)!r} {float(y)!r}" for x, y in points]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Procrustes alignment and mirror augmentation


def _rms_size(shape: np.ndarray) -> float:
    centered = shape - shape.mean(axis=0)
    return float(np.sqrt((centered**2).sum(axis=1).mean()))


def _normalize_shape(shape: np.ndarray) -> np.ndarray:
    centered = shape - shape.mean(axis=0)
    size = np.sqrt((centered**2).sum(axis=1).mean())
    if size < 1e-12:
        raise DegenerateShapeError("shape collapsed to a single point")
    return centered / size

def _align_rotation(shape: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Rotate a centered shape to fit a centered target in least squares."""
    m = target.T @ shape
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, d]) @ vt
    return shape @ rot.T


def procrustes_align(
    shapes, tol: float = 1e-8, max_iterations: int = 100
) -> tuple[list[np.ndarray], np.ndarray]:
    """Generalized Procrustes alignment of equal-length landmark sets.

    Every shape is centered, scaled to unit RMS size, and rotated to the
    current mean; the mean is re-estimated until it moves less than ``tol``.
    Returns the aligned shapes and the final mean (itself centered and unit
    RMS). Shapes whose points all coincide are rejected.
    """
    shapes = [np.asarray(s, dtype=np.float64) for s in shapes]
    if len(shapes) < 2:
        raise ValueError("need at least two shapes to align")
    n_points = shapes[0].shape[0]
    if any(s.shape != (n_points, 2) for s in shapes):
        raise ValueError("all shapes must share one (L, 2) layout")
    normalized = [_normalize_shape(s) for s in shapes]
    mean = normalized[0]
    aligned = normalized
    for _ in range(max_iterations):
        aligned = [_align_rotation(s, mean) for s in normalized]
        new_mean = _normalize_shape(np.mean(aligned, axis=0))
        new_mean = _align_rotation(new_mean, mean)
        movement = np.sqrt(((new_mean - mean) ** 2).sum(axis=1).mean())
        mean = new_mean
        if movement < tol:
            break
    aligned = [_align_rotation(s, mean) for s in normalized]
    return aligned, mean


def mirror_augment(shapes, symmetry_map: np.ndarray, axis_x: float | None = None):
    """Append horizontally mirrored copies of every shape.

    Points reflect about ``axis_x`` (default: each shape's own centroid
    column) and are re-indexed by ``symmetry_map`` so left and right features
    swap labels. The map must be an involution; mirroring twice restores the
    original shape exactly.
    """
    symmetry_map = np.asarray(symmetry_map, dtype=np.int64)
    if not np.array_equal(symmetry_map[symmetry_map], np.arange(symmetry_map.size)):
        raise ValueError("symmetry_map must be an involution on point indices")
    out = [np.asarray(s, dtype=np.float64) for s in shapes]
    mirrored = []
    for s in out:
        cx = s[:, 0].mean() if axis_x is None else float(axis_x)
        m = s.copy()
        m[:, 0] = 2.0 * cx - m[:, 0]
        mirrored.append(m[symmetry_map])
    return out + mirrored


# ---------------------------------------------------------------------------
# PCA and the shape model


def _pca(rows: np.ndarray, variance_fraction: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean, orthonormal components, and per-component variances.

    Keeps the smallest component count whose cumulative explained variance
    reaches ``variance_fraction``; an all-identical corpus keeps none.
    """
    if not 0 < variance_fraction <= 1:
        raise ValueError("variance_fraction must lie in (0, 1]")
    mean = rows.mean(axis=0)
    centered = rows - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2 / rows.shape[0]
    total = variances.sum()
    if total <= 1e-24:
        return mean, np.zeros((0, rows.shape[1])), np.zeros(0)
    keep_nonzero = variances > total * 1e-12
    variances = variances[keep_nonzero]
    vt = vt[keep_nonzero]
    cumulative = np.cumsum(variances) / total
    n_keep = int(np.searchsorted(cumulative, variance_fraction - 1e-12) + 1)
    n_keep = min(n_keep, variances.size)
    components = vt[:n_keep].copy()
    # sign convention: largest-magnitude entry positive
    for row in components:
        peak = np.argmax(np.abs(row))
        if row[peak] < 0:
            row *= -1.0
    return mean, components, variances[:n_keep].copy()


@dataclass(frozen=True)
class ShapeModel:
    """Mean shape, deformation basis, and similarity basis, all canonical-frame.

    ``basis`` rows and ``similarity_basis`` rows together form one orthonormal
    set over flattened (x0, y0, x1, y1, ...) coordinates. ``variances`` are
    the PCA variances (px^2) of the deformation components.
    """

    mean: np.ndarray
    basis: np.ndarray
    variances: np.ndarray
    similarity_basis: np.ndarray
    frame_shape: tuple[int, int]

    @property
    def n_points(self) -> int:
        return self.mean.shape[0]

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    @property
    def n_params(self) -> int:
        return 4 + self.n_components

    def full_basis(self) -> np.ndarray:
        """Similarity rows first, then deformation rows: (n_params, 2L)."""
        return np.vstack([self.similarity_basis, self.basis])


def _similarity_vectors(mean: np.ndarray) -> np.ndarray:
    """Orthonormal span of scale, rotation, and translation around the mean."""
    L = mean.shape[0]
    centered = (mean - mean.mean(axis=0)).ravel()
    rot = (mean - mean.mean(axis=0))[:, ::-1].copy()
    rot[:, 0] *= -1.0  # (x, y) -> (-y, x)
    vectors = np.stack(
        [
            centered,
            rot.ravel(),
            np.tile([1.0, 0.0], L),
            np.tile([0.0, 1.0], L),
        ]
    )
    # exactly orthogonal for a centered mean; Gram-Schmidt mops up rounding
    for i in range(4):
        for j in range(i):
            vectors[i] -= (vectors[i] @ vectors[j]) * vectors[j]
        norm = np.linalg.norm(vectors[i])
        if norm < 1e-12:
            raise DegenerateShapeError("mean shape too degenerate for a similarity basis")
        vectors[i] /= norm
    return vectors


def train_shape_model(
    aligned_shapes,
    variance_fraction: float = 0.99,
    frame_long_side: int = FRAME_LONG_SIDE,
    margin: int = FRAME_MARGIN,
) -> ShapeModel:
    """PCA shape model over pre-aligned shapes, placed in the canonical frame.

    The aligned mean is scaled so its bounding box long side equals
    ``frame_long_side`` pixels and offset by ``margin``. Residuals are
    projected orthogonal to the similarity span before the PCA, which keeps
    the combined basis orthonormal.
    """
    shapes = np.asarray([np.asarray(s, dtype=np.float64) for s in aligned_shapes])
    if shapes.ndim != 3 or shapes.shape[0] < 2:
        raise ValueError("need at least two aligned shapes")
    mean = shapes.mean(axis=0)
    span = (mean.max(axis=0) - mean.min(axis=0)).max()
    if span < 1e-12:
        raise DegenerateShapeError("mean shape has no spatial extent")
    scale = frame_long_side / span
    offset = margin - mean.min(axis=0) * scale
    canonical = shapes * scale + offset
    mean_c = mean * scale + offset
    extent = (mean_c.max(axis=0) + margin).astype(np.float64)
    frame_shape = (int(np.ceil(extent[1])) + 1, int(np.ceil(extent[0])) + 1)

    sim = _similarity_vectors(mean_c)
    residuals = (canonical - mean_c).reshape(shapes.shape[0], -1)
    residuals = residuals - (residuals @ sim.T) @ sim
    _, components, variances = _pca(residuals, variance_fraction)
    return ShapeModel(
        mean=mean_c,
        basis=components,
        variances=variances,
        similarity_basis=sim,
        frame_shape=frame_shape,
    )


def shape_from_params(model: ShapeModel, params: np.ndarray) -> np.ndarray:
    """Instantiate landmarks from (similarity, deformation) coefficients.

    The generator is linear: mean + params @ full_basis. The similarity block
    spans every global similarity of the mean exactly, so zero parameters
    give the mean shape and pure-scale parameters scale it uniformly.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (model.n_params,):
        raise ValueError(f"expected {model.n_params} parameters, got {params.shape}")
    flat = model.mean.ravel() + params @ model.full_basis()
    return flat.reshape(-1, 2)


def params_from_shape(model: ShapeModel, landmarks: np.ndarray) -> np.ndarray:
    """Least-squares projection of a shape onto the basis (exact in-span)."""
    diff = np.asarray(landmarks, dtype=np.float64).ravel() - model.mean.ravel()
    return model.full_basis() @ diff


def similarity_params(
    model: ShapeModel,
    rotation: float = 0.0,
    scale: float = 1.0,
    translation: tuple[float, float] = (0.0, 0.0),
) -> np.ndarray:
    """Parameters whose instantiation applies an exact global similarity.

    The target shape is ``scale * R(rotation) @ (mean - centroid) + centroid
    + translation``; because the similarity span is closed over the mean, the
    projection reproduces it exactly, with zero deformation coefficients.
    """
    mean = model.mean
    centroid = mean.mean(axis=0)
    cos_t, sin_t = np.cos(rotation), np.sin(rotation)
    rot = np.array([[cos_t, -sin_t], [sin_t, cos_t]])
    target = scale * (mean - centroid) @ rot.T + centroid + np.asarray(translation, dtype=np.float64)
    return params_from_shape(model, target)


# ---------------------------------------------------------------------------
# Appearance model


@dataclass(frozen=True)
class AppearanceModel:
    """Mean texture and orthonormal texture basis over the canonical support."""

    mean: np.ndarray
    basis: np.ndarray
    variances: np.ndarray

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]


def sample_texture(image: ThermalImage, landmarks: np.ndarray, raster: FrameRaster) -> np.ndarray:
    """Warp an image onto the canonical support and return its pixel vector."""
    warped = warp_via_raster(image.data, np.asarray(landmarks, dtype=np.float64), raster)
    return warped[raster.pixel_yx[:, 0], raster.pixel_yx[:, 1]]


def train_appearance_model(
    images,
    landmark_sets,
    mesh: TriangulatedMesh,
    raster: FrameRaster,
    variance_fraction: float = 0.99,
) -> AppearanceModel:
    """PCA texture model from detail-enhanced images warped onto the mean mesh.

    Each sample is mean-normalized (its DC over the support removed) before
    the PCA, making the model insensitive to global intensity offsets.
    Landmark sets that collapse a source triangle are rejected.
    """
    vectors = []
    for image, landmarks in zip(images, landmark_sets):
        landmarks = np.asarray(landmarks, dtype=np.float64)
        if np.any(triangle_areas(landmarks, mesh) < 1e-9):
            raise DegenerateShapeError("landmark set collapses a source triangle")
        vec = sample_texture(image, landmarks, raster)
        vectors.append(vec - vec.mean())
    rows = np.asarray(vectors)
    if rows.shape[0] < 1:
        raise ValueError("appearance training needs at least one image")
    mean, components, variances = _pca(rows, variance_fraction)
    return AppearanceModel(mean=mean, basis=components, variances=variances)


# ---------------------------------------------------------------------------
# The combined model


@dataclass(frozen=True)
class AAM:
    """Trained shape + appearance model with its mesh and canonical raster."""

    shape: ShapeModel
    appearance: AppearanceModel
    mesh: TriangulatedMesh
    raster: FrameRaster
    points: PointDefinition

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.shape.frame_shape

    def support_mask(self) -> np.ndarray:
        return self.raster.support_mask()


def train_aam(
    images,
    landmark_sets,
    points: PointDefinition,
    variance_fraction: float = 0.99,
    mirror: bool = True,
    enhance_cfg: DiffusionConfig | None = None,
) -> AAM:
    """Train the full model from (image, landmark) pairs.

    Images must already be detail-enhanced unless ``enhance_cfg`` is given,
    in which case enhancement runs here. With ``mirror`` on, every training
    pair is duplicated by horizontal reflection (images flipped, landmarks
    mirrored about the image center column and re-indexed).
    """
    images = list(images)
    landmark_sets = [np.asarray(s, dtype=np.float64) for s in landmark_sets]
    if len(images) != len(landmark_sets):
        raise ValueError("images and landmark sets must pair up")
    if any(s.shape != (points.count, 2) for s in landmark_sets):
        raise ValueError("landmark sets must match the point definition")
    if enhance_cfg is not None:
        images = [enhance_detail(img, enhance_cfg) for img in images]
    if mirror:
        flipped = [ThermalImage(np.fliplr(img.data), img.units) for img in images]
        mirrored_shapes = []
        for img, s in zip(images, landmark_sets):
            m = s.copy()
            m[:, 0] = (img.width - 1) - m[:, 0]
            mirrored_shapes.append(m[points.mirror])
        images = images + flipped
        landmark_sets = landmark_sets + mirrored_shapes

    aligned, _ = procrustes_align(landmark_sets)
    shape_model = train_shape_model(aligned, variance_fraction)
    mesh = delaunay_mesh(shape_model.mean)
    raster = rasterize_mesh(shape_model.mean, mesh, shape_model.frame_shape)
    appearance = train_appearance_model(images, landmark_sets, mesh, raster, variance_fraction)
    return AAM(shape=shape_model, appearance=appearance, mesh=mesh, raster=raster, points=points)


def synthesize_frontal(img: ThermalImage, fitted: np.ndarray, model: AAM) -> ThermalImage:
    """Frontal canonical-frame rendering of the face under fitted landmarks.

    Equivalent to the piecewise affine warp with the fitted landmarks as
    source and the mean shape as destination; pixels outside the mesh are 0.
    """
    return ThermalImage(warp_via_raster(img.data, np.asarray(fitted, dtype=np.float64), model.raster), img.units)


# ---------------------------------------------------------------------------
# Model file


def save_model(path, model: AAM) -> None:
    """Persist the model as a versioned npz container (bit-exact round trip)."""
    np.savez(
        Path(path),
        format_version=np.array([MODEL_FORMAT_VERSION]),
        frame_shape=np.asarray(model.shape.frame_shape, dtype=np.int64),
        shape_mean=model.shape.mean,
        shape_basis=model.shape.basis,
        shape_variances=model.shape.variances,
        similarity_basis=model.shape.similarity_basis,
        triangles=model.mesh.triangles,
        appearance_mean=model.appearance.mean,
        appearance_basis=model.appearance.basis,
        appearance_variances=model.appearance.variances,
        pixel_yx=model.raster.pixel_yx,
        tri_index=model.raster.tri_index,
        bary=model.raster.bary,
        point_names=np.array(model.points.names),
        mirror_map=model.points.mirror,
    )


def load_model(path) -> AAM:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"][0])
            if version != MODEL_FORMAT_VERSION:
                raise ModelFormatError(f"{path}: unsupported model version {version}")
            frame_shape = tuple(int(v) for v in data["frame_shape"])
            shape_model = ShapeModel(
                mean=data["shape_mean"],
                basis=data["shape_basis"],
                variances=data["shape_variances"],
                similarity_basis=data["similarity_basis"],
                frame_shape=frame_shape,
            )
            mesh = TriangulatedMesh(data["triangles"])
            tri_index = data["tri_index"]
            raster = FrameRaster(
                shape=frame_shape,
                pixel_yx=data["pixel_yx"],
                tri_index=tri_index,
                bary=data["bary"],
                vertex_ids=mesh.triangles[tri_index],
            )
            appearance = AppearanceModel(
                mean=data["appearance_mean"],
                basis=data["appearance_basis"],
                variances=data["appearance_variances"],
            )
            points = PointDefinition(
                names=tuple(str(n) for n in data["point_names"]),
                mirror=data["mirror_map"],
            )
    except (KeyError, OSError, ValueError) as exc:
        raise ModelFormatError(f"{path}: not a readable model file ({exc})") from exc
    return AAM(shape=shape_model, appearance=appearance, mesh=mesh, raster=raster, points=points)
