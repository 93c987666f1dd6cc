"""Face segmentation: band thresholding, ellipse fitting, morphological cleanup.

A warm face on a cooler background is isolated by keeping intensities inside
a [t_low, t_up] band, fitting a moment ellipse to the largest connected blob,
then closing and opening with a disc whose area is a fixed fraction of the
face ellipse. Morphology uses the clamped-window convention (the structuring
element is intersected with the image window), which matches edge-replication
borders and keeps opening/closing exactly anti-extensive/extensive and
idempotent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConstantImageError, EmptyMaskError
from .imaging import ThermalImage

__all__ = [
    "SegmentationMask",
    "SegmentationConfig",
    "FaceEllipse",
    "threshold_band",
    "auto_thresholds",
    "fit_face_ellipse",
    "morph_refine",
    "segment_face",
    "disc_element",
    "morph_open",
    "morph_close",
    "largest_component",
]

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegmentationMask:
    """Binary foreground mask with the dimensions of its source image."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=bool)
        if data.ndim != 2:
            raise ValueError("mask must be 2D")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def count(self) -> int:
        return int(self.data.sum())


@dataclass(frozen=True)
class FaceEllipse:
    """Moment-equivalent ellipse of a foreground blob.

    ``a`` is the semi-major axis, ``b`` the semi-minor (a >= b > 0);
    ``orientation`` is the major-axis angle in radians, defined mod pi.
    """

    center: tuple[float, float]
    a: float
    b: float
    orientation: float

    def __post_init__(self):
        if not (self.a >= self.b > 0):
            raise ValueError("ellipse axes must satisfy a >= b > 0")

    @property
    def area(self) -> float:
        return math.pi * self.a * self.b


@dataclass(frozen=True)
class SegmentationConfig:
    """Threshold band and structuring-element sizing for face segmentation.

    ``threshold_mode`` "explicit" uses (t_low, t_up) as given; "auto" derives
    t_low from Otsu's criterion and t_up from the image maximum.
    """

    t_low: float | None = None
    t_up: float | None = None
    threshold_mode: str = "auto"
    se_area_fraction: float = 0.06

    def __post_init__(self):
        if self.threshold_mode not in ("explicit", "auto"):
            raise ValueError("threshold_mode must be 'explicit' or 'auto'")
        if self.threshold_mode == "explicit":
            if self.t_low is None or self.t_up is None:
                raise ValueError("explicit mode requires t_low and t_up")
            if not self.t_low < self.t_up:
                raise ValueError("explicit thresholds require t_low < t_up")
        if not 0 < self.se_area_fraction < 1:
            raise ValueError("se_area_fraction must lie in (0, 1)")


def threshold_band(img: ThermalImage, t_low: float, t_up: float) -> SegmentationMask:
    """Mark pixels with t_low <= intensity <= t_up as foreground."""
    if not t_low < t_up:
        raise ValueError("threshold band requires t_low < t_up")
    data = img.data
    return SegmentationMask((data >= t_low) & (data <= t_up))


def auto_thresholds(img: ThermalImage, bins: int = 256) -> tuple[float, float]:
    """Derive (t_low, t_up) from the intensity histogram.

    t_low is the two-class Otsu threshold over ``bins`` equal-width bins
    spanning the intensity range; t_up is the image maximum. The criterion
    is flat across any empty histogram gap, so ties resolve to the middle
    of the tied plateau.
    """
    data = img.data
    lo = float(data.min())
    hi = float(data.max())
    if hi <= lo:
        raise ConstantImageError("constant image has no separable intensity classes")
    hist, edges = np.histogram(data, bins=bins, range=(lo, hi))
    weights = hist.astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(weights)
    w1 = w0[-1] - w0
    mass = np.cumsum(weights * centers)
    total_mass = mass[-1]
    valid = (w0[:-1] > 0) & (w1[:-1] > 0)
    mu0 = np.where(valid, mass[:-1] / np.maximum(w0[:-1], 1), 0.0)
    mu1 = np.where(valid, (total_mass - mass[:-1]) / np.maximum(w1[:-1], 1), 0.0)
    between = np.where(valid, w0[:-1] * w1[:-1] * (mu0 - mu1) ** 2, -np.inf)
    best = between.max()
    tied = np.nonzero(between >= best * (1.0 - 1e-12))[0]
    split = int(tied[len(tied) // 2])
    return float(edges[split + 1]), hi


def _moments(ys: np.ndarray, xs: np.ndarray) -> tuple[tuple[float, float], np.ndarray]:
    cx = xs.mean()
    cy = ys.mean()
    dx = xs - cx
    dy = ys - cy
    # 1/12 is each pixel's own second moment as a unit square
    mxx = (dx * dx).mean() + 1.0 / 12.0
    myy = (dy * dy).mean() + 1.0 / 12.0
    mxy = (dx * dy).mean()
    return (float(cx), float(cy)), np.array([[mxx, mxy], [mxy, myy]])


def fit_face_ellipse(mask: SegmentationMask) -> FaceEllipse:
    """Moment-equivalent ellipse of the largest 8-connected foreground blob.

    The ellipse shares the blob's zeroth, first, and second spatial moments,
    so a filled disc of radius r maps back to semi-axes (r, r).
    """
    blob = largest_component(mask.data)
    if blob is None or int(blob.sum()) < 5:
        raise EmptyMaskError("ellipse fit needs at least 5 foreground pixels")
    ys, xs = np.nonzero(blob)
    center, cov = _moments(ys.astype(np.float64), xs.astype(np.float64))
    evals, evecs = np.linalg.eigh(cov)
    # moment identity for a filled ellipse: second moment along an axis = (semiaxis/2)^2
    b_axis = 2.0 * math.sqrt(max(evals[0], 1e-12))
    a_axis = 2.0 * math.sqrt(max(evals[1], 1e-12))
    major = evecs[:, 1]
    orientation = math.atan2(major[1], major[0]) % math.pi
    return FaceEllipse(center=center, a=a_axis, b=b_axis, orientation=orientation)


def disc_element(radius: float) -> np.ndarray:
    """Discrete disc structuring element: pixels with dx^2 + dy^2 <= r^2."""
    if radius < 1:
        raise ValueError("structuring radius must be at least 1 pixel")
    r = int(math.floor(radius))
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx) <= radius * radius


def morph_open(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    """Binary opening with the clamped-window border convention."""
    eroded = ndimage.binary_erosion(mask, structure=element, border_value=1)
    return ndimage.binary_dilation(eroded, structure=element, border_value=0)


def morph_close(mask: np.ndarray, element: np.ndarray) -> np.ndarray:
    """Binary closing with the clamped-window border convention."""
    dilated = ndimage.binary_dilation(mask, structure=element, border_value=0)
    return ndimage.binary_erosion(dilated, structure=element, border_value=1)


def largest_component(mask: np.ndarray) -> np.ndarray | None:
    """Largest 8-connected foreground component, or None for an empty mask."""
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    if n == 0:
        return None
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    return labels == int(np.argmax(counts))


def morph_refine(
    mask: SegmentationMask,
    ellipse: FaceEllipse,
    se_area_fraction: float = 0.06,
    radius: float | None = None,
) -> SegmentationMask:
    """Close then open with a disc sized from the face ellipse, keep the largest blob.

    The disc area is ``se_area_fraction`` of the ellipse area, i.e.
    ``radius = sqrt(se_area_fraction * a * b)``. Closing first reconnects
    cold skin patches, opening then removes clothing-interface spurs. A
    derived radius below 1 pixel is an error; pass ``radius`` explicitly to
    override the derived value.
    """
    if radius is None:
        radius = math.sqrt(se_area_fraction * ellipse.a * ellipse.b)
    if radius < 1:
        raise EmptyMaskError(
            f"structuring radius {radius:.3f} px is below 1 pixel "
            "(degenerately small face); retry with an explicit radius"
        )
    element = disc_element(radius)
    refined = morph_open(morph_close(mask.data, element), element)
    blob = largest_component(refined)
    if blob is None:
        raise EmptyMaskError("morphological refinement removed all foreground")
    return SegmentationMask(blob)


def segment_face(
    img: ThermalImage, cfg: SegmentationConfig
) -> tuple[SegmentationMask, ThermalImage]:
    """Segment the face and zero the background.

    Pipeline: band threshold, moment-ellipse fit of the provisional mask,
    close/open refinement, largest connected component. The returned image
    equals the input on the mask and is exactly zero elsewhere.
    """
    if cfg.threshold_mode == "auto":
        t_low, t_up = auto_thresholds(img)
    else:
        t_low, t_up = float(cfg.t_low), float(cfg.t_up)
    provisional = threshold_band(img, t_low, t_up)
    if provisional.count() == 0:
        raise EmptyMaskError("no pixels inside the threshold band")
    ellipse = fit_face_ellipse(provisional)
    refined = morph_refine(provisional, ellipse, cfg.se_area_fraction)
    suppressed = np.where(refined.data, img.data, 0.0)
    return refined, ThermalImage(suppressed, img.units)
