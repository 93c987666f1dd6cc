"""Multi-scale vesselness: the tubular-structure confidence map in [0, 1).

Warm vessels read as bright ridges, so only loci whose larger-magnitude
Hessian eigenvalue is negative can respond; everything else is zero. Two
ingredients grade the response: the blobness ratio |l1|/|l2| (near 0 for
tubes, near 1 for blobs) and the structure strength sqrt(l1^2 + l2^2)
(near 0 in flat regions). Responses are computed per analysis scale on the
scale-normalized Hessian and combined by a pointwise maximum across scales.

Mode "frangi" uses the exponential forms exp(-ratio^2 / (2 beta^2)) *
(1 - exp(-strength^2 / (2 c^2))). Mode "paper" uses first-power exponents
(1 - exp(-ratio / (2 beta^2))) * (1 - exp(-strength / (2 c^2))) instead;
both stay inside [0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError
from .hashing import canonical_hash
from .imaging import ThermalImage, eigen2x2_sorted, hessian_at_scale

__all__ = [
    "VesselnessConfig",
    "VesselnessMap",
    "vesselness_at_scale",
    "vesselness_multiscale",
    "extract_signature",
]

_MODES = ("frangi", "paper")


@dataclass(frozen=True)
class VesselnessConfig:
    """Scale range and sensitivity parameters of the vesselness filter.

    ``c_struct=None`` selects the automatic structure sensitivity: half the
    maximum Hessian Frobenius norm over the image, separately per scale,
    which makes the response adapt to the image's contrast.
    """

    beta: float = 0.5
    c_struct: float | None = None
    s_min: float = 3.0
    s_max: float = 5.0
    s_step: float = 1.0
    gamma: float = 2.0
    formula_mode: str = "frangi"

    def __post_init__(self):
        if not 1 <= self.s_min <= self.s_max:
            raise ValueError("scales must satisfy 1 <= s_min <= s_max")
        if self.s_step <= 0:
            raise ValueError("s_step must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.c_struct is not None and self.c_struct <= 0:
            raise ValueError("explicit c_struct must be positive")
        if self.formula_mode not in _MODES:
            raise ValueError(f"formula_mode must be one of {_MODES}")

    def scales(self) -> tuple[float, ...]:
        count = int(math.floor((self.s_max - self.s_min) / self.s_step + 1e-9)) + 1
        return tuple(self.s_min + i * self.s_step for i in range(count))

    def numeric_params(self) -> dict:
        return {
            "vesselness.beta": self.beta,
            "vesselness.c_struct": self.c_struct,
            "vesselness.s_min": self.s_min,
            "vesselness.s_max": self.s_max,
            "vesselness.s_step": self.s_step,
            "vesselness.gamma": self.gamma,
            "vesselness.formula_mode": self.formula_mode,
        }

    @property
    def config_hash(self) -> str:
        return canonical_hash(self.numeric_params())


@dataclass(frozen=True)
class VesselnessMap:
    """Per-pixel tubularity confidence with its analysis metadata."""

    values: np.ndarray
    scales: tuple[float, ...]
    config_hash: str

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "scales", tuple(float(s) for s in self.scales))


def _response(
    lambda1: np.ndarray,
    lambda2: np.ndarray,
    cfg: VesselnessConfig,
    c_region: np.ndarray | None = None,
) -> np.ndarray:
    strength = np.hypot(lambda1, lambda2)
    if cfg.c_struct is not None:
        c = cfg.c_struct
    else:
        ref = strength if c_region is None else strength[c_region]
        c = 0.5 * float(ref.max()) if ref.size else 0.0
        if c <= 0:
            return np.zeros_like(strength)
    mag2 = np.abs(lambda2)
    ratio = np.divide(np.abs(lambda1), mag2, out=np.zeros_like(mag2), where=mag2 > 0)
    two_beta_sq = 2.0 * cfg.beta**2
    two_c_sq = 2.0 * c**2
    if cfg.formula_mode == "frangi":
        out = np.exp(-(ratio**2) / two_beta_sq) * (1.0 - np.exp(-(strength**2) / two_c_sq))
    else:
        out = (1.0 - np.exp(-ratio / two_beta_sq)) * (1.0 - np.exp(-strength / two_c_sq))
    # bright-tube convention: warm vessels need lambda2 < 0; a zero lambda2
    # zeroes the strength factor already
    out[lambda2 > 0] = 0.0
    return out


def vesselness_at_scale(
    img: ThermalImage, s: float, cfg: VesselnessConfig, c_region: np.ndarray | None = None
) -> VesselnessMap:
    """Single-scale vesselness from the scale-normalized Hessian eigenpair.

    With automatic structure sensitivity, ``c_region`` restricts the pixels
    whose Hessian norms calibrate it (the whole image by default).
    """
    scales = cfg.scales()
    if not (min(scales) - 1e-9 <= s <= max(scales) + 1e-9):
        raise ValueError(f"scale {s} outside configured range {scales}")
    hess = hessian_at_scale(img, s, cfg.gamma)
    lambda1, lambda2 = eigen2x2_sorted(hess.hxx, hess.hxy, hess.hyy)
    values = _response(lambda1, lambda2, cfg, c_region)
    return VesselnessMap(values=values, scales=(float(s),), config_hash=cfg.config_hash)


def vesselness_multiscale(
    img: ThermalImage, cfg: VesselnessConfig, c_region: np.ndarray | None = None
) -> VesselnessMap:
    """Pointwise maximum of the single-scale responses over the scale range."""
    scales = cfg.scales()
    best = np.zeros(img.shape, dtype=np.float64)
    for s in scales:
        best = np.maximum(best, vesselness_at_scale(img, s, cfg, c_region).values)
    return VesselnessMap(values=best, scales=scales, config_hash=cfg.config_hash)


def extract_signature(frontal: ThermalImage, mask: np.ndarray, cfg: VesselnessConfig) -> VesselnessMap:
    """Identity signature: multi-scale vesselness restricted to the face mask.

    ``frontal`` is the canonical-frame synthesized face and ``mask`` the
    canonical mesh interior; pixels off the mask are exactly zero. The
    automatic structure sensitivity is calibrated from on-mask pixels, so
    off-face artifacts cannot skew it.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frontal.shape:
        raise ValueError("mask dimensions must match the frontal image")
    if not mask.any():
        raise EmptyMaskError("signature extraction needs a non-empty mask")
    result = vesselness_multiscale(frontal, cfg, c_region=mask)
    values = np.where(mask, result.values, 0.0)
    return VesselnessMap(values=values, scales=result.scales, config_hash=result.config_hash)
