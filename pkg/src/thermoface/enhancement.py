"""Anisotropic diffusion and high-pass detail enhancement.

Thermal faces are poor in high-frequency detail, which starves deformable
model fitting of gradients. Subtracting an edge-preserving diffusion of the
image from the image itself yields a signed detail layer that carries the
fine structure (vessels, feature edges) while dropping the smooth thermal
background.

Two conductance laws ship. Mode "paper" is exp(-|grad| / k^2); mode
"perona_malik" is the classical exp(-(|grad| / k)^2). The two differ a lot in
practice: with k on an 8-bit scale, "paper" damps diffusion only mildly even
across strong edges (|grad|/k^2 stays below ~0.64 for 8-bit data), whereas
"perona_malik" shuts flux down almost completely across edges stronger than
a few k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import ThermalImage

__all__ = ["DiffusionConfig", "conductance", "anisotropic_diffuse", "enhance_detail"]

_MODES = ("paper", "perona_malik")


@dataclass(frozen=True)
class DiffusionConfig:
    """Parameters of the explicit 4-neighbor diffusion scheme.

    ``k`` is the gradient-magnitude scale in the intensity units of the image
    the filter runs on (the reference value 20 assumes a 0..255 range; divide
    by 255 for images normalized to [0, 1]). ``dt`` must stay within the
    explicit-scheme stability bound of 0.25.
    """

    k: float = 20.0
    iterations: int = 20
    dt: float = 0.2
    exponent_mode: str = "paper"

    def __post_init__(self):
        if not (math.isfinite(self.k) and self.k > 0):
            raise ValueError("k must be positive and finite")
        if not 0 < self.dt <= 0.25:
            raise ValueError("dt must lie in (0, 0.25] for stability")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.exponent_mode not in _MODES:
            raise ValueError(f"exponent_mode must be one of {_MODES}")


def conductance(grad_mag, k: float, mode: str = "paper"):
    """Edge-stopping factor in (0, 1] for a gradient magnitude.

    mode "paper": exp(-|grad| / k^2); mode "perona_malik": exp(-(|grad|/k)^2).
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}")
    g = np.asarray(grad_mag, dtype=np.float64)
    if mode == "paper":
        out = np.exp(-g / (k * k))
    else:
        out = np.exp(-((g / k) ** 2))
    return float(out) if out.ndim == 0 else out


def _neighbor_differences(a: np.ndarray):
    # one-sided differences toward each 4-neighbor; replication makes
    # border-directed differences zero, so no flux crosses the frame edge
    north = np.vstack([a[:1], a[:-1]]) - a
    south = np.vstack([a[1:], a[-1:]]) - a
    west = np.hstack([a[:, :1], a[:, :-1]]) - a
    east = np.hstack([a[:, 1:], a[:, -1:]]) - a
    return north, south, east, west


def anisotropic_diffuse(img: ThermalImage, cfg: DiffusionConfig) -> ThermalImage:
    """Explicit 4-neighbor anisotropic diffusion.

    Each iteration applies ``I += dt * sum_d g(|D_d I|) * D_d I`` over the
    four neighbor directions, with replicated borders. With ``dt <= 0.25``
    and conductance <= 1 every update is a convex combination of the pixel
    and its neighbors, so the scheme obeys the extremum principle, and the
    antisymmetric flux form preserves the global sum away from the borders.
    """
    a = img.data.copy()
    k = cfg.k
    mode = cfg.exponent_mode
    for _ in range(cfg.iterations):
        flux = np.zeros_like(a)
        for diff in _neighbor_differences(a):
            flux += conductance(np.abs(diff), k, mode) * diff
        a += cfg.dt * flux
    return ThermalImage(a, img.units)


def enhance_detail(img: ThermalImage, cfg: DiffusionConfig) -> ThermalImage:
    """Signed detail layer: the input minus its anisotropic diffusion.

    Output values may be negative. Adding a constant to the input leaves the
    output unchanged, since diffusion commutes with constant offsets.
    """
    diffused = anisotropic_diffuse(img, cfg)
    return ThermalImage(img.data - diffused.data, img.units)
