"""Core image type, Gaussian scale space, Hessian fields, and 2x2 eigenanalysis.

Every downstream stage works on :class:`ThermalImage`, a thin wrapper around a
float64 array of radiometric intensities. Border handling is edge replication
throughout, and blurs use a sampled Gaussian kernel truncated at three
standard deviations, so filter outputs are reproducible bit for bit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import correlate1d

__all__ = [
    "ThermalImage",
    "HessianField",
    "EigenPair",
    "gaussian_kernel1d",
    "gaussian_blur",
    "hessian_at_scale",
    "eigen2x2_sorted",
    "read_image",
    "write_image",
]


@dataclass(frozen=True)
class ThermalImage:
    """Single-channel thermal frame with finite float64 intensities.

    ``units`` records the intensity convention: "normalized" for values
    mapped into [0, 1] by the file readers, "raw" for anything else.
    """

    data: np.ndarray
    units: str = "normalized"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image data must be a non-empty 2D array")
        if not np.all(np.isfinite(data)):
            raise ValueError("image intensities must all be finite")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class HessianField:
    """Per-pixel symmetric 2x2 second-derivative matrices at one scale.

    Only the three distinct components are stored; symmetry is structural.
    """

    hxx: np.ndarray
    hxy: np.ndarray
    hyy: np.ndarray
    scale: float

    def __post_init__(self):
        for name in ("hxx", "hxy", "hyy"):
            comp = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(comp)):
                raise ValueError(f"{name} contains non-finite values")
            object.__setattr__(self, name, comp)
        if self.hxx.shape != self.hxy.shape or self.hxx.shape != self.hyy.shape:
            raise ValueError("Hessian components must share one shape")


class EigenPair(NamedTuple):
    """Eigenvalues of a symmetric 2x2 matrix, magnitude ordered.

    ``abs(lambda1) <= abs(lambda2)`` always holds; ties are returned in
    (algebraically smaller, larger) order.
    """

    lambda1: np.ndarray | float
    lambda2: np.ndarray | float


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian kernel, truncated at +-ceil(3*sigma), normalized to sum 1."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-0.5 * (x / sigma) ** 2)
    return kernel / kernel.sum()


def gaussian_blur(img: ThermalImage, sigma: float) -> ThermalImage:
    """Separable Gaussian blur with replicated borders.

    ``sigma = 0`` returns the input unchanged. The kernel is the sampled
    Gaussian of :func:`gaussian_kernel1d`, so a unit impulse comes back as the
    outer product of two 1D kernels.
    """
    if not math.isfinite(sigma):
        raise ValueError("sigma must be finite")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img
    kernel = gaussian_kernel1d(sigma)
    out = correlate1d(img.data, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return ThermalImage(out, img.units)


_D2 = np.array([1.0, -2.0, 1.0])
_D1 = np.array([-0.5, 0.0, 0.5])


def hessian_at_scale(img: ThermalImage, s: float, gamma: float = 2.0) -> HessianField:
    """Scale-normalized Hessian of the image analyzed at scale ``s``.

    The image is blurred with ``sigma = s`` and differentiated with central
    finite differences (replicated borders), then multiplied by ``s**gamma``.
    ``gamma = 2`` makes responses comparable across scales; ``gamma = 0``
    recovers plain second derivatives of the blurred image.
    """
    if not math.isfinite(s) or s < 1:
        raise ValueError("analysis scale must satisfy s >= 1")
    blurred = gaussian_blur(img, s).data
    norm = float(s) ** gamma
    hxx = correlate1d(blurred, _D2, axis=1, mode="nearest") * norm
    hyy = correlate1d(blurred, _D2, axis=0, mode="nearest") * norm
    dx = correlate1d(blurred, _D1, axis=1, mode="nearest")
    hxy = correlate1d(dx, _D1, axis=0, mode="nearest") * norm
    return HessianField(hxx=hxx, hxy=hxy, hyy=hyy, scale=float(s))


def eigen2x2_sorted(hxx, hxy, hyy) -> EigenPair:
    """Closed-form eigenvalues of symmetric 2x2 matrices, magnitude ordered.

    Accepts scalars or arrays (broadcast elementwise). The characteristic
    roots are ``tr/2 +- sqrt(((hxx-hyy)/2)**2 + hxy**2)``; the pair is then
    ordered so ``abs(lambda1) <= abs(lambda2)``, with exact magnitude ties
    kept in algebraic order.
    """
    hxx = np.asarray(hxx, dtype=np.float64)
    hxy = np.asarray(hxy, dtype=np.float64)
    hyy = np.asarray(hyy, dtype=np.float64)
    if not (np.all(np.isfinite(hxx)) and np.all(np.isfinite(hxy)) and np.all(np.isfinite(hyy))):
        raise ValueError("matrix entries must be finite")
    half_trace = 0.5 * (hxx + hyy)
    disc = np.sqrt((0.5 * (hxx - hyy)) ** 2 + hxy**2)
    lo = half_trace - disc
    hi = half_trace + disc
    swap = np.abs(lo) > np.abs(hi)
    lambda1 = np.where(swap, hi, lo)
    lambda2 = np.where(swap, lo, hi)
    if lambda1.ndim == 0:
        return EigenPair(float(lambda1), float(lambda2))
    return EigenPair(lambda1, lambda2)


# ---------------------------------------------------------------------------
# File I/O: binary PGM (P5) and PNG, 8- and 16-bit single channel.
# 16-bit values map to real intensities by division by 65535, 8-bit by 255.

_PGM_TOKEN = re.compile(rb"(?:\s|#[^\n\r]*[\n\r])*([^\s#]+)")


def _pgm_tokens(raw: bytes, count: int) -> tuple[list[bytes], int]:
    tokens = []
    pos = 0
    while len(tokens) < count:
        m = _PGM_TOKEN.match(raw, pos)
        if m is None:
            raise ValueError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def _read_pgm(path: Path) -> np.ndarray:
    raw = path.read_bytes()
    tokens, pos = _pgm_tokens(raw, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary (P5) PGM file")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    # single whitespace byte separates header from raster
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expect = width * height * dtype.itemsize
    raster = raw[pos : pos + expect]
    if len(raster) != expect:
        raise ValueError(f"{path}: truncated PGM raster")
    values = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return values.astype(np.float64) / maxval


def _write_pgm(path: Path, values: np.ndarray, maxval: int) -> None:
    height, width = values.shape
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    path.write_bytes(header + values.astype(dtype).tobytes())


def _read_png(path: Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        mode = im.mode
        arr = np.asarray(im)
    if mode == "L":
        return arr.astype(np.float64) / 255.0
    if mode in ("I;16", "I;16B", "I"):
        return arr.astype(np.float64) / 65535.0
    raise ValueError(f"{path}: only single-channel grayscale images are supported (got mode {mode})")


def _write_png(path: Path, values: np.ndarray, maxval: int) -> None:
    from PIL import Image

    if maxval > 255:
        Image.fromarray(values.astype(np.uint16)).save(path)
    else:
        Image.fromarray(values.astype(np.uint8)).save(path)


def read_image(path) -> ThermalImage:
    """Read an 8- or 16-bit single-channel PGM (binary P5) or PNG file.

    Stored integer values are mapped to [0, 1] by dividing by the format's
    maximum (65535 for 16-bit data, 255 for 8-bit).
    """
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        data = _read_pgm(path)
    elif suffix == ".png":
        data = _read_png(path)
    else:
        raise ValueError(f"unsupported image format: {path.suffix!r} (use .pgm or .png)")
    return ThermalImage(data, units="normalized")


def write_image(path, img, bits: int = 16) -> None:
    """Write intensities in [0, 1] as an 8- or 16-bit PGM or PNG file.

    Values are clipped to [0, 1] and rounded onto the integer range; callers
    with signed data rescale first and record the offset themselves.
    """
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    path = Path(path)
    data = img.data if isinstance(img, ThermalImage) else np.asarray(img, dtype=np.float64)
    maxval = (1 << bits) - 1
    values = np.rint(np.clip(data, 0.0, 1.0) * maxval)
    suffix = path.suffix.lower()
    if suffix == ".pgm":
        _write_pgm(path, values, maxval)
    elif suffix == ".png":
        _write_png(path, values, maxval)
    else:
        raise ValueError(f"unsupported image format: {path.suffix!r} (use .pgm or .png)")
