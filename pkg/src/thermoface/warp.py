"""Triangulated meshes, barycentric rasterization, and piecewise affine warps.

A warp is defined by two landmark sets sharing one triangulation: each pixel
inside the destination mesh gets barycentric coordinates in its destination
triangle, the same weights select a source point, and the source image is
sampled bilinearly there. Because adjacent triangles interpolate their shared
vertices identically, the mapping is continuous across edges, and it is exact
for any globally affine vertex motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial import Delaunay

from .errors import DegenerateShapeError
from .imaging import ThermalImage

__all__ = [
    "TriangulatedMesh",
    "FrameRaster",
    "delaunay_mesh",
    "triangle_areas",
    "barycentric_coordinates",
    "rasterize_mesh",
    "source_positions",
    "warp_via_raster",
    "piecewise_affine_warp",
    "bilinear_sample",
]

_DEGENERATE_EPS = 1e-9


@dataclass(frozen=True)
class TriangulatedMesh:
    """Triangles as index triples into a landmark ordering."""

    triangles: np.ndarray

    def __post_init__(self):
        tris = np.asarray(self.triangles, dtype=np.int32)
        if tris.ndim != 2 or tris.shape[1] != 3 or tris.shape[0] < 1:
            raise ValueError("triangles must be a (T, 3) index array")
        object.__setattr__(self, "triangles", tris)

    def validate(self, n_points: int) -> None:
        tris = self.triangles
        if tris.min() < 0 or tris.max() >= n_points:
            raise ValueError("triangle indices out of range")
        used = np.zeros(n_points, dtype=bool)
        used[tris.ravel()] = True
        if not used.all():
            raise ValueError("every landmark must belong to at least one triangle")


def delaunay_mesh(points: np.ndarray) -> TriangulatedMesh:
    """Delaunay triangulation of a landmark set, as a reusable mesh."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or points.shape[0] < 3:
        raise ValueError("need at least 3 two-dimensional points")
    tri = Delaunay(points)
    # canonical ordering keeps models reproducible across runs
    simplices = np.sort(tri.simplices, axis=1)
    simplices = simplices[np.lexsort(simplices.T[::-1])]
    mesh = TriangulatedMesh(simplices)
    mesh.validate(points.shape[0])
    return mesh


def triangle_areas(points: np.ndarray, mesh: TriangulatedMesh) -> np.ndarray:
    """Signed doubled areas are folded to absolute triangle areas."""
    p = np.asarray(points, dtype=np.float64)[mesh.triangles]
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    return 0.5 * np.abs(cross)


def barycentric_coordinates(tri_xy: np.ndarray, px: np.ndarray, py: np.ndarray):
    """Barycentric weights of points (px, py) with respect to one triangle.

    ``tri_xy`` is (3, 2). Returns three weight arrays; no inside test is
    applied, so the affine extension beyond the triangle is available too.
    """
    (x1, y1), (x2, y2), (x3, y3) = tri_xy
    det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    if abs(det) < _DEGENERATE_EPS:
        raise DegenerateShapeError("degenerate triangle in barycentric solve")
    w1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / det
    w2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / det
    return w1, w2, 1.0 - w1 - w2


@dataclass(frozen=True)
class FrameRaster:
    """Precomputed pixel-to-triangle assignment of a mesh on a fixed frame.

    ``pixel_yx`` lists covered pixel coordinates, ``tri_index`` the triangle
    owning each pixel, ``bary`` its barycentric weights, and ``vertex_ids``
    the triangle's landmark indices (a row of the mesh). A raster fixes the
    destination geometry once, so repeated warps only recompute source
    positions.
    """

    shape: tuple[int, int]
    pixel_yx: np.ndarray
    tri_index: np.ndarray
    bary: np.ndarray
    vertex_ids: np.ndarray

    @property
    def n_pixels(self) -> int:
        return self.pixel_yx.shape[0]

    def support_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.pixel_yx[:, 0], self.pixel_yx[:, 1]] = True
        return mask


def rasterize_mesh(
    points: np.ndarray, mesh: TriangulatedMesh, shape: tuple[int, int]
) -> FrameRaster:
    """Assign each frame pixel inside the mesh to a triangle with weights.

    Pixels on shared edges go to the lowest-indexed triangle; since adjacent
    triangles agree along shared edges the choice does not affect warps.
    Degenerate triangles are rejected.
    """
    points = np.asarray(points, dtype=np.float64)
    height, width = int(shape[0]), int(shape[1])
    owner = np.full((height, width), -1, dtype=np.int32)
    w_all = np.zeros((height, width, 3), dtype=np.float64)
    for t, tri in enumerate(mesh.triangles):
        tri_xy = points[tri]
        x_lo = max(int(np.floor(tri_xy[:, 0].min())), 0)
        x_hi = min(int(np.ceil(tri_xy[:, 0].max())), width - 1)
        y_lo = max(int(np.floor(tri_xy[:, 1].min())), 0)
        y_hi = min(int(np.ceil(tri_xy[:, 1].max())), height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
        w1, w2, w3 = barycentric_coordinates(tri_xy, xs.astype(np.float64), ys.astype(np.float64))
        inside = (w1 >= -1e-9) & (w2 >= -1e-9) & (w3 >= -1e-9) & (owner[ys, xs] < 0)
        yi = ys[inside]
        xi = xs[inside]
        owner[yi, xi] = t
        w_all[yi, xi, 0] = w1[inside]
        w_all[yi, xi, 1] = w2[inside]
        w_all[yi, xi, 2] = w3[inside]
    ys, xs = np.nonzero(owner >= 0)
    tri_index = owner[ys, xs]
    return FrameRaster(
        shape=(height, width),
        pixel_yx=np.stack([ys, xs], axis=1).astype(np.int32),
        tri_index=tri_index.astype(np.int32),
        bary=w_all[ys, xs],
        vertex_ids=mesh.triangles[tri_index],
    )


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear interpolation with edge replication outside the frame."""
    coords = np.vstack([np.asarray(y, dtype=np.float64).ravel(), np.asarray(x, dtype=np.float64).ravel()])
    return map_coordinates(image, coords, order=1, mode="nearest")


def source_positions(raster: FrameRaster, src_points: np.ndarray) -> np.ndarray:
    """Map raster pixels into source coordinates via their barycentric weights."""
    src = np.asarray(src_points, dtype=np.float64)
    return np.einsum("ni,nid->nd", raster.bary, src[raster.vertex_ids])


def warp_via_raster(image: np.ndarray, src_points: np.ndarray, raster: FrameRaster) -> np.ndarray:
    """Render the warped image on the raster's frame; off-mesh pixels are 0."""
    pos = source_positions(raster, src_points)
    values = bilinear_sample(image, pos[:, 0], pos[:, 1])
    out = np.zeros(raster.shape, dtype=np.float64)
    out[raster.pixel_yx[:, 0], raster.pixel_yx[:, 1]] = values
    return out


def piecewise_affine_warp(
    img: ThermalImage,
    src: np.ndarray,
    dst: np.ndarray,
    mesh: TriangulatedMesh,
    shape: tuple[int, int] | None = None,
) -> ThermalImage:
    """Warp ``img`` so landmarks move from ``src`` to ``dst``.

    Destination pixels inside the dst mesh sample the source image at the
    barycentric-matched location; pixels outside the mesh are zero. The
    output frame defaults to the input's shape.
    """
    dst = np.asarray(dst, dtype=np.float64)
    areas = triangle_areas(dst, mesh)
    if np.any(areas < _DEGENERATE_EPS):
        raise DegenerateShapeError("degenerate destination triangle")
    out_shape = img.shape if shape is None else (int(shape[0]), int(shape[1]))
    raster = rasterize_mesh(dst, mesh, out_shape)
    return ThermalImage(warp_via_raster(img.data, src, raster), img.units)
