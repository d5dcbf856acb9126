"""Delaunay triangulation and piecewise-affine image warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError

SNAP = 1e-5
INSIDE_TOL = 1e-9


@dataclass(frozen=True)
class Triangulation:
    """Vertex index triples ``[T, 3]`` into a landmark array."""

    simplices: np.ndarray

    def __len__(self) -> int:
        return len(self.simplices)


def triangulate(points: np.ndarray) -> Triangulation:
    """Delaunay triangulation of ``[P, 2]`` points with a canonical triangle order."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2 or len(points) < 3:
        raise ValueError("need at least three 2-D points")
    try:
        tri = Delaunay(points)
    except QhullError as exc:
        raise ValueError(f"degenerate landmark set: {exc}") from None
    simplices = np.sort(tri.simplices, axis=1)
    areas = np.abs(_signed_area(points, simplices))
    simplices = simplices[areas > 1e-12]
    if len(simplices) == 0:
        raise ValueError("degenerate landmark set: all points are collinear")
    order = np.lexsort(simplices.T[::-1])
    return Triangulation(simplices[order])


def _signed_area(points, simplices) -> np.ndarray:
    a, b, c = points[simplices[:, 0]], points[simplices[:, 1]], points[simplices[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))


def barycentric(points: np.ndarray, tri: Triangulation, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Containing triangle index and barycentric weights for each ``[N, 2]`` query.

    The lowest-index containing triangle wins on shared edges; the index
    is -1 for queries outside the triangulated hull.
    """
    s = tri.simplices
    a, b, c = points[s[:, 0]], points[s[:, 1]], points[s[:, 2]]
    v0, v1 = b - a, c - a
    det = v0[:, 0] * v1[:, 1] - v1[:, 0] * v0[:, 1]
    d = query[:, None, :] - a[None]
    l1 = (d[..., 0] * v1[None, :, 1] - v1[None, :, 0] * d[..., 1]) / det
    l2 = (v0[None, :, 0] * d[..., 1] - d[..., 0] * v0[None, :, 1]) / det
    l0 = 1.0 - l1 - l2
    inside = (l0 >= -INSIDE_TOL) & (l1 >= -INSIDE_TOL) & (l2 >= -INSIDE_TOL)
    found = inside.any(axis=1)
    idx = np.where(found, inside.argmax(axis=1), -1)
    rows = np.arange(len(query))
    k = np.maximum(idx, 0)
    weights = np.stack([l0[rows, k], l1[rows, k], l2[rows, k]], axis=1)
    return idx, weights


def _snap(c: np.ndarray) -> np.ndarray:
    r = np.round(c)
    return np.where(np.abs(c - r) < SNAP, r, c)


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, fill=None) -> np.ndarray:
    """Sample ``[C, H, W]`` at float pixel coordinates (pixel centers at integers).

    Coordinates outside the image take ``fill`` (per channel) when given,
    otherwise they are clamped to the border.
    """
    c, h, w = image.shape
    x, y = _snap(np.asarray(x, np.float64)), _snap(np.asarray(y, np.float64))
    outside = (x < 0) | (x > w - 1) | (y < 0) | (y > h - 1)
    xc, yc = np.clip(x, 0, w - 1), np.clip(y, 0, h - 1)
    x0, y0 = np.floor(xc).astype(np.int64), np.floor(yc).astype(np.int64)
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    fx, fy = (xc - x0).astype(image.dtype), (yc - y0).astype(image.dtype)
    top = image[:, y0, x0] * (1 - fx) + image[:, y0, x1] * fx
    bottom = image[:, y1, x0] * (1 - fx) + image[:, y1, x1] * fx
    out = top * (1 - fy) + bottom * fy
    if fill is not None and outside.any():
        out[:, outside] = np.asarray(fill, image.dtype).reshape(-1, 1)
    return out


def nearest_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, fill=None) -> np.ndarray:
    c, h, w = image.shape
    xi = np.round(np.asarray(x, np.float64)).astype(np.int64)
    yi = np.round(np.asarray(y, np.float64)).astype(np.int64)
    outside = (xi < 0) | (xi > w - 1) | (yi < 0) | (yi > h - 1)
    out = image[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    if fill is not None and outside.any():
        out[:, outside] = np.asarray(fill, image.dtype).reshape(-1, 1)
    return out


def piecewise_affine_warp(src_image: np.ndarray, src_landmarks: np.ndarray, dst_landmarks: np.ndarray, tri: Triangulation | None = None) -> np.ndarray:
    """Move ``src_image`` so that its landmarks land on ``dst_landmarks``.

    Every destination pixel is located in a triangle of ``tri`` (built over
    ``dst_landmarks``) and pulled back through that triangle's affine map
    onto the source, where it is sampled bilinearly.
    """
    src_landmarks = np.asarray(src_landmarks, np.float64)
    dst_landmarks = np.asarray(dst_landmarks, np.float64)
    if src_landmarks.shape != dst_landmarks.shape:
        raise ValueError("landmark sets differ in size")
    if tri is None:
        tri = triangulate(dst_landmarks)
    c, h, w = src_image.shape
    ys, xs = np.mgrid[0:h, 0:w]
    query = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)
    idx, lam = barycentric(dst_landmarks, tri, query)
    if (idx < 0).any():
        raise RuntimeError(f"{int((idx < 0).sum())} pixels fall outside the triangulation")
    verts = tri.simplices[idx]
    src = np.einsum("nk,nkd->nd", lam, src_landmarks[verts])
    out = bilinear_sample(src_image, src[:, 0], src[:, 1])
    return out.reshape(c, h, w)
