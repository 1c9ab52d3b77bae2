"""From a per-pixel label mask to a list of object detections.

binarize -> morphological close + open -> outer border following
-> convex hull -> bounding box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator

from ._validation import check_image, check_mask, check_positive_int
from .background import FOREGROUND
from .geometry import Box

_EIGHT = np.ones((3, 3), dtype=bool)

# neighbour offsets (dy, dx), clockwise on screen starting East
_DY = np.array([0, 1, 1, 1, 0, -1, -1, -1], dtype=np.int64)
_DX = np.array([1, 1, 0, -1, -1, -1, 0, 1], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Detection:
    box: Box
    mask_crop: np.ndarray   # (h, w) bool
    pixel_crop: np.ndarray  # (h, w, 3) uint8
    area: int

    @property
    def centroid(self) -> tuple[float, float]:
        return self.box.center


def binarize(labels: np.ndarray) -> np.ndarray:
    """Foreground -> 1; background and shadow -> 0."""
    return (np.asarray(labels) == FOREGROUND).astype(np.uint8)


def _shift_or(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    out = a.copy()
    n = a.shape[axis]
    for d in range(1, min(r, n - 1) + 1):
        if axis == 0:
            out[d:] |= a[:-d]
            out[:-d] |= a[d:]
        else:
            out[:, d:] |= a[:, :-d]
            out[:, :-d] |= a[:, d:]
    return out


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Square ``(2r+1)`` dilation; outside the frame counts as background."""
    return _shift_or(_shift_or(mask, r, 0), r, 1)


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    """Square ``(2r+1)`` erosion; outside the frame counts as foreground."""
    return ~dilate(~mask, r)


def morph_close(mask: np.ndarray, kernel_radius: int = 1, iterations: int = 2) -> np.ndarray:
    """Close holes then open away speckle, with a ``(2r+1)`` square element.

    ``iterations`` dilations are followed by ``iterations`` erosions, then one
    erosion and one dilation. Pixels outside the frame never erode the mask.
    """
    check_positive_int(kernel_radius, "kernel_radius")
    check_positive_int(iterations, "iterations", minimum=0)
    out = np.asarray(mask) != 0
    if not out.any():
        return np.zeros(out.shape, dtype=np.uint8)
    for _ in range(iterations):
        out = dilate(out, kernel_radius)
    for _ in range(iterations):
        out = erode(out, kernel_radius)
    out = dilate(erode(out, kernel_radius), kernel_radius)
    return out.view(np.uint8)


@numba.njit(cache=True, nogil=True)
def _trace_outer_border(labels, lab, sy, sx, dy, dx):
    h, w = labels.shape
    out = []

    def nonzero(y, x):
        return 0 <= y < h and 0 <= x < w and labels[y, x] == lab

    # first neighbour clockwise from the West pixel
    first = -1
    for k in range(8):
        d = (4 + k) % 8
        if nonzero(sy + dy[d], sx + dx[d]):
            first = d
            break
    if first < 0:
        out.append((sx, sy))
        return out
    y1 = sy + dy[first]
    x1 = sx + dx[first]
    py, px = y1, x1
    cy, cx = sy, sx
    while True:
        # direction from current towards previous
        back = 0
        for d in range(8):
            if cy + dy[d] == py and cx + dx[d] == px:
                back = d
                break
        ny, nx = cy, cx
        for k in range(1, 9):
            d = (back - k) % 8
            if nonzero(cy + dy[d], cx + dx[d]):
                ny = cy + dy[d]
                nx = cx + dx[d]
                break
        out.append((cx, cy))
        if ny == sy and nx == sx and cy == y1 and cx == x1:
            break
        py, px = cy, cx
        cy, cx = ny, nx
    return out


def _label(mask: np.ndarray):
    return ndimage.label(mask, structure=_EIGHT)


def _start_pixel(labels: np.ndarray, lab: int, sl: tuple[slice, slice]) -> tuple[int, int]:
    row = sl[0].start
    cols = np.flatnonzero(labels[row, sl[1]] == lab)
    return row, sl[1].start + int(cols[0])


def trace_component(labels: np.ndarray, lab: int, start: tuple[int, int]) -> np.ndarray:
    """Ordered outer boundary ``(x, y)`` points of component ``lab``."""
    pts = _trace_outer_border(labels, lab, start[0], start[1], _DY, _DX)
    return np.array(pts, dtype=np.int64).reshape(-1, 2)


def extract_components(mask: np.ndarray) -> list[np.ndarray]:
    """One outer contour per 8-connected foreground component, in raster order."""
    mask = check_mask(mask)
    labels, count = _label(mask != 0)
    contours = []
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        contours.append(trace_component(labels, lab, _start_pixel(labels, lab, sl)))
    return contours


@numba.njit(cache=True, nogil=True)
def _monotone_chain(pts):
    n = pts.shape[0]
    hull = np.empty((2 * n, 2), dtype=np.int64)
    k = 0
    for i in range(n):
        while k >= 2 and (
            (hull[k - 1, 0] - hull[k - 2, 0]) * (pts[i, 1] - hull[k - 2, 1])
            - (hull[k - 1, 1] - hull[k - 2, 1]) * (pts[i, 0] - hull[k - 2, 0])
        ) <= 0:
            k -= 1
        hull[k, 0] = pts[i, 0]
        hull[k, 1] = pts[i, 1]
        k += 1
    lower = k + 1
    for i in range(n - 2, -1, -1):
        while k >= lower and (
            (hull[k - 1, 0] - hull[k - 2, 0]) * (pts[i, 1] - hull[k - 2, 1])
            - (hull[k - 1, 1] - hull[k - 2, 1]) * (pts[i, 0] - hull[k - 2, 0])
        ) <= 0:
            k -= 1
        hull[k, 0] = pts[i, 0]
        hull[k, 1] = pts[i, 1]
        k += 1
    return hull[: k - 1].copy()


def convex_hull(points) -> np.ndarray:
    """Monotone-chain convex hull.

    Vertices are returned counter-clockwise with respect to the (x, y) axes,
    without collinear points. Collinear input yields its two end points.
    """
    pts = np.unique(np.asarray(points, dtype=np.int64).reshape(-1, 2), axis=0)
    if len(pts) == 0:
        raise ValueError("convex_hull of an empty point set")
    if len(pts) <= 2:
        return pts
    return _monotone_chain(pts)


def hull_bounds(hull: np.ndarray) -> Box:
    x0, y0 = hull.min(axis=0)
    x1, y1 = hull.max(axis=0)
    return Box(int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1))


class ObjectDetector(BaseEstimator):
    """Turn a background-model label mask into ordered :class:`Detection` objects.

    Parameters
    ----------
    morph_radius : int
        Radius of the square structuring element.
    morph_iters : int
        Number of dilations (then erosions) in the closing step.
    min_area_fraction : float
        Components smaller than this fraction of the frame area are dropped.
    """

    def __init__(self, morph_radius=1, morph_iters=2, min_area_fraction=0.0002):
        self.morph_radius = morph_radius
        self.morph_iters = morph_iters
        self.min_area_fraction = min_area_fraction

    def fit(self, X=None, y=None):
        return self

    def clean_mask(self, labels: np.ndarray) -> np.ndarray:
        return morph_close(binarize(labels), self.morph_radius, self.morph_iters)

    def min_area(self, shape) -> int:
        return max(1, int(np.ceil(self.min_area_fraction * shape[0] * shape[1])))

    def transform(self, image, labels) -> list[Detection]:
        image = check_image(image)
        labels = check_mask(labels, image.shape[:2], "labels")
        closed = self.clean_mask(labels)
        return self.detect_from_mask(image, closed)

    def detect_from_mask(self, image: np.ndarray, closed: np.ndarray) -> list[Detection]:
        comp, count = _label(closed)
        if count == 0:
            return []
        areas = np.bincount(comp.ravel(), minlength=count + 1)
        min_area = self.min_area(closed.shape)
        detections = []
        for lab, sl in enumerate(ndimage.find_objects(comp), start=1):
            if sl is None or areas[lab] < min_area:
                continue
            contour = trace_component(comp, lab, _start_pixel(comp, lab, sl))
            box = hull_bounds(convex_hull(contour))
            rows, cols = box.slices
            detections.append(
                Detection(
                    box=box,
                    mask_crop=comp[rows, cols] == lab,
                    pixel_crop=image[rows, cols].copy(),
                    area=int(areas[lab]),
                )
            )
        detections.sort(key=lambda d: (d.box.y, d.box.x))
        return detections


def detect_objects(image, labels, morph_radius=1, morph_iters=2, min_area_fraction=0.0002):
    return ObjectDetector(morph_radius, morph_iters, min_area_fraction).transform(image, labels)
