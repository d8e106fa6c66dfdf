"""Per-region descriptors: stroke width, boundary smoothness and mean color."""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np
from scipy import ndimage

from .component_tree import ERTree


@dataclass(frozen=True)
class CharacterCandidate:
    """A pruned region with the descriptors used for linking and filtering.

    ``bbox`` is ``(x, y, w, h)`` with ``(x, y)`` the top-left pixel.
    """

    bbox: tuple[int, int, int, int]
    area: int
    stroke_mean: float
    stroke_var: float
    smoothness: float
    color: tuple[float, float, float]
    node: int = -1
    polarity: str = ""

    @property
    def x(self) -> int:
        return self.bbox[0]

    @property
    def y(self) -> int:
        return self.bbox[1]

    @property
    def w(self) -> int:
        return self.bbox[2]

    @property
    def h(self) -> int:
        return self.bbox[3]

    @property
    def aspect(self) -> float:
        return self.bbox[2] / self.bbox[3]

    @property
    def cx(self) -> float:
        return self.bbox[0] + 0.5 * self.bbox[2]


def _check_mask(mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or not mask.any():
        raise ValueError("mask must be a nonempty 2-D boolean array")
    return mask


def stroke_width_stats(mask) -> tuple[float, float]:
    """Mean stroke width and its coefficient of variation.

    Each region pixel's distance to the region border (half a pixel beyond
    the nearest outside pixel center) is measured with an exact Euclidean
    distance transform. Pixels that are maxima of that distance in their 8
    neighborhood form the skeleton; twice their border distance is a stroke
    sample.
    """
    mask = np.pad(_check_mask(mask), 1)
    dist = ndimage.distance_transform_edt(mask)
    ridge = mask & (dist >= ndimage.maximum_filter(dist, size=3))
    samples = 2.0 * dist[ridge] - 1.0
    mean = float(samples.mean())
    if samples.size < 2:
        return mean, 0.0
    return mean, float(samples.std(ddof=1) / mean)


def outer_boundary(mask) -> np.ndarray:
    """Ordered ``(x, y)`` pixels of the outer 8-connected contour."""
    mask = _check_mask(mask)
    contours, _ = cv2.findContours(mask.astype(np.uint8), cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
    best = max(contours, key=len)
    return best.reshape(-1, 2)


def gradient_directions(gray: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Central-difference gradient angles at the given pixels (edges replicated)."""
    g = np.asarray(gray, dtype=np.float64)
    h, w = g.shape
    xl = np.clip(xs - 1, 0, w - 1)
    xr = np.clip(xs + 1, 0, w - 1)
    yu = np.clip(ys - 1, 0, h - 1)
    yd = np.clip(ys + 1, 0, h - 1)
    gx = (g[ys, xr] - g[ys, xl]) / 2.0
    gy = (g[yd, xs] - g[yu, xs]) / 2.0
    return np.arctan2(gy, gx)


def smoothness(mask, gray, origin: tuple[int, int] = (0, 0)) -> float:
    """Mean absolute change of gradient direction between adjacent boundary pixels.

    ``mask`` may be a crop of ``gray`` whose top-left pixel sits at ``origin``
    (x, y). The contour is treated as closed. Angle differences are wrapped
    into [0, pi].
    """
    pts = outer_boundary(mask)
    if len(pts) < 2:
        return 0.0
    xs = pts[:, 0] + origin[0]
    ys = pts[:, 1] + origin[1]
    theta = gradient_directions(gray, xs, ys)
    diff = np.abs(np.angle(np.exp(1j * (np.roll(theta, -1) - theta))))
    return float(diff.mean())


def mean_color(mask, color_image, origin: tuple[int, int] = (0, 0)) -> tuple[float, float, float]:
    mask = _check_mask(mask)
    img = np.asarray(color_image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None].repeat(3, axis=2)
    x0, y0 = origin
    crop = img[y0:y0 + mask.shape[0], x0:x0 + mask.shape[1], :3]
    if crop.shape[:2] != mask.shape:
        raise ValueError("mask does not fit inside the image at the given origin")
    vals = crop[mask]
    return tuple(float(v) for v in vals.mean(axis=0))


def describe_region(tree: ERTree, node: int, gray, color_image=None) -> CharacterCandidate:
    """Descriptors of one tree node.

    ``gray`` is the original (non-inverted) grayscale used for gradients.
    """
    x, y, w, h = tree.xywh(node)
    mask = tree.mask(node)
    stroke, stroke_cv = stroke_width_stats(mask)
    smooth = smoothness(mask, gray, (x, y))
    if color_image is None:
        area = float(tree.area[node])
        color = tuple(float(c) / area for c in tree.color_sum[node])
    else:
        color = mean_color(mask, color_image, (x, y))
    return CharacterCandidate(
        bbox=(x, y, w, h),
        area=int(tree.area[node]),
        stroke_mean=stroke,
        stroke_var=stroke_cv,
        smoothness=smooth,
        color=color,
        node=int(node),
        polarity=tree.polarity,
    )


def describe_regions(tree: ERTree, nodes, gray, color_image=None) -> list[CharacterCandidate]:
    return [describe_region(tree, int(n), gray, color_image) for n in nodes]
