"""BEV rendering with box overlays, written as binary PPM images."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bev import GridSpec, rasterize
from .geometry import LIDAR, PointCloud

GT_COLOR = (80, 220, 80)
PSEUDO_COLOR = (240, 80, 80)
PROPOSAL_COLOR = (90, 140, 250)


def bev_base_image(cloud: PointCloud, spec: GridSpec) -> np.ndarray:
    """Grayscale uint8 render of the BEV channels."""
    img = rasterize(cloud, spec)
    value = np.clip(np.maximum(img[:, :, 0], img[:, :, 2]) * 255.0, 0, 255).astype(np.uint8)
    return np.repeat(value[:, :, None], 3, axis=2)


def _to_pixel(point_xy, spec: GridSpec):
    row = (point_xy[0] - spec.x_range[0]) / spec.x_res
    col = (point_xy[1] - spec.y_range[0]) / spec.y_res
    return row, col


def _draw_line(image, r0, c0, r1, c1, color):
    n = int(max(abs(r1 - r0), abs(c1 - c0))) + 1
    rows = np.round(np.linspace(r0, r1, n)).astype(int)
    cols = np.round(np.linspace(c0, c1, n)).astype(int)
    keep = (rows >= 0) & (rows < image.shape[0]) & (cols >= 0) & (cols < image.shape[1])
    image[rows[keep], cols[keep]] = color


def draw_box_outline(image, box, spec: GridSpec, color):
    """Draw a lidar-frame box's footprint outline onto a BEV image."""
    if box.frame != LIDAR:
        raise ValueError("draw_box_outline expects lidar-frame boxes")
    corners = [_to_pixel(p, spec) for p in box.footprint()]
    for i in range(4):
        r0, c0 = corners[i]
        r1, c1 = corners[(i + 1) % 4]
        _draw_line(image, r0, c0, r1, c1, color)


def render_overlays(cloud: PointCloud, spec: GridSpec, overlays) -> np.ndarray:
    """Render the BEV image with coloured box outlines.

    `overlays` maps a colour (r, g, b) to a list of lidar-frame boxes.
    """
    image = bev_base_image(cloud, spec)
    for color, boxes in overlays:
        for box in boxes:
            draw_box_outline(image, box, spec, color)
    return image


def write_ppm(path, image: np.ndarray):
    """Write an (h, w, 3) uint8 image as a binary PPM."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
