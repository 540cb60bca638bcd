"""Sources of the dense box grid the sampler draws from.

Either a file-backed grid produced by an external predictor, or a built-in
point-density heuristic that makes fully self-contained end-to-end runs
possible without any trained model.
"""

from __future__ import annotations

import numpy as np

from .bev import BoxGrid, GridSpec, in_volume_mask
from .dataset import read_box_grid
from .geometry import LIDAR, PointCloud

# Height above the volume floor below which points count as ground.
DEFAULT_GROUND_MARGIN = 0.3

# Smallest per-axis extent a heuristic cell may report.
_MIN_EXTENT = 0.1


def grid_from_file(path, spec: GridSpec) -> BoxGrid:
    """Load an externally predicted box grid, validating its shape."""
    return read_box_grid(path, spec)


def heuristic_grid(cloud: PointCloud, spec: GridSpec, ground_margin: float = DEFAULT_GROUND_MARGIN) -> BoxGrid:
    """Point-density stand-in predictor.

    Ground is removed with a simple height threshold (adequate for flat
    synthetic or urban ground; a documented limitation otherwise). Remaining
    points pool per output cell: the offset is the pooled centroid relative
    to the pillar centre, the dims are the per-axis point spreads clamped to
    a 0.1 m floor, yaw is 0 and the confidence is the cell's point count
    normalized by the busiest cell. Deterministic and independent of the
    input point order.
    """
    if cloud.frame != LIDAR:
        raise ValueError("heuristic_grid expects a lidar-frame cloud")
    grid = BoxGrid.zeros(spec)
    if len(cloud) == 0:
        return grid
    xyz = cloud.xyz
    keep = in_volume_mask(xyz, spec) & (xyz[:, 2] >= spec.z_range[0] + ground_margin)
    if not keep.any():
        return grid
    xyz = xyz[keep]
    rows = np.floor((xyz[:, 0] - spec.x_range[0]) / spec.cell_x).astype(int)
    cols = np.floor((xyz[:, 1] - spec.y_range[0]) / spec.cell_y).astype(int)
    rows = np.clip(rows, 0, spec.out_rows - 1)
    cols = np.clip(cols, 0, spec.out_cols - 1)
    flat = rows * spec.out_cols + cols

    n_cells = spec.out_rows * spec.out_cols
    count = np.zeros(n_cells)
    np.add.at(count, flat, 1.0)
    sums = np.zeros((n_cells, 3))
    lo = np.full((n_cells, 3), np.inf)
    hi = np.full((n_cells, 3), -np.inf)
    for axis in range(3):
        np.add.at(sums[:, axis], flat, xyz[:, axis])
        np.minimum.at(lo[:, axis], flat, xyz[:, axis])
        np.maximum.at(hi[:, axis], flat, xyz[:, axis])

    occupied = np.flatnonzero(count > 0)
    max_count = count.max()
    cell_z = 0.5 * (spec.z_range[0] + spec.z_range[1])
    for cell in occupied:
        r, c = divmod(int(cell), spec.out_cols)
        centroid = sums[cell] / count[cell]
        pillar = np.array(
            [
                spec.x_range[0] + (r + 0.5) * spec.cell_x,
                spec.y_range[0] + (c + 0.5) * spec.cell_y,
                cell_z,
            ]
        )
        spread = np.maximum(hi[cell] - lo[cell], _MIN_EXTENT)
        grid.data[r, c, 0:3] = centroid - pillar
        grid.data[r, c, 3:6] = spread
        grid.data[r, c, 6] = 0.0
        grid.data[r, c, 7] = count[cell] / max_count
    return grid
