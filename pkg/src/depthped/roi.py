"""Region-of-interest extraction from Object-labeled points.

Object points are re-binned on the ground plane, 8-connected groups of
occupied cells become object candidates, and each candidate's points are
projected back to the image to form a pixel-tight bounding box with a
median camera distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .geometry import GroundPlane, PointCloud
from .labeling import LabeledCloud, OccupancyGrid, StructureLabel, build_occupancy

# Diagonal neighbors count as connected: objects sampled obliquely often
# touch corner to corner on the grid.
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass
class Component:
    """One connected group of occupied grid cells."""

    cells: np.ndarray  # flat cell indices, ascending
    point_count: int

    @property
    def min_cell(self) -> int:
        return int(self.cells[0])


@dataclass
class Roi:
    """Candidate object region: pixel hull, member points, median distance."""

    bbox: tuple[int, int, int, int]  # x, y, w, h
    point_indices: np.ndarray
    distance_m: float


def roi_histogram(
    labeled: LabeledCloud, plane: GroundPlane, cell_size: float = 0.2
) -> OccupancyGrid:
    """Occupancy grid over Object-labeled points only.

    The returned grid's ``source_indices`` map its rows back into the full
    cloud so components can recover original pixels.
    """
    object_idx = np.nonzero(labeled.labels == StructureLabel.OBJECT)[0]
    sub = PointCloud(
        points=labeled.cloud.points[object_idx],
        pixels=labeled.cloud.pixels[object_idx],
    )
    grid = build_occupancy(sub, plane, cell_size)
    grid.source_indices = object_idx
    return grid


def connected_components(grid: OccupancyGrid, min_points: int = 50) -> list[Component]:
    """8-connected components of occupied cells, largest first.

    Components carrying fewer than ``min_points`` points total are
    dropped.  Ordering is by descending point count with ties broken by
    the smallest flat cell index, so results are reproducible.
    """
    if min_points < 1:
        raise ConfigError(f"min_points must be >= 1, got {min_points}")
    if grid.n_cells == 0:
        return []
    labels, n_found = ndimage.label(grid.counts > 0, structure=_EIGHT_CONNECTED)
    components: list[Component] = []
    flat_labels = labels.ravel()
    flat_counts = grid.counts.ravel()
    for comp_id in range(1, n_found + 1):
        cells = np.nonzero(flat_labels == comp_id)[0]
        total = int(flat_counts[cells].sum())
        if total >= min_points:
            components.append(Component(cells=cells, point_count=total))
    components.sort(key=lambda c: (-c.point_count, c.min_cell))
    return components


def back_project_bbox(component: Component, grid: OccupancyGrid, cloud: PointCloud) -> Roi:
    """Pixel hull and median distance of one component's points."""
    local = np.concatenate([grid.point_indices(c) for c in component.cells])
    local.sort()
    source = getattr(grid, "source_indices", None)
    indices = local if source is None else np.asarray(source)[local]
    pixels = cloud.pixels[indices]
    x0, y0 = pixels.min(axis=0)
    x1, y1 = pixels.max(axis=0)
    distance = float(np.median(cloud.points[indices, 2]))
    return Roi(
        bbox=(int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1)),
        point_indices=indices,
        distance_m=distance,
    )


def extract_rois(
    labeled: LabeledCloud,
    plane: GroundPlane,
    cell_size: float = 0.2,
    min_points: int = 50,
) -> list[Roi]:
    """Full ROI stage: histogram, components, back-projection."""
    grid = roi_histogram(labeled, plane, cell_size)
    return [
        back_project_bbox(comp, grid, labeled.cloud)
        for comp in connected_components(grid, min_points)
    ]
