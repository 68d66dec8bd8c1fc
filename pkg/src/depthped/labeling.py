"""Ground-plane occupancy grids and per-point structure labeling.

Points are projected into a 2-D grid spanned by an orthonormal basis of
the ground plane.  Low-occupancy cells are where the ground shows through
(objects concentrate many pixels into few cells), so they feed the plane
refinement.  A four-band height histogram per cell then splits the scene
into ground, objects, free space and elevated structures; only Object
points go on to ROI extraction.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import ConfigError
from .geometry import GroundPlane, PointCloud, height_above_plane, plane_basis


class StructureLabel(enum.IntEnum):
    """Height-band class of a point, in ascending band order."""

    GROUND_PLANE = 0
    OBJECT = 1
    FREE_SPACE = 2
    ELEVATED_STRUCTURE = 3


@dataclass(frozen=True)
class HeightBands:
    """Band edges (meters above ground) separating the four classes.

    Everything below ``ground_top`` counts as ground (sensor noise puts
    real ground points slightly below the plane too), ``[ground_top,
    object_top)`` is object height, ``[object_top, free_top)`` is the
    free-space band a person never reaches, and ``free_top`` upwards is
    elevated structure (signs, branches, ceilings).
    """

    ground_top: float = 0.2
    object_top: float = 2.0
    free_top: float = 2.8

    def __post_init__(self):
        if not (0 < self.ground_top < self.object_top < self.free_top):
            raise ConfigError(
                f"band edges must be ascending and positive, got "
                f"{self.ground_top}, {self.object_top}, {self.free_top}"
            )

    @property
    def edges(self) -> np.ndarray:
        return np.array([self.ground_top, self.object_top, self.free_top])


@dataclass
class OccupancyGrid:
    """Point counts over a regular grid in ground-plane coordinates.

    ``counts`` has shape (rows, cols); ``cell_ids`` maps every input point
    to its flat cell index ``row * cols + col``.  ``bins`` lists the point
    indices per flat cell and always satisfies ``counts.flat[c] ==
    len(bins[c])``.
    """

    cell_size: float
    origin: np.ndarray
    counts: np.ndarray
    cell_ids: np.ndarray
    # When the grid was built from a subset of a larger cloud, maps local
    # point positions back to indices into that cloud.
    source_indices: np.ndarray | None = None

    @property
    def n_cells(self) -> int:
        return int(self.counts.size)

    @cached_property
    def bins(self) -> list[np.ndarray]:
        order = np.argsort(self.cell_ids, kind="stable")
        boundaries = np.cumsum(self.counts.ravel())
        return [np.array(chunk, dtype=np.int64) for chunk in np.split(order, boundaries[:-1])]

    def point_indices(self, flat_cell: int) -> np.ndarray:
        """Indices (into the source cloud) of the points in one cell."""
        return self.bins[flat_cell]


@dataclass
class LabeledCloud:
    """A point cloud with one structure label per point."""

    cloud: PointCloud
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if len(self.labels) != len(self.cloud):
            raise ConfigError(
                f"labels ({len(self.labels)}) do not match cloud ({len(self.cloud)})"
            )


def _grid_coordinates(
    cloud: PointCloud, plane: GroundPlane, cell_size: float
) -> tuple[np.ndarray, np.ndarray, tuple[int, int], np.ndarray]:
    """Shared projection + binning: returns (cols, rows, shape, origin)."""
    e1, e2 = plane_basis(plane)
    pts = cloud.points
    s = pts @ e1
    t = pts @ e2
    s0 = np.floor(s.min() / cell_size) * cell_size
    t0 = np.floor(t.min() / cell_size) * cell_size
    cols = np.floor((s - s0) / cell_size).astype(np.int64)
    rows = np.floor((t - t0) / cell_size).astype(np.int64)
    shape = (int(rows.max()) + 1, int(cols.max()) + 1)
    return cols, rows, shape, np.array([s0, t0])


def build_occupancy(cloud: PointCloud, plane: GroundPlane, cell_size: float = 0.2) -> OccupancyGrid:
    """Bin every point of ``cloud`` into ground-plane grid cells."""
    if cell_size <= 0:
        raise ConfigError(f"cell size must be positive, got {cell_size}")
    if len(cloud) == 0:
        return OccupancyGrid(
            cell_size=cell_size,
            origin=np.zeros(2),
            counts=np.zeros((0, 0), dtype=np.int32),
            cell_ids=np.zeros(0, dtype=np.int64),
        )
    cols, rows, shape, origin = _grid_coordinates(cloud, plane, cell_size)
    cell_ids = rows * shape[1] + cols
    counts = np.bincount(cell_ids, minlength=shape[0] * shape[1]).astype(np.int32)
    return OccupancyGrid(
        cell_size=cell_size,
        origin=origin,
        counts=counts.reshape(shape),
        cell_ids=cell_ids,
    )


def select_low_density(grid: OccupancyGrid, max_count: int) -> np.ndarray:
    """Indices of all points sitting in cells with ``count <= max_count``.

    These are the sparse cells where the ground is visible between
    objects; they make a far cleaner input to plane fitting than the raw
    cloud.
    """
    if len(grid.cell_ids) == 0:
        return np.zeros(0, dtype=np.int64)
    keep = grid.counts.ravel()[grid.cell_ids] <= max_count
    return np.nonzero(keep)[0]


def label_structure(
    cloud: PointCloud,
    plane: GroundPlane,
    cell_size: float = 0.2,
    bands: HeightBands = HeightBands(),
    free_max_fraction: float = 0.05,
    object_max_fraction: float = 0.10,
) -> LabeledCloud:
    """Assign one structure label to every point.

    Each point starts from its own height band.  A cell is recognized as
    elevated structure only when its free-space band holds less than
    ``free_max_fraction`` of the cell's points, the elevated band is
    nonempty, and the object band holds less than ``object_max_fraction``:
    a person standing under a sign keeps their Object label because the
    object band is then well populated.  In cells recognized as elevated,
    the few object-band stragglers are folded into the structure.
    """
    if len(cloud) == 0:
        return LabeledCloud(cloud=cloud, labels=np.zeros(0, dtype=np.int8))

    heights = height_above_plane(cloud.points, plane)
    band = np.digitize(heights, bands.edges)  # 0..3, lower edge inclusive

    cols, rows, shape, _ = _grid_coordinates(cloud, plane, cell_size)
    cell_ids = rows * shape[1] + cols
    n_cells = shape[0] * shape[1]
    hist = np.bincount(cell_ids * 4 + band, minlength=n_cells * 4).reshape(n_cells, 4)

    totals = hist.sum(axis=1)
    safe_totals = np.maximum(totals, 1)
    elevated_cell = (
        (hist[:, 2] < free_max_fraction * safe_totals)
        & (hist[:, 3] > 0)
        & (hist[:, 1] < object_max_fraction * safe_totals)
    )

    labels = band.astype(np.int8)
    fold = elevated_cell[cell_ids] & (band == StructureLabel.OBJECT)
    labels[fold] = StructureLabel.ELEVATED_STRUCTURE
    return LabeledCloud(cloud=cloud, labels=labels)
