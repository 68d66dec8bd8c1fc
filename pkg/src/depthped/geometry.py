"""Camera geometry: back-projection and ground-plane estimation.

Coordinate conventions used throughout the package:

* Pixel coordinates are ``(u, v)`` with ``u`` the column and ``v`` the row.
* Camera coordinates follow the pinhole model with ``z`` along the optical
  axis and ``y`` pointing down in the image, so for a depth ``z`` at pixel
  ``(u, v)``::

      x = (u - cx) * z / fx
      y = (v - cy) * z / fy

* Depth maps store meters in float32 with ``0`` marking invalid pixels
  (no sensor return).  Negative or non-finite values are treated as
  invalid as well.
* A ground plane is the set of points ``p`` with ``normal . p == offset``
  where ``normal`` is unit length and oriented so that points above the
  ground (heads, not feet) have positive height.  With ``y`` down and a
  camera mounted above the ground this means ``normal[1] < 0`` and
  ``offset < 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateGeometry, InsufficientPoints

# Below this many candidate points a 3-point plane hypothesis cannot be drawn.
MIN_PLANE_POINTS = 3

# Cross products with squared norm under this fraction of the triplet scale
# are considered collinear and discarded as hypotheses.
_COLLINEAR_EPS = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics for a single rectified camera."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass
class DepthFrame:
    """One captured frame: depth in meters (0 = invalid) plus optional RGB."""

    depth: np.ndarray
    frame_id: int = 0
    rgb: Optional[np.ndarray] = None

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float32)
        if depth.ndim != 2:
            raise ConfigError(f"depth must be 2-D, got shape {depth.shape}")
        self.depth = depth
        if self.rgb is not None:
            rgb = np.asarray(self.rgb)
            if rgb.shape != (*depth.shape, 3):
                raise ConfigError(
                    f"rgb shape {rgb.shape} does not match depth {depth.shape}"
                )
            self.rgb = rgb.astype(np.uint8, copy=False)

    @property
    def valid_mask(self) -> np.ndarray:
        """Boolean mask of pixels carrying a usable depth value."""
        return (self.depth > 0) & np.isfinite(self.depth)


@dataclass
class PointCloud:
    """Back-projected points with their source pixels.

    ``points`` is (N, 3) float64 camera coordinates; ``pixels`` is (N, 2)
    int32 ``(u, v)`` source coordinates, aligned row for row.
    """

    points: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.pixels = np.asarray(self.pixels, dtype=np.int32).reshape(-1, 2)
        if len(self.points) != len(self.pixels):
            raise ConfigError(
                f"points ({len(self.points)}) and pixels ({len(self.pixels)}) disagree"
            )

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class GroundPlane:
    """Plane ``normal . p == offset`` with unit normal, positive side up."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        normal = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(normal))
        if not np.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ConfigError(f"plane normal must be unit length, |n| = {norm}")
        object.__setattr__(self, "normal", normal / norm)
        object.__setattr__(self, "offset", float(self.offset))


def backproject(frame: DepthFrame, intrinsics: CameraIntrinsics) -> PointCloud:
    """Back-project every valid depth pixel into camera coordinates.

    Points come out in row-major pixel scan order, which keeps downstream
    results reproducible.
    """
    depth = frame.depth
    h, w = depth.shape
    if (w, h) != (intrinsics.width, intrinsics.height):
        raise ConfigError(
            f"depth {w}x{h} does not match intrinsics {intrinsics.width}x{intrinsics.height}"
        )
    valid = frame.valid_mask
    vs, us = np.nonzero(valid)
    z = depth[vs, us].astype(np.float64)
    x = (us - intrinsics.cx) * z / intrinsics.fx
    y = (vs - intrinsics.cy) * z / intrinsics.fy
    points = np.stack([x, y, z], axis=1)
    pixels = np.stack([us, vs], axis=1)
    return PointCloud(points=points, pixels=pixels)


def project(points: np.ndarray, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Forward-project (N, 3) camera points to continuous (u, v) coordinates."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    u = pts[:, 0] * intrinsics.fx / z + intrinsics.cx
    v = pts[:, 1] * intrinsics.fy / z + intrinsics.cy
    return np.stack([u, v], axis=1)


def height_above_plane(points: np.ndarray, plane: GroundPlane) -> np.ndarray | float:
    """Signed height of a point (or array of points) above the ground plane."""
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    heights = pts.reshape(-1, 3) @ plane.normal - plane.offset
    return float(heights[0]) if single else heights


def plane_inliers(points: np.ndarray, plane: GroundPlane, threshold: float) -> np.ndarray:
    """Indices of points within ``threshold`` meters of the plane."""
    dist = np.abs(np.asarray(points, dtype=np.float64) @ plane.normal - plane.offset)
    return np.nonzero(dist <= threshold)[0]


def plane_basis(plane: GroundPlane) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal basis spanning the plane.

    The seed axis is the world axis least aligned with the normal, so the
    basis is stable under small perturbations of the plane.
    """
    n = plane.normal
    axis = np.zeros(3)
    axis[int(np.argmin(np.abs(n)))] = 1.0
    e1 = np.cross(axis, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def level_plane(camera_height: float) -> GroundPlane:
    """Ground plane for a level camera mounted ``camera_height`` meters up.

    Used as the coarse prior when the true plane is estimated from data.
    """
    if camera_height <= 0:
        raise ConfigError(f"camera height must be positive, got {camera_height}")
    return GroundPlane(normal=np.array([0.0, -1.0, 0.0]), offset=-camera_height)


def _least_squares_plane(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Total-least-squares plane through ``points`` (eigenvector of smallest
    eigenvalue of the scatter matrix)."""
    centroid = points.mean(axis=0)
    centered = points - centroid
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    norm = float(np.linalg.norm(normal))
    if norm == 0 or not np.isfinite(norm):
        raise DegenerateGeometry("least-squares refit collapsed; points are degenerate")
    normal = normal / norm
    return normal, float(normal @ centroid)


def _orient_up(
    normal: np.ndarray, offset: float, points: np.ndarray, margin: float = 0.05
) -> tuple[np.ndarray, float]:
    """Flip the plane so the bulk of the scene sits on the positive side.

    Points farther than ``margin`` from the plane vote; everything standing
    on the ground lies strictly above it.  Plane-level noise spills a few
    points past the margin on both sides, so only a decisive majority (2:1)
    carries the vote; an indecisive cloud defers to the camera origin (a
    camera looks at the ground from above), and a plane through the origin
    falls back to a fixed component convention.
    """
    heights = points @ normal - offset
    above = int(np.count_nonzero(heights > margin))
    below = int(np.count_nonzero(heights < -margin))
    if max(above, below) >= max(1, 2 * min(above, below)):
        flip = below > above
    elif abs(offset) > 1e-12:
        flip = offset > 0  # origin height is -offset; keep the camera above ground
    else:
        k = int(np.argmax(np.abs(normal)))
        flip = normal[k] < 0
    if flip:
        return -normal, -offset
    return normal, offset


def fit_plane_ransac(
    cloud: PointCloud | np.ndarray,
    iterations: int = 200,
    inlier_threshold: float = 0.05,
    seed: int = 0,
) -> GroundPlane:
    """Estimate the dominant plane of a point cloud.

    Draws ``iterations`` random 3-point hypotheses, keeps the one with the
    most points within ``inlier_threshold`` meters (first winner on ties),
    then refits by total least squares over that consensus set.  The result
    is oriented so points above the ground have positive height.

    Raises :class:`InsufficientPoints` for clouds with fewer than three
    points and :class:`DegenerateGeometry` when no non-collinear triplet
    was ever drawn.
    """
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    points = points.reshape(-1, 3)
    n = len(points)
    if n < MIN_PLANE_POINTS:
        raise InsufficientPoints(f"plane fit needs >= {MIN_PLANE_POINTS} points, got {n}")
    if iterations < 1:
        raise ConfigError(f"iterations must be >= 1, got {iterations}")
    if inlier_threshold <= 0:
        raise ConfigError(f"inlier threshold must be positive, got {inlier_threshold}")

    rng = np.random.default_rng(seed)
    triplets = rng.integers(0, n, size=(iterations, 3))
    p0 = points[triplets[:, 0]]
    v1 = points[triplets[:, 1]] - p0
    v2 = points[triplets[:, 2]] - p0
    normals = np.cross(v1, v2)
    norm_sq = np.einsum("ij,ij->i", normals, normals)
    scale = np.einsum("ij,ij->i", v1, v1) * np.einsum("ij,ij->i", v2, v2)
    usable = norm_sq > _COLLINEAR_EPS * np.maximum(scale, 1e-300)
    if not np.any(usable):
        raise DegenerateGeometry("all sampled triplets were collinear or duplicated")

    normals = normals[usable] / np.sqrt(norm_sq[usable])[:, None]
    offsets = np.einsum("ij,ij->i", normals, p0[usable])

    # Chunk the point-hypothesis distance matrix to bound memory on big clouds.
    best_count = -1
    best_idx = -1
    chunk = max(1, int(4_000_000 // max(n, 1)))
    for start in range(0, len(normals), chunk):
        dist = np.abs(points @ normals[start : start + chunk].T - offsets[start : start + chunk])
        counts = (dist <= inlier_threshold).sum(axis=0)
        k = int(np.argmax(counts))
        if counts[k] > best_count:
            best_count = int(counts[k])
            best_idx = start + k

    inliers = np.abs(points @ normals[best_idx] - offsets[best_idx]) <= inlier_threshold
    if inliers.sum() >= MIN_PLANE_POINTS:
        normal, offset = _least_squares_plane(points[inliers])
    else:
        normal, offset = normals[best_idx], float(offsets[best_idx])
    normal, offset = _orient_up(normal, offset, points, margin=inlier_threshold)
    return GroundPlane(normal=normal, offset=offset)
