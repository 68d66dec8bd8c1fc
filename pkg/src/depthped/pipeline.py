"""Frame pipeline: plane estimation, labeling, ROIs, matching, verification.

One :class:`FramePipeline` instance holds the trained template set (and
optionally an appearance scorer) and processes frames independently, so
a caller can stream frames through it and collect per-stage timings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import PipelineConfig
from .detector import Detection, detect
from .errors import InsufficientPoints
from .geometry import (
    CameraIntrinsics,
    DepthFrame,
    GroundPlane,
    PointCloud,
    backproject,
    fit_plane_ransac,
    level_plane,
)
from .labeling import HeightBands, build_occupancy, select_low_density, label_structure
from .roi import Roi, extract_rois
from .templates import TemplateSet
from .verifier import AppearanceScorer, verify_detections


@dataclass
class FrameResult:
    frame_id: int
    plane: GroundPlane
    rois: list[Roi]
    detections: list[Detection]
    stage_ms: dict[str, float] = field(default_factory=dict)


class FramePipeline:
    """End-to-end detector over single RGB-D frames."""

    def __init__(
        self,
        intrinsics: CameraIntrinsics,
        template_set: TemplateSet,
        config: PipelineConfig = PipelineConfig(),
        scorer: Optional[AppearanceScorer] = None,
    ):
        self.intrinsics = intrinsics
        self.template_set = template_set
        self.config = config
        self.scorer = scorer
        g = config.geometry
        self._fixed_plane = (
            GroundPlane(normal=np.array(g.fixed_plane[:3]), offset=g.fixed_plane[3])
            if g.fixed_plane is not None
            else None
        )
        self._prior_plane = level_plane(g.camera_height_m)
        self._bands = HeightBands(
            ground_top=config.labeling.ground_top_m,
            object_top=config.labeling.object_top_m,
            free_top=config.labeling.free_top_m,
        )

    def estimate_plane(self, cloud: PointCloud) -> GroundPlane:
        """Ground plane from the sparse occupancy cells of the cloud.

        The occupancy grid is built on a level plane at the configured
        mounting height; cells with few points are mostly bare ground, so
        RANSAC sees few object points.  Falls back to the level prior when
        the selection is too small to fit.
        """
        g = self.config.geometry
        if self._fixed_plane is not None:
            return self._fixed_plane
        grid = build_occupancy(cloud, self._prior_plane, g.occupancy_cell_m)
        idx = select_low_density(grid, g.low_density_max)
        if len(idx) > g.max_fit_points:
            step = -(-len(idx) // g.max_fit_points)  # ceil division
            idx = idx[::step]
        if len(idx) < 3:
            return self._prior_plane
        try:
            return fit_plane_ransac(
                cloud.points[idx], g.ransac_iterations, g.inlier_threshold_m, g.seed
            )
        except InsufficientPoints:
            return self._prior_plane

    def process(self, frame: DepthFrame) -> FrameResult:
        cfg = self.config
        stage_ms: dict[str, float] = {}

        t0 = time.perf_counter()
        cloud = backproject(frame, self.intrinsics)
        plane = self.estimate_plane(cloud)
        t1 = time.perf_counter()
        stage_ms["plane"] = (t1 - t0) * 1e3

        labeled = label_structure(
            cloud,
            plane,
            cfg.labeling.cell_size_m,
            self._bands,
            cfg.labeling.free_max_fraction,
            cfg.labeling.object_max_fraction,
        )
        t2 = time.perf_counter()
        stage_ms["labeling"] = (t2 - t1) * 1e3

        rois = extract_rois(labeled, plane, cfg.roi.cell_size_m, cfg.roi.min_points)
        t3 = time.perf_counter()
        stage_ms["roi"] = (t3 - t2) * 1e3

        detections = detect(frame, rois, self.template_set, cfg.match)
        t4 = time.perf_counter()
        stage_ms["detector"] = (t4 - t3) * 1e3

        if self.scorer is not None and frame.rgb is not None:
            detections = verify_detections(detections, frame.rgb, self.scorer, cfg.verifier)
            stage_ms["verifier"] = (time.perf_counter() - t4) * 1e3

        return FrameResult(
            frame_id=frame.frame_id,
            plane=plane,
            rois=rois,
            detections=detections,
            stage_ms=stage_ms,
        )
