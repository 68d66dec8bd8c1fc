"""Sliding-window template matching inside depth ROIs.

Each ROI crop is rescaled so its height matches the template grid,
normalized like the training annotations, and scanned horizontally.  The
head-and-shoulders contour (topmost foreground pixel per column) supplies
anchor columns at its local maxima, and the weighted squared depth
difference against the template is evaluated only there.  Distances map
to scores in (0, 1] via ``exp(-d / scale)`` and scores fall into three
bands: rejected, unreliable (kept, eligible for appearance verification)
and reliable.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyRoi, NoForeground, NoOverlap
from .geometry import DepthFrame
from .raster import resize_nearest
from .roi import Roi
from .templates import (
    REFERENCE_PATCH,
    TEMPLATE_SIZE,
    TemplateSet,
    TemplateSetKind,
    WeightedTemplate,
)

log = logging.getLogger(__name__)


class ScoreBand(enum.IntEnum):
    REJECTED = 0
    UNRELIABLE = 1
    RELIABLE = 2


@dataclass(frozen=True)
class MatchConfig:
    """Tunables of the matching stage.

    ``score_scale`` is the distance at which the score drops to 1/e; like
    the band thresholds it needs recalibration when sensor noise differs
    from the data the templates were trained on.  ``anchor_radius``
    restricts evaluation to a square neighborhood around each anchor
    point instead of the anchor's whole column.
    """

    th_hard: float = 0.3
    th_soft: float = 0.8
    score_scale: float = 0.04
    nms_overlap: float = 0.5
    local_max_window: int = 5
    foreground_max_m: float = 0.5
    anchor_radius: Optional[int] = None

    def __post_init__(self):
        if not (0.0 <= self.th_hard < self.th_soft <= 1.0):
            raise ConfigError(
                f"need 0 <= th_hard < th_soft <= 1, got {self.th_hard}, {self.th_soft}"
            )
        if self.score_scale <= 0:
            raise ConfigError(f"score scale must be positive, got {self.score_scale}")
        if not (0.0 < self.nms_overlap <= 1.0):
            raise ConfigError(f"nms overlap must be in (0, 1], got {self.nms_overlap}")
        if self.local_max_window < 1:
            raise ConfigError(f"local max window must be >= 1, got {self.local_max_window}")
        if self.foreground_max_m <= 0:
            raise ConfigError(f"foreground band must be positive, got {self.foreground_max_m}")
        if self.anchor_radius is not None and self.anchor_radius < 0:
            raise ConfigError(f"anchor radius must be >= 0, got {self.anchor_radius}")


@dataclass
class Detection:
    """One scored candidate in image coordinates."""

    bbox: tuple[int, int, int, int]
    score: float
    band: ScoreBand
    distance_m: float
    template_id: int
    verified_score: Optional[float] = None
    accepted: Optional[bool] = None

    @property
    def effective_score(self) -> float:
        """Score after verification, when one was run."""
        return self.score if self.verified_score is None else self.verified_score


@dataclass
class RoiWindow:
    """ROI depth rescaled to template height and median-normalized.

    ``values``/``valid`` form a strip of height ``TEMPLATE_SIZE``; strips
    narrower than the template are centered with invalid padding and
    ``col_offset`` records the padding so strip columns map back to image
    pixels.
    """

    values: np.ndarray
    valid: np.ndarray
    roi: Roi
    col_offset: int = 0

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def strip_col_to_image_x(self, col: float) -> float:
        """Continuous strip column to continuous image x coordinate."""
        src_h = self.roi.bbox[3]
        return self.roi.bbox[0] + (col - self.col_offset) * src_h / TEMPLATE_SIZE


def prepare_roi_window(
    frame: DepthFrame, roi: Roi, template_height: int = TEMPLATE_SIZE
) -> RoiWindow:
    """Crop, rescale and normalize one ROI for matching.

    The crop is rescaled by ``template_height / bbox_height`` in both
    axes (nearest neighbor) and shifted by the median of the valid pixels
    in its central reference patch, matching the annotation convention.
    Raises :class:`EmptyRoi` when the crop holds no valid depth.
    """
    x, y, w, h = roi.bbox
    crop = frame.depth[y : y + h, x : x + w].astype(np.float64)
    mask = (crop > 0) & np.isfinite(crop)
    if not mask.any():
        raise EmptyRoi(f"roi {roi.bbox} contains no valid depth")

    out_w = max(1, round(w * template_height / h))
    values = resize_nearest(crop, template_height, out_w)
    valid = resize_nearest(mask, template_height, out_w)

    r0 = (template_height - REFERENCE_PATCH) // 2
    c0 = max(0, (out_w - REFERENCE_PATCH) // 2)
    center = valid[r0 : r0 + REFERENCE_PATCH, c0 : c0 + REFERENCE_PATCH]
    center_vals = values[r0 : r0 + REFERENCE_PATCH, c0 : c0 + REFERENCE_PATCH][center]
    if len(center_vals) == 0:
        center_vals = values[valid]  # degenerate crop: fall back to all valid depth
    reference = float(np.median(center_vals))
    values = np.where(valid, values - reference, 0.0)

    col_offset = 0
    if out_w < TEMPLATE_SIZE:
        col_offset = (TEMPLATE_SIZE - out_w) // 2
        padded_v = np.zeros((template_height, TEMPLATE_SIZE))
        padded_m = np.zeros((template_height, TEMPLATE_SIZE), dtype=bool)
        padded_v[:, col_offset : col_offset + out_w] = values
        padded_m[:, col_offset : col_offset + out_w] = valid
        values, valid = padded_v, padded_m

    return RoiWindow(values=values, valid=valid, roi=roi, col_offset=col_offset)


def extract_contour(window: RoiWindow, foreground_max_m: float = 0.5) -> np.ndarray:
    """Topmost foreground row per strip column (-1 where none).

    Foreground means valid depth within ``foreground_max_m`` of the
    normalized torso plane, so background seen past the object does not
    shape the contour.
    """
    fg = window.valid & (np.abs(window.values) <= foreground_max_m)
    has = fg.any(axis=0)
    if not has.any():
        raise NoForeground("no foreground pixel in any column of the window")
    rows = np.argmax(fg, axis=0)
    rows[~has] = -1
    return rows.astype(np.int64)


def local_maxima(contour: np.ndarray, window: int = 5) -> list[int]:
    """Columns whose contour is at least as high as every neighbor in
    ``+-window``; runs of consecutive equal winners keep only their
    leftmost column.

    Height is measured upward in the image, i.e. smaller row index is
    higher.  Columns without contour are skipped and ignored as
    neighbors.
    """
    n = len(contour)
    present = contour >= 0
    height = np.where(present, -contour.astype(np.float64), -np.inf)
    winners: list[int] = []
    for c in range(n):
        if not present[c]:
            continue
        lo, hi = max(0, c - window), min(n, c + window + 1)
        if height[c] >= height[lo:hi].max():
            winners.append(c)
    # Runs of consecutive equal-height winners form one plateau; keep only
    # the leftmost column of each run.
    maxima: list[int] = []
    prev = None
    for c in winners:
        if prev is not None and c == prev + 1 and contour[c] == contour[prev]:
            prev = c
            continue
        maxima.append(c)
        prev = c
    return maxima


def _evaluation_mask(
    valid: np.ndarray,
    anchors: Sequence[int],
    anchor_rows: Optional[Sequence[int]],
    anchor_radius: Optional[int],
) -> np.ndarray:
    mask = np.zeros(valid.shape, dtype=bool)
    if anchor_radius is None:
        for c in anchors:
            mask[:, c] = True
    else:
        if anchor_rows is None:
            raise ConfigError("anchor_radius needs the contour rows of the anchors")
        h, w = valid.shape
        r = anchor_radius
        for c, row in zip(anchors, anchor_rows):
            mask[max(0, row - r) : row + r + 1, max(0, c - r) : c + r + 1] = True
    return mask & valid


def template_distance(
    values: np.ndarray,
    valid: np.ndarray,
    template: WeightedTemplate,
    anchors: Sequence[int],
    anchor_rows: Optional[Sequence[int]] = None,
    anchor_radius: Optional[int] = None,
) -> float:
    """Mean weighted squared depth difference over the evaluated pixels.

    Evaluation covers the anchor columns (or square neighborhoods around
    the anchor points when ``anchor_radius`` is set), restricted to valid
    window pixels.  Raises :class:`NoOverlap` when nothing is evaluable.
    """
    if len(anchors) == 0:
        raise NoOverlap("no anchor columns to evaluate")
    sel = _evaluation_mask(valid, anchors, anchor_rows, anchor_radius)
    n = int(np.count_nonzero(sel))
    if n == 0:
        raise NoOverlap("no jointly valid pixel at the anchor columns")
    diff = template.values.astype(np.float64)[sel] - values[sel]
    return float(np.sum(template.weights.astype(np.float64)[sel] * diff * diff) / n)


def distance_to_score(distance: float, scale: float) -> float:
    """Map a nonnegative matching distance to a score in (0, 1]."""
    if distance < 0:
        raise ConfigError(f"matching distance must be nonnegative, got {distance}")
    return float(np.exp(-distance / scale))


def classify_score(score: float, th_hard: float, th_soft: float) -> ScoreBand:
    """Band thresholds are lower-bound inclusive: a score equal to a
    threshold lands in the upper band."""
    if score < th_hard:
        return ScoreBand.REJECTED
    if score < th_soft:
        return ScoreBand.UNRELIABLE
    return ScoreBand.RELIABLE


def match_multi(
    values: np.ndarray,
    valid: np.ndarray,
    template_set: TemplateSet,
    roi_distance_m: float,
    anchors: Sequence[int],
    anchor_rows: Optional[Sequence[int]] = None,
    anchor_radius: Optional[int] = None,
) -> tuple[float, int]:
    """Best (distance, member index) of a window against a template set.

    Orientation sets try every member and keep the smallest distance
    (ties: lowest index); distance sets dispatch on the ROI distance.
    """
    if template_set.kind == TemplateSetKind.DISTANCE:
        idx = template_set.range_index(roi_distance_m)
        return (
            template_distance(
                values, valid, template_set.members[idx], anchors, anchor_rows, anchor_radius
            ),
            idx,
        )
    best = np.inf
    best_idx = -1
    for i, member in enumerate(template_set.members):
        try:
            d = template_distance(values, valid, member, anchors, anchor_rows, anchor_radius)
        except NoOverlap:
            continue
        if d < best:
            best, best_idx = d, i
    if best_idx < 0:
        raise NoOverlap("no template member overlaps the window")
    return best, best_idx


def bbox_iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two ``(x, y, w, h)`` rectangles."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ix0 = max(ax0, bx0)
    iy0 = max(ay0, by0)
    ix1 = min(ax0 + aw, bx0 + bw)
    iy1 = min(ay0 + ah, by0 + bh)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter == 0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def _detection_order_key(det: Detection):
    return (-det.score, *det.bbox, det.template_id)


def greedy_nms(detections: list[Detection], overlap: float) -> list[Detection]:
    """Keep detections best-first, dropping any with IoU >= overlap against
    an already kept one."""
    kept: list[Detection] = []
    for det in sorted(detections, key=_detection_order_key):
        if all(bbox_iou(det.bbox, k.bbox) < overlap for k in kept):
            kept.append(det)
    return kept


def _contour_run(contour: np.ndarray, col: int) -> tuple[int, int]:
    """Maximal contiguous stretch of contour-bearing columns around ``col``."""
    lo = col
    while lo > 0 and contour[lo - 1] >= 0:
        lo -= 1
    hi = col
    while hi + 1 < len(contour) and contour[hi + 1] >= 0:
        hi += 1
    return lo, hi


def _anchor_bbox(window: RoiWindow, contour: np.ndarray, anchor: int, frame: DepthFrame) -> tuple[int, int, int, int]:
    """Image bbox of the object under one contour maximum.

    The box spans the anchor's own contour run, so two objects separated
    by a contour gap inside the same ROI get separate boxes that hug each
    shape instead of one window-sized box covering both; that matters for
    overlap-based evaluation.
    """
    c0, c1 = _contour_run(contour, anchor)
    x0 = int(np.floor(window.strip_col_to_image_x(c0)))
    x1 = int(np.ceil(window.strip_col_to_image_x(c1 + 1))) - 1
    rx, ry, rw, rh = window.roi.bbox
    x0 = max(rx, min(x0, rx + rw - 1))
    x1 = max(x0, min(x1, rx + rw - 1))
    fh, fw = frame.depth.shape
    x0 = max(0, min(x0, fw - 1))
    x1 = max(x0, min(x1, fw - 1))
    return (x0, ry, x1 - x0 + 1, rh)


def detect(
    frame: DepthFrame,
    rois: Sequence[Roi],
    template_set: TemplateSet,
    config: MatchConfig = MatchConfig(),
) -> list[Detection]:
    """Run template matching over all ROIs of a frame.

    Failures of individual ROIs (empty depth, no foreground, no overlap)
    are logged and yield no detections rather than aborting the frame.
    Output is NMS-filtered per ROI, then merged and sorted by descending
    score with deterministic tie-breaking.
    """
    all_kept: list[Detection] = []
    half = TEMPLATE_SIZE // 2
    for roi in rois:
        try:
            window = prepare_roi_window(frame, roi)
            contour = extract_contour(window, config.foreground_max_m)
            maxima = local_maxima(contour, config.local_max_window)
        except (EmptyRoi, NoForeground) as err:
            log.warning("roi %s skipped: %s", roi.bbox, err)
            continue

        # One template placement per contour maximum, with the window
        # centered on it so the anchor lines up with the template center.
        candidates: list[Detection] = []
        for m in maxima:
            if window.width <= TEMPLATE_SIZE:
                off = 0
            else:
                off = min(max(m - half, 0), window.width - TEMPLATE_SIZE)
            values = window.values[:, off : off + TEMPLATE_SIZE]
            valid = window.valid[:, off : off + TEMPLATE_SIZE]
            try:
                dist, member = match_multi(
                    values,
                    valid,
                    template_set,
                    roi.distance_m,
                    [m - off],
                    [int(contour[m])],
                    config.anchor_radius,
                )
            except NoOverlap as err:
                log.warning("anchor at column %d skipped: %s", m, err)
                continue
            score = distance_to_score(dist, config.score_scale)
            band = classify_score(score, config.th_hard, config.th_soft)
            if band == ScoreBand.REJECTED:
                continue
            candidates.append(
                Detection(
                    bbox=_anchor_bbox(window, contour, m, frame),
                    score=score,
                    band=band,
                    distance_m=roi.distance_m,
                    template_id=member,
                )
            )
        all_kept.extend(greedy_nms(candidates, config.nms_overlap))
    return sorted(all_kept, key=_detection_order_key)
