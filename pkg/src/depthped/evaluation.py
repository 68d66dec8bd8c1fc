"""Detection benchmarking: greedy matching, recall/FPPI curves, soft
threshold sweeps, and wall-clock stage timing.

Matching follows the usual single-assignment rule: detections are taken
in descending score order and each may claim at most one ground-truth
box (IoU above the overlap minimum).  Regions marked ``ignore`` absorb
any number of detections without counting either way.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .detector import Detection, MatchConfig, ScoreBand, bbox_iou, classify_score
from .errors import ConfigError, FrameMismatch, MissingRgb, NoGroundTruth
from .verifier import AppearanceScorer, VerifierConfig, verify


@dataclass(frozen=True)
class GtBox:
    """One annotated box; ``ignore`` regions never count as hits or misses."""

    x: int
    y: int
    width: int
    height: int
    ignore: bool = False

    @property
    def bbox(self) -> tuple[int, int, int, int]:
        return (self.x, self.y, self.width, self.height)


@dataclass
class GroundTruthSet:
    """Annotations for a fixed set of frames, keyed by frame id.

    Frames with no objects must still appear (with an empty list) so the
    frame count, and therefore FPPI, is well defined.
    """

    frames: dict[int, list[GtBox]]

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def n_positives(self) -> int:
        return sum(1 for boxes in self.frames.values() for b in boxes if not b.ignore)


class MatchKind(Enum):
    TRUE_POSITIVE = "tp"
    FALSE_POSITIVE = "fp"
    IGNORED = "ignored"


@dataclass(frozen=True)
class MatchRecord:
    frame_id: int
    score: float
    kind: MatchKind


def _det_sort_key(det: Detection):
    return (-det.effective_score, det.bbox, det.template_id)


def match_detections(
    detections: Mapping[int, Sequence[Detection]],
    ground_truth: GroundTruthSet,
    overlap_min: float = 0.5,
) -> list[MatchRecord]:
    """Classify every detection as TP, FP, or ignored.

    Detections are ranked by effective score (verified when present)
    with deterministic tie-breaking.  A detection whose best qualifying
    overlap is with an unclaimed positive box is a TP; overlap with an
    ignore region exempts it; anything else is an FP.
    """
    if not (0.0 < overlap_min <= 1.0):
        raise ConfigError(f"overlap_min must be in (0, 1], got {overlap_min}")
    unknown = set(detections) - set(ground_truth.frames)
    if unknown:
        raise FrameMismatch(f"detections reference unknown frames: {sorted(unknown)[:5]}")

    records: list[MatchRecord] = []
    for frame_id, boxes in ground_truth.frames.items():
        dets = sorted(detections.get(frame_id, ()), key=_det_sort_key)
        positives = [b for b in boxes if not b.ignore]
        ignores = [b for b in boxes if b.ignore]
        claimed = [False] * len(positives)
        for det in dets:
            best_iou, best_j = 0.0, -1
            for j, gt in enumerate(positives):
                if claimed[j]:
                    continue
                iou = bbox_iou(det.bbox, gt.bbox)
                if iou >= overlap_min and iou > best_iou:
                    best_iou, best_j = iou, j
            if best_j >= 0:
                claimed[best_j] = True
                records.append(MatchRecord(frame_id, det.effective_score, MatchKind.TRUE_POSITIVE))
                continue
            if any(bbox_iou(det.bbox, g.bbox) >= overlap_min for g in ignores):
                records.append(MatchRecord(frame_id, det.effective_score, MatchKind.IGNORED))
                continue
            records.append(MatchRecord(frame_id, det.effective_score, MatchKind.FALSE_POSITIVE))
    return records


@dataclass
class EvalCurve:
    """Recall/FPPI operating points at every distinct score threshold,
    ordered by descending threshold."""

    thresholds: np.ndarray
    recall: np.ndarray
    fppi: np.ndarray
    n_positives: int
    n_frames: int

    def recall_at_fppi(self, max_fppi: float) -> float:
        """Best recall among operating points with fppi <= max_fppi."""
        ok = self.fppi <= max_fppi
        return float(self.recall[ok].max()) if ok.any() else 0.0

    def fppi_at_recall(self, min_recall: float) -> float:
        """Lowest fppi among operating points with recall >= min_recall."""
        ok = self.recall >= min_recall
        return float(self.fppi[ok].min()) if ok.any() else float("inf")

    def log_average_miss_rate(
        self, fppi_range: tuple[float, float] = (0.01, 1.0), n_samples: int = 9
    ) -> float:
        """Miss rate averaged over log-spaced FPPI reference points.

        The standard scalar summary for pedestrian detection curves;
        lower is better.  Reference points below the curve's smallest
        achievable FPPI use the worst (highest) miss rate.
        """
        refs = np.geomspace(fppi_range[0], fppi_range[1], n_samples)
        misses = np.array([1.0 - self.recall_at_fppi(r) for r in refs])
        return float(np.exp(np.mean(np.log(np.maximum(misses, 1e-10)))))


def compute_curve(
    records: Sequence[MatchRecord], n_positives: int, n_frames: int
) -> EvalCurve:
    """Trace the recall/FPPI curve from match records.

    At threshold t, every record with score >= t is counted.  One
    operating point is emitted per distinct score.
    """
    if n_positives <= 0:
        raise NoGroundTruth("cannot trace a curve without positive ground-truth boxes")
    if n_frames <= 0:
        raise ConfigError(f"n_frames must be positive, got {n_frames}")
    counted = [r for r in records if r.kind is not MatchKind.IGNORED]
    if not counted:
        return EvalCurve(
            thresholds=np.array([1.0]), recall=np.zeros(1), fppi=np.zeros(1),
            n_positives=n_positives, n_frames=n_frames,
        )
    scores = np.array([r.score for r in counted])
    is_tp = np.array([r.kind is MatchKind.TRUE_POSITIVE for r in counted])
    order = np.argsort(-scores, kind="stable")
    scores, is_tp = scores[order], is_tp[order]
    tp_cum = np.cumsum(is_tp)
    fp_cum = np.cumsum(~is_tp)
    # Keep the last index of each run of equal scores: that is the point
    # where the threshold equals this score and all ties are included.
    last = np.nonzero(np.diff(scores, append=-np.inf) != 0)[0]
    return EvalCurve(
        thresholds=scores[last],
        recall=tp_cum[last] / n_positives,
        fppi=fp_cum[last] / n_frames,
        n_positives=n_positives,
        n_frames=n_frames,
    )


def evaluate_detections(
    detections: Mapping[int, Sequence[Detection]],
    ground_truth: GroundTruthSet,
    overlap_min: float = 0.5,
) -> EvalCurve:
    records = match_detections(detections, ground_truth, overlap_min)
    return compute_curve(records, ground_truth.n_positives, ground_truth.n_frames)


# ---------------------------------------------------------------------------
# Soft-threshold sweep with appearance verification


def _verify_with_cache(
    detections: Mapping[int, Sequence[Detection]],
    rgb: Mapping[int, np.ndarray],
    scorer: AppearanceScorer,
    soft_threshold: float,
    hard_threshold: float,
    verifier_config: VerifierConfig,
    cache: dict[tuple[int, tuple[int, int, int, int]], tuple[float, bool]],
) -> dict[int, list[Detection]]:
    """Re-band detections under (hard, soft) and verify the unreliable
    band, memoizing appearance scores per (frame, bbox)."""
    out: dict[int, list[Detection]] = {}
    for frame_id, dets in detections.items():
        kept: list[Detection] = []
        for det in dets:
            band = classify_score(det.score, hard_threshold, soft_threshold)
            det = replace(det, band=band, verified_score=None, accepted=None)
            if band is ScoreBand.REJECTED:
                continue
            if band is ScoreBand.UNRELIABLE:
                key = (frame_id, det.bbox)
                if key not in cache:
                    if frame_id not in rgb:
                        raise MissingRgb(f"no color image for frame {frame_id}")
                    verdict = verify(det, rgb[frame_id], scorer, verifier_config)
                    cache[key] = (verdict.verified_score, verdict.accepted)
                vscore, accepted = cache[key]
                det = replace(det, verified_score=vscore, accepted=accepted)
            kept.append(det)
        out[frame_id] = kept
    return out


def sweep_soft_threshold(
    detections: Mapping[int, Sequence[Detection]],
    rgb: Mapping[int, np.ndarray],
    ground_truth: GroundTruthSet,
    scorer: AppearanceScorer,
    soft_thresholds: Sequence[float],
    hard_threshold: float = 0.0,
    verifier_config: Optional[VerifierConfig] = None,
    overlap_min: float = 0.5,
) -> list[tuple[float, EvalCurve]]:
    """Evaluate the verified pipeline at several soft thresholds.

    Raising the soft threshold widens the band of detections handed to
    the appearance model.  Verification itself is the expensive step, so
    appearance scores are computed once per (frame, bbox) and shared
    across all thresholds.
    """
    cfg = verifier_config or VerifierConfig()
    for th in soft_thresholds:
        if not (hard_threshold < th <= 1.0):
            raise ConfigError(
                f"soft threshold {th} outside ({hard_threshold}, 1]"
            )
    cache: dict[tuple[int, tuple[int, int, int, int]], tuple[float, bool]] = {}
    results = []
    for th in soft_thresholds:
        verified = _verify_with_cache(
            detections, rgb, scorer, th, hard_threshold, cfg, cache
        )
        results.append((float(th), evaluate_detections(verified, ground_truth, overlap_min)))
    return results


# ---------------------------------------------------------------------------
# Timing


@dataclass
class TimingReport:
    """Per-stage mean wall-clock cost in milliseconds over measured frames."""

    stage_ms: dict[str, float]
    total_ms: float
    n_frames: int
    warmup: int

    def rows(self) -> list[tuple[str, float]]:
        out = list(self.stage_ms.items())
        out.append(("total", self.total_ms))
        return out


def time_pipeline(
    frames: Sequence,
    process: Callable,
    warmup: int = 2,
    min_frames: int = 10,
) -> TimingReport:
    """Measure mean per-frame latency of ``process`` over real frames.

    ``process(frame)`` must return an object exposing ``stage_ms`` (an
    ordered stage -> milliseconds mapping).  The first ``warmup`` frames
    prime caches and allocator pools and are excluded from the means.
    The reported total is measured around the whole call, so the stage
    rows sum to slightly less than it (dispatch glue is untimed).
    """
    if len(frames) - warmup < min_frames:
        raise ConfigError(
            f"need at least {min_frames} measured frames, got {len(frames) - warmup}"
        )
    stage_sums: dict[str, float] = {}
    total = 0.0
    measured = 0
    for i, frame in enumerate(frames):
        t0 = time.perf_counter()
        result = process(frame)
        elapsed_ms = (time.perf_counter() - t0) * 1e3
        if i < warmup:
            continue
        measured += 1
        total += elapsed_ms
        for stage, ms in result.stage_ms.items():
            stage_sums[stage] = stage_sums.get(stage, 0.0) + ms
    return TimingReport(
        stage_ms={k: v / measured for k, v in stage_sums.items()},
        total_ms=total / measured,
        n_frames=measured,
        warmup=warmup,
    )
