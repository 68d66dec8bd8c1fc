import numpy as np
import pytest

from depthped.detector import Detection, ScoreBand
from depthped.errors import (
    ConfigError,
    FrameMismatch,
    MissingRgb,
    NoGroundTruth,
)
from depthped.evaluation import (
    EvalCurve,
    MatchKind,
    MatchRecord,
    compute_curve,
    evaluate_detections,
    match_detections,
    sweep_soft_threshold,
    time_pipeline,
)
from depthped.dataio import GroundTruthSet, GtBox
from depthped.verifier import AppearanceScorer


def _d(bbox, score, verified=None, band=ScoreBand.RELIABLE):
    return Detection(bbox=bbox, score=score, band=band, distance_m=4.0,
                     template_id=0, verified_score=verified)


def _gt(frames):
    return GroundTruthSet(frames={
        fid: [GtBox(x=b[0], y=b[1], width=b[2], height=b[3],
                    ignore=(len(b) > 4 and b[4]))
              for b in boxes]
        for fid, boxes in frames.items()
    })


class TestMatchDetections:
    def test_tp_and_fp(self):
        gt = _gt({0: [(10, 10, 40, 120)]})
        dets = {0: [_d((12, 12, 40, 120), 0.9), _d((400, 10, 40, 120), 0.6)]}
        recs = match_detections(dets, gt)
        kinds = sorted(r.kind.value for r in recs)
        assert kinds == ["fp", "tp"]

    def test_gt_claimed_once(self):
        gt = _gt({0: [(10, 10, 40, 120)]})
        dets = {0: [_d((11, 10, 40, 120), 0.9), _d((12, 10, 40, 120), 0.8)]}
        recs = match_detections(dets, gt)
        by_score = {r.score: r.kind for r in recs}
        assert by_score[0.9] is MatchKind.TRUE_POSITIVE
        assert by_score[0.8] is MatchKind.FALSE_POSITIVE

    def test_ignore_region_absorbs(self):
        gt = _gt({0: [(10, 10, 40, 120), (300, 10, 40, 120, True)]})
        dets = {0: [_d((302, 12, 40, 120), 0.7)]}
        recs = match_detections(dets, gt)
        assert recs[0].kind is MatchKind.IGNORED

    def test_positive_takes_precedence_over_ignore(self):
        # A box overlapping both an unclaimed positive and an ignore
        # region scores as a TP.
        gt = _gt({0: [(10, 10, 40, 120), (30, 10, 40, 120, True)]})
        dets = {0: [_d((14, 10, 40, 120), 0.9)]}
        recs = match_detections(dets, gt)
        assert recs[0].kind is MatchKind.TRUE_POSITIVE

    def test_verified_score_drives_ranking(self):
        gt = _gt({0: [(10, 10, 40, 120)]})
        # Raw scores favor the far box, verified scores favor the hit.
        hit = _d((11, 10, 40, 120), 0.4, verified=0.95)
        near_miss = _d((13, 11, 40, 120), 0.8, verified=0.1)
        recs = match_detections({0: [near_miss, hit]}, gt)
        by_score = {r.score: r.kind for r in recs}
        assert by_score[0.95] is MatchKind.TRUE_POSITIVE
        assert by_score[0.1] is MatchKind.FALSE_POSITIVE

    def test_overlap_boundary_inclusive(self):
        gt = _gt({0: [(0, 0, 10, 10)]})
        half = _d((0, 5, 10, 10), 0.9)  # IoU exactly 1/3
        recs = match_detections({0: [half]}, gt, overlap_min=1 / 3)
        assert recs[0].kind is MatchKind.TRUE_POSITIVE
        recs = match_detections({0: [half]}, gt, overlap_min=0.34)
        assert recs[0].kind is MatchKind.FALSE_POSITIVE

    def test_empty_frames_counted_without_records(self):
        gt = _gt({0: [(10, 10, 40, 120)], 1: []})
        recs = match_detections({}, gt)
        assert recs == []

    def test_unknown_frame_rejected(self):
        gt = _gt({0: [(10, 10, 40, 120)]})
        with pytest.raises(FrameMismatch):
            match_detections({5: [_d((0, 0, 10, 10), 0.5)]}, gt)

    def test_overlap_validation(self):
        gt = _gt({0: [(10, 10, 40, 120)]})
        with pytest.raises(ConfigError):
            match_detections({}, gt, overlap_min=0.0)
        with pytest.raises(ConfigError):
            match_detections({}, gt, overlap_min=1.5)


class TestComputeCurve:
    def _rec(self, score, kind, frame=0):
        return MatchRecord(frame_id=frame, score=score, kind=kind)

    def test_hand_computed_points(self):
        tp, fp = MatchKind.TRUE_POSITIVE, MatchKind.FALSE_POSITIVE
        records = [
            self._rec(0.9, tp), self._rec(0.8, fp),
            self._rec(0.7, tp), self._rec(0.4, fp), self._rec(0.4, fp),
        ]
        curve = compute_curve(records, n_positives=4, n_frames=2)
        assert curve.thresholds.tolist() == [0.9, 0.8, 0.7, 0.4]
        assert curve.recall.tolist() == [0.25, 0.25, 0.5, 0.5]
        assert curve.fppi.tolist() == [0.0, 0.5, 0.5, 1.5]

    def test_equal_scores_counted_together(self):
        tp, fp = MatchKind.TRUE_POSITIVE, MatchKind.FALSE_POSITIVE
        records = [self._rec(0.5, tp), self._rec(0.5, fp), self._rec(0.5, tp)]
        curve = compute_curve(records, n_positives=2, n_frames=1)
        assert len(curve.thresholds) == 1
        assert curve.recall.tolist() == [1.0]
        assert curve.fppi.tolist() == [1.0]

    def test_ignored_records_dropped(self):
        records = [self._rec(0.9, MatchKind.IGNORED),
                   self._rec(0.5, MatchKind.TRUE_POSITIVE)]
        curve = compute_curve(records, n_positives=1, n_frames=1)
        assert curve.thresholds.tolist() == [0.5]
        assert curve.fppi.tolist() == [0.0]

    def test_no_records_gives_origin_point(self):
        curve = compute_curve([], n_positives=3, n_frames=2)
        assert curve.recall.tolist() == [0.0]
        assert curve.fppi.tolist() == [0.0]

    def test_validation(self):
        with pytest.raises(NoGroundTruth):
            compute_curve([], n_positives=0, n_frames=1)
        with pytest.raises(ConfigError):
            compute_curve([], n_positives=1, n_frames=0)


class TestEvalCurveMethods:
    def _curve(self):
        return EvalCurve(
            thresholds=np.array([0.9, 0.6, 0.3]),
            recall=np.array([0.5, 0.8, 1.0]),
            fppi=np.array([0.05, 0.4, 0.9]),
            n_positives=10, n_frames=20,
        )

    def test_recall_at_fppi(self):
        c = self._curve()
        assert c.recall_at_fppi(0.05) == 0.5
        assert c.recall_at_fppi(0.5) == 0.8
        assert c.recall_at_fppi(10.0) == 1.0
        assert c.recall_at_fppi(0.01) == 0.0

    def test_fppi_at_recall(self):
        c = self._curve()
        assert c.fppi_at_recall(0.5) == 0.05
        assert c.fppi_at_recall(0.81) == 0.9
        assert c.fppi_at_recall(1.1) == float("inf")

    def test_log_average_miss_rate_hand_case(self):
        c = EvalCurve(
            thresholds=np.array([0.9, 0.4]),
            recall=np.array([0.5, 1.0]),
            fppi=np.array([0.05, 0.9]),
            n_positives=10, n_frames=20,
        )
        refs = np.geomspace(0.01, 1.0, 9)
        misses = [1.0 if r < 0.05 else (0.5 if r < 0.9 else 1e-10) for r in refs]
        expected = float(np.exp(np.mean(np.log(misses))))
        assert c.log_average_miss_rate() == pytest.approx(expected, rel=1e-12)

    def test_perfect_curve_hits_floor(self):
        c = EvalCurve(thresholds=np.array([0.1]), recall=np.array([1.0]),
                      fppi=np.array([0.005]), n_positives=5, n_frames=100)
        assert c.log_average_miss_rate() == pytest.approx(1e-10)


class TestEvaluateDetections:
    def test_pipeline_end_to_end(self):
        gt = _gt({0: [(10, 10, 40, 120)], 1: [(50, 10, 40, 120)]})
        dets = {
            0: [_d((11, 10, 40, 120), 0.9)],
            1: [_d((300, 10, 40, 120), 0.7)],
        }
        curve = evaluate_detections(dets, gt)
        assert curve.n_positives == 2
        assert curve.n_frames == 2
        assert curve.recall_at_fppi(0.0) == 0.5
        assert curve.recall_at_fppi(1.0) == 0.5
        assert curve.fppi[-1] == 0.5


class CountingScorer(AppearanceScorer):
    def __init__(self, value=1.0):
        self.value = value
        self.calls = 0

    def score(self, stack):
        self.calls += 1
        return self.value


class TestSweepSoftThreshold:
    def _setup(self):
        rng = np.random.default_rng(50)
        rgb = {0: rng.integers(0, 256, (480, 640, 3)).astype(np.uint8)}
        gt = _gt({0: [(10, 10, 40, 120)]})
        dets = {0: [_d((11, 10, 40, 120), 0.5), _d((300, 10, 40, 120), 0.9)]}
        return dets, rgb, gt

    def test_threshold_preconditions(self):
        dets, rgb, gt = self._setup()
        scorer = CountingScorer()
        with pytest.raises(ConfigError):
            sweep_soft_threshold(dets, rgb, gt, scorer, [0.2], hard_threshold=0.2)
        with pytest.raises(ConfigError):
            sweep_soft_threshold(dets, rgb, gt, scorer, [1.1], hard_threshold=0.2)

    def test_appearance_scores_cached_across_thresholds(self):
        dets, rgb, gt = self._setup()
        scorer = CountingScorer()
        # 0.6 verifies only the 0.5 box; 0.95 verifies both.  The cache
        # means each distinct box is scored once (27 candidate crops).
        results = sweep_soft_threshold(dets, rgb, gt, scorer, [0.6, 0.95],
                                       hard_threshold=0.2)
        assert len(results) == 2
        assert scorer.calls == 27 * 2

    def test_perfect_scorer_keeps_recall(self):
        dets, rgb, gt = self._setup()
        depth_only = evaluate_detections(dets, gt)
        results = sweep_soft_threshold(dets, rgb, gt, CountingScorer(1.0),
                                       [0.95], hard_threshold=0.2)
        _, verified = results[0]
        assert verified.recall_at_fppi(np.inf) == depth_only.recall_at_fppi(np.inf)

    def test_hard_threshold_drops_rejected(self):
        dets, rgb, gt = self._setup()
        results = sweep_soft_threshold(dets, rgb, gt, CountingScorer(0.0),
                                       [0.7], hard_threshold=0.6)
        _, curve = results[0]
        # The 0.5-score box is below the hard threshold and vanishes; the
        # other is a verified-to-zero false positive.
        assert curve.recall.max() == 0.0

    def test_missing_rgb_frame(self):
        dets, _, gt = self._setup()
        with pytest.raises(MissingRgb):
            sweep_soft_threshold(dets, {}, gt, CountingScorer(), [0.95],
                                 hard_threshold=0.2)


class _StageResult:
    def __init__(self, ms):
        self.stage_ms = {"work": ms}


class TestTimePipeline:
    def test_warmup_excluded_and_means_reported(self):
        calls = []

        def process(frame):
            calls.append(frame)
            return _StageResult(1.0)

        report = time_pipeline(list(range(14)), process, warmup=2, min_frames=10)
        assert report.n_frames == 12
        assert len(calls) == 14
        assert report.total_ms > 0.0
        assert set(report.stage_ms) == {"work"}

    def test_too_few_frames(self):
        with pytest.raises(ConfigError):
            time_pipeline([1, 2, 3], lambda f: _StageResult(1.0),
                          warmup=2, min_frames=10)
