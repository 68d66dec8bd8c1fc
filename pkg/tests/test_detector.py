import numpy as np
import pytest

from depthped.detector import (
    Detection,
    MatchConfig,
    RoiWindow,
    ScoreBand,
    bbox_iou,
    classify_score,
    detect,
    distance_to_score,
    extract_contour,
    greedy_nms,
    local_maxima,
    match_multi,
    prepare_roi_window,
    resize_nearest,
    template_distance,
)
from depthped.errors import ConfigError, EmptyRoi, NoForeground, NoOverlap
from depthped.geometry import DepthFrame
from depthped.roi import Roi
from depthped.synthetic import (
    VGA_INTRINSICS,
    PersonSpec,
    SceneSpec,
    generate_synthetic_scene,
    render_annotations,
)
from depthped.templates import (
    TEMPLATE_SIZE,
    TemplateSet,
    TemplateSetKind,
    WeightedTemplate,
    train_single,
    train_weighted,
    unit_weighted,
)


def _window(values, valid=None, bbox=(0, 0, 10, 10), distance=4.0):
    values = np.asarray(values, dtype=np.float64)
    if valid is None:
        valid = np.ones_like(values, dtype=bool)
    roi = Roi(bbox=bbox, point_indices=np.arange(1), distance_m=distance)
    return RoiWindow(values=values, valid=np.asarray(valid, bool), roi=roi)


class TestExtractContour:
    def test_topmost_foreground_row_per_column(self):
        vals = np.full((6, 4), 5.0)  # background, way off the torso plane
        vals[3, 0] = 0.0
        vals[1, 1] = 0.1
        vals[4, 1] = -0.2
        vals[2, 3] = -0.4
        contour = extract_contour(_window(vals))
        assert contour.tolist() == [3, 1, -1, 2]

    def test_invalid_pixels_ignored(self):
        vals = np.zeros((4, 2))
        valid = np.ones((4, 2), dtype=bool)
        valid[0, 0] = False
        contour = extract_contour(_window(vals, valid))
        assert contour.tolist() == [1, 0]

    def test_foreground_band_is_symmetric(self):
        vals = np.full((3, 3), 5.0)
        vals[0, 0] = 0.5
        vals[0, 1] = -0.5
        vals[0, 2] = 0.51
        contour = extract_contour(_window(vals), foreground_max_m=0.5)
        assert contour.tolist() == [0, 0, -1]

    def test_all_background_raises(self):
        with pytest.raises(NoForeground):
            extract_contour(_window(np.full((4, 4), 3.0)))


class TestLocalMaxima:
    def test_single_peak(self):
        # row index: lower value = higher point
        contour = np.array([9, 7, 4, 7, 9])
        assert local_maxima(contour, window=5) == [2]

    def test_plateau_keeps_leftmost(self):
        contour = np.array([9, 4, 4, 4, 9])
        assert local_maxima(contour, window=5) == [1]

    def test_two_peaks_outside_each_others_window(self):
        contour = np.array([5, 9, 9, 9, 9, 9, 9, 5])
        assert local_maxima(contour, window=5) == [0, 7]

    def test_near_peaks_inside_window_suppress_lower(self):
        contour = np.array([5, 9, 9, 4, 9])
        assert local_maxima(contour, window=5) == [3]

    def test_missing_columns_skipped(self):
        contour = np.array([-1, 6, -1, 6, -1])
        assert local_maxima(contour, window=1) == [1, 3]

    def test_random_contours_satisfy_maximum_property(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(5, 40))
            contour = rng.integers(0, 12, n)
            contour[rng.random(n) < 0.2] = -1
            if (contour < 0).all():
                continue
            for w in (1, 3, 5):
                maxima = local_maxima(contour, window=w)
                assert maxima, "a present column always yields a maximum"
                for m in maxima:
                    lo, hi = max(0, m - w), min(n, m + w + 1)
                    neigh = contour[lo:hi]
                    neigh = neigh[neigh >= 0]
                    assert contour[m] == neigh.min()
                for a, b in zip(maxima, maxima[1:]):
                    assert not (b == a + 1 and contour[a] == contour[b])


class TestScoring:
    def test_distance_to_score_is_exponential(self):
        assert distance_to_score(0.0, 0.04) == 1.0
        assert distance_to_score(0.04, 0.04) == pytest.approx(np.exp(-1.0))
        assert distance_to_score(1.0, 0.04) < distance_to_score(0.5, 0.04)

    def test_negative_distance_rejected(self):
        with pytest.raises(ConfigError):
            distance_to_score(-0.1, 0.04)

    def test_bands_are_lower_inclusive(self):
        assert classify_score(0.29, 0.3, 0.8) is ScoreBand.REJECTED
        assert classify_score(0.3, 0.3, 0.8) is ScoreBand.UNRELIABLE
        assert classify_score(0.58, 0.3, 0.8) is ScoreBand.UNRELIABLE
        assert classify_score(0.8, 0.3, 0.8) is ScoreBand.RELIABLE
        assert classify_score(1.0, 0.3, 0.8) is ScoreBand.RELIABLE

    def test_match_config_validation(self):
        with pytest.raises(ConfigError):
            MatchConfig(th_hard=0.9, th_soft=0.3)
        with pytest.raises(ConfigError):
            MatchConfig(score_scale=0.0)
        with pytest.raises(ConfigError):
            MatchConfig(nms_overlap=1.5)


class TestBboxIou:
    def _raster(self, a, b):
        x1 = int(max(a[0] + a[2], b[0] + b[2]))
        y1 = int(max(a[1] + a[3], b[1] + b[3]))
        grid_a = np.zeros((y1 + 1, x1 + 1), dtype=bool)
        grid_b = np.zeros_like(grid_a)
        grid_a[a[1]:a[1] + a[3], a[0]:a[0] + a[2]] = True
        grid_b[b[1]:b[1] + b[3], b[0]:b[0] + b[2]] = True
        inter = (grid_a & grid_b).sum()
        union = (grid_a | grid_b).sum()
        return inter / union if union else 0.0

    def test_matches_rasterized_oracle(self):
        rng = np.random.default_rng(22)
        for _ in range(100):
            a = tuple(int(v) for v in
                      (rng.integers(0, 30), rng.integers(0, 30),
                       rng.integers(1, 20), rng.integers(1, 20)))
            b = tuple(int(v) for v in
                      (rng.integers(0, 30), rng.integers(0, 30),
                       rng.integers(1, 20), rng.integers(1, 20)))
            assert bbox_iou(a, b) == pytest.approx(self._raster(a, b), abs=1e-12)
            assert bbox_iou(a, b) == bbox_iou(b, a)

    def test_identical_and_disjoint(self):
        assert bbox_iou((0, 0, 5, 5), (0, 0, 5, 5)) == 1.0
        assert bbox_iou((0, 0, 5, 5), (5, 0, 5, 5)) == 0.0


class TestGreedyNms:
    @staticmethod
    def _det(bbox, score, template_id=0):
        return Detection(bbox=bbox, score=score, band=ScoreBand.RELIABLE,
                         distance_m=3.0, template_id=template_id)

    def _oracle(self, dets, overlap):
        order = sorted(dets, key=lambda d: (-d.score, *d.bbox, d.template_id))
        kept = []
        for d in order:
            if all(bbox_iou(d.bbox, k.bbox) < overlap for k in kept):
                kept.append(d)
        return kept

    def test_matches_bruteforce_on_random_sets(self):
        rng = np.random.default_rng(23)
        for _ in range(40):
            dets = [
                self._det(
                    tuple(int(v) for v in
                          (rng.integers(0, 40), rng.integers(0, 40),
                           rng.integers(5, 25), rng.integers(5, 25))),
                    float(np.round(rng.random(), 2)),
                    int(rng.integers(0, 3)),
                )
                for _ in range(int(rng.integers(0, 12)))
            ]
            got = greedy_nms(list(dets), overlap=0.5)
            assert got == self._oracle(dets, 0.5)

    def test_lower_scored_overlap_suppressed(self):
        a = self._det((0, 0, 10, 10), 0.9)
        b = self._det((1, 0, 10, 10), 0.8)
        c = self._det((30, 30, 10, 10), 0.1)
        kept = greedy_nms([b, c, a], overlap=0.5)
        assert kept == [a, c]


class TestResizeNearest:
    def test_same_size_is_identity(self):
        rng = np.random.default_rng(24)
        arr = rng.normal(size=(9, 13))
        assert np.array_equal(resize_nearest(arr, 9, 13), arr)

    def test_center_aligned_sampling(self):
        arr = np.arange(4, dtype=float).reshape(1, 4)
        # out pixel i reads source floor((i + 0.5) * 4 / 8)
        up = resize_nearest(arr, 1, 8)
        assert up.tolist() == [[0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]]
        down = resize_nearest(arr, 1, 2)
        assert down.tolist() == [[1.0, 3.0]]

    def test_bool_arrays_stay_bool(self):
        mask = np.eye(4, dtype=bool)
        out = resize_nearest(mask, 8, 8)
        assert out.dtype == bool


class TestPrepareRoiWindow:
    def _frame(self, depth):
        return DepthFrame(frame_id=0, depth=np.asarray(depth, dtype=np.float32))

    def test_flat_depth_normalizes_to_zero(self):
        depth = np.zeros((300, 400), dtype=np.float32)
        depth[40:240, 50:150] = 3.0
        roi = Roi(bbox=(50, 40, 100, 200), point_indices=np.arange(1), distance_m=3.0)
        window = prepare_roi_window(self._frame(depth), roi)
        assert window.values.shape[0] == TEMPLATE_SIZE
        assert window.valid[:, window.col_offset] .any()
        assert np.allclose(window.values[window.valid], 0.0)

    def test_narrow_crop_padded_and_mapped_back(self):
        depth = np.zeros((300, 400), dtype=np.float32)
        depth[40:240, 50:100] = 2.5
        roi = Roi(bbox=(50, 40, 50, 200), point_indices=np.arange(1), distance_m=2.5)
        window = prepare_roi_window(self._frame(depth), roi)
        out_w = round(50 * TEMPLATE_SIZE / 200)
        assert window.col_offset == (TEMPLATE_SIZE - out_w) // 2
        assert not window.valid[:, 0].any()  # padding columns invalid
        # Strip center maps back near bbox center.
        cx = window.strip_col_to_image_x(window.col_offset + out_w / 2)
        assert cx == pytest.approx(50 + 25, abs=1.0)

    def test_empty_depth_raises(self):
        roi = Roi(bbox=(0, 0, 20, 40), point_indices=np.arange(1), distance_m=3.0)
        with pytest.raises(EmptyRoi):
            prepare_roi_window(self._frame(np.zeros((100, 100))), roi)


class TestTemplateDistanceEvaluation:
    def _tpl(self, values, weights=None):
        if weights is None:
            weights = np.ones_like(values)
        return WeightedTemplate(values=values, weights=weights, n_train=2)

    def test_only_anchor_columns_evaluated(self):
        vals = np.zeros((6, 6))
        tpl_vals = np.zeros((6, 6))
        tpl_vals[:, 4] = 100.0  # wild mismatch in a non-anchor column
        d = template_distance(vals, np.ones((6, 6), bool), self._tpl(tpl_vals),
                              anchors=[1, 2])
        assert d == 0.0

    def test_anchor_radius_restricts_rows(self):
        vals = np.zeros((9, 9))
        tpl_vals = np.zeros((9, 9))
        tpl_vals[8, 4] = 100.0  # outside the radius-1 box around (4, 4)
        d = template_distance(vals, np.ones((9, 9), bool), self._tpl(tpl_vals),
                              anchors=[4], anchor_rows=[4], anchor_radius=1)
        assert d == 0.0
        d_full = template_distance(vals, np.ones((9, 9), bool), self._tpl(tpl_vals),
                                   anchors=[4])
        assert d_full > 0.0

    def test_weights_scale_contributions(self):
        vals = np.zeros((3, 3))
        tpl_vals = np.ones((3, 3))
        w = np.full((3, 3), 4.0)
        d = template_distance(vals, np.ones((3, 3), bool),
                              self._tpl(tpl_vals, w), anchors=[0, 1, 2])
        assert d == pytest.approx(4.0)

    def test_no_valid_overlap_raises(self):
        vals = np.zeros((3, 3))
        with pytest.raises(NoOverlap):
            template_distance(vals, np.zeros((3, 3), bool), self._tpl(vals),
                              anchors=[0])
        with pytest.raises(NoOverlap):
            template_distance(vals, np.ones((3, 3), bool), self._tpl(vals),
                              anchors=[])


class TestMatchMulti:
    def _member(self, fill):
        v = np.full((4, 4), float(fill))
        return WeightedTemplate(values=v, weights=np.ones((4, 4)), n_train=2)

    def test_distance_set_dispatches_on_roi_distance(self):
        ts = TemplateSet(kind=TemplateSetKind.DISTANCE,
                         members=[self._member(0), self._member(1), self._member(2)],
                         ranges=[(0.0, 4.0), (4.0, 7.0), (7.0, float("inf"))])
        vals = np.ones((4, 4))
        d, idx = match_multi(vals, np.ones((4, 4), bool), ts, 5.0, anchors=[0, 1])
        assert idx == 1
        assert d == 0.0
        d, idx = match_multi(vals, np.ones((4, 4), bool), ts, 2.0, anchors=[0, 1])
        assert idx == 0
        assert d == 1.0

    def test_orientation_set_keeps_best_member(self):
        ts = TemplateSet(kind=TemplateSetKind.ORIENTATION,
                         members=[self._member(3), self._member(1), self._member(0)])
        vals = np.full((4, 4), 0.9)
        d, idx = match_multi(vals, np.ones((4, 4), bool), ts, 5.0, anchors=[0])
        assert idx == 1
        assert d == pytest.approx(0.01)


def _trained_set(n=10, seed=0):
    anns = render_annotations(n, seed=seed)
    return TemplateSet(kind=TemplateSetKind.SINGLE,
                       members=[train_weighted(anns)])


class TestDetect:
    def _scene_and_roi(self, seed=5, distance=4.0):
        spec = SceneSpec(intrinsics=VGA_INTRINSICS, camera_height_m=1.3,
                         persons=[PersonSpec(distance_m=distance)], boxes=[])
        scene = generate_synthetic_scene(spec, seed=seed)
        hull = scene.person_hulls()[0]
        x, y, w, h = hull
        ys, xs = np.nonzero(scene.person_masks[0])
        pts = np.arange(len(xs))
        roi = Roi(bbox=(x, y, w, h), point_indices=pts, distance_m=distance)
        return scene, roi, hull

    def test_person_roi_yields_overlapping_detection(self):
        scene, roi, hull = self._scene_and_roi()
        config = MatchConfig(th_hard=0.0, th_soft=0.8, score_scale=0.45)
        dets = detect(scene.frame, [roi], _trained_set(), config)
        assert dets
        best = dets[0]
        assert bbox_iou(best.bbox, hull) >= 0.5
        assert best.band is not ScoreBand.REJECTED
        assert best.distance_m == roi.distance_m
        assert best.verified_score is None

    def test_hard_threshold_filters_everything(self):
        scene, roi, _ = self._scene_and_roi()
        config = MatchConfig(th_hard=0.999999, th_soft=0.9999999, score_scale=1e-6)
        assert detect(scene.frame, [roi], _trained_set(), config) == []

    def test_no_rois_no_detections(self):
        scene, _, _ = self._scene_and_roi()
        assert detect(scene.frame, [], _trained_set()) == []

    def test_deterministic_across_runs(self):
        scene, roi, _ = self._scene_and_roi()
        config = MatchConfig(th_hard=0.0, score_scale=0.45)
        ts = _trained_set()
        a = detect(scene.frame, [roi], ts, config)
        b = detect(scene.frame, [roi], ts, config)
        assert a == b

    def test_output_sorted_by_score(self):
        scene, roi, _ = self._scene_and_roi()
        config = MatchConfig(th_hard=0.0, score_scale=0.45)
        dets = detect(scene.frame, [roi], _trained_set(), config)
        scores = [d.score for d in dets]
        assert scores == sorted(scores, reverse=True)
