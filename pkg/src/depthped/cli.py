"""Command line front end.

Exit codes: 0 on success, 1 on usage errors, 2 on data errors (bad
files, degenerate inputs), printed to stderr as ``[E_CODE] message``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dataio, plots
from .config import PipelineConfig, apply_overrides, load_config
from .detector import ScoreBand
from .errors import ConfigError, FormatError, NoGroundTruth, PipelineError
from .evaluation import (
    GroundTruthSet,
    GtBox,
    evaluate_detections,
    sweep_soft_threshold,
    time_pipeline,
)
from .pipeline import FramePipeline
from .synthetic import SceneSampler, render_annotation_crops, sample_frames, sampler_from_dict
from .templates import (
    TemplateSet,
    TemplateSetKind,
    load_template_set,
    parse_range_edges,
    save_template_set,
    select_k,
    train_distance_set,
    train_orientation_set,
    train_single,
    train_weighted,
    unit_weighted,
)
from .verifier import (
    build_channels,
    expand_candidates,
    load_scorer,
    save_scorer,
    train_logistic_scorer,
    verify_detections,
)


class _Parser(argparse.ArgumentParser):
    """Usage problems exit 1; data problems exit 2 (see main)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    parser.add_argument(
        "--set",
        metavar="GROUP.FIELD=VALUE",
        action="append",
        default=[],
        help="override one config field (JSON value), e.g. --set match.th_soft=0.9",
    )


def _resolve_config(args) -> PipelineConfig:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects GROUP.FIELD=VALUE, got '{item}'")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overrides[key.strip()] = value
    return apply_overrides(config, overrides)


def _parse_float_list(raw: str, flag: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"{flag} expects comma-separated numbers, got '{raw}'") from None
    if not values:
        raise ConfigError(f"{flag} got an empty list")
    return values


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    if args.spec:
        try:
            data = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise FormatError(f"{args.spec}: invalid JSON ({err})") from None
        sampler = sampler_from_dict(data)
    else:
        sampler = SceneSampler()

    out = Path(args.out)
    scenes = sample_frames(sampler, args.frames, seed=args.seed)
    dataio.write_frame_dir(out, sampler.intrinsics, [s.frame for s in scenes])
    gt = GroundTruthSet(
        frames={
            s.frame.frame_id: [
                GtBox(*hull, ignore=ignore) for hull, ignore in s.person_boxes()
            ]
            for s in scenes
        }
    )
    dataio.write_ground_truth(out / "gt.jsonl", gt)
    print(f"wrote {len(scenes)} frames, {gt.n_positives} ground-truth boxes to {out}")

    if args.annotations > 0:
        ann_dir = Path(args.annotations_out) if args.annotations_out else out / "annotations"
        crops = render_annotation_crops(
            args.annotations,
            seed=args.seed + 1,
            sampler=sampler,
            distance_m=sampler.person_distance_m,
        )
        n = dataio.save_annotations(ann_dir, [(c, None, sid) for c, sid in crops])
        print(f"wrote {n} annotation crops to {ann_dir}")
    return 0


# ---------------------------------------------------------------------------
# train / cluster-analyze


def _cmd_train(args) -> int:
    annotations = dataio.load_annotations(args.annotations)
    if args.mode == "single":
        template_set = TemplateSet(
            kind=TemplateSetKind.SINGLE,
            members=[unit_weighted(train_single(annotations))],
        )
    elif args.mode == "weighted":
        template_set = TemplateSet(
            kind=TemplateSetKind.SINGLE, members=[train_weighted(annotations)]
        )
    elif args.mode == "orientation":
        template_set = train_orientation_set(annotations, k=args.k, seed=args.seed)
    elif args.mode == "distance":
        edges = _parse_float_list(args.ranges, "--ranges")
        template_set = train_distance_set(annotations, parse_range_edges(edges))
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown mode {args.mode}")
    save_template_set(template_set, args.out)
    print(
        f"trained {template_set.kind.value} set with {len(template_set.members)} member(s) "
        f"from {len(annotations)} annotations -> {args.out}"
    )
    return 0


def _cmd_cluster_analyze(args) -> int:
    annotations = dataio.load_annotations(args.annotations)
    if args.k_min < 2 or args.k_max < args.k_min:
        raise ConfigError(f"need 2 <= k-min <= k-max, got {args.k_min}..{args.k_max}")
    best_k, table = select_k(annotations, range(args.k_min, args.k_max + 1), seed=args.seed)
    for k, score in table:
        print(f"k={k} silhouette={score:.4f}")
    print(f"selected k={best_k}")
    if args.out_csv:
        dataio.write_scores_csv(args.out_csv, table)
        plot = args.plot or Path(args.out_csv).with_suffix(".svg")
        plots.save_silhouette_plot(plot, table)
        print(f"wrote {args.out_csv} and {plot}")
    return 0


# ---------------------------------------------------------------------------
# detect / verify


def _load_pipeline(args, config: PipelineConfig) -> tuple[FramePipeline, list]:
    intrinsics, frames = dataio.load_frame_dir(args.frames)
    template_set = load_template_set(args.templates)
    scorer = load_scorer(args.scorer) if getattr(args, "scorer", None) else None
    return FramePipeline(intrinsics, template_set, config, scorer), frames


def _cmd_detect(args) -> int:
    config = _resolve_config(args)
    pipeline, frames = _load_pipeline(args, config)
    detections = {}
    rois = {}
    for frame in frames:
        result = pipeline.process(frame)
        detections[frame.frame_id] = result.detections
        rois[frame.frame_id] = result.rois
    dataio.write_detections(args.out, detections)
    n = sum(len(d) for d in detections.values())
    print(f"{n} detections over {len(frames)} frames -> {args.out}")
    if args.rois_out:
        dataio.write_rois(args.rois_out, rois)
        print(f"roi log -> {args.rois_out}")
    return 0


def _cmd_verify(args) -> int:
    config = _resolve_config(args)
    intrinsics, frames = dataio.load_frame_dir(args.frames)
    del intrinsics
    scorer = load_scorer(args.scorer)
    detections = dataio.read_detections(args.detections)
    frames_by_id = {f.frame_id: f for f in frames}
    verified = {}
    n_checked = 0
    for frame_id, dets in detections.items():
        frame = frames_by_id.get(frame_id)
        if frame is None:
            raise FormatError(f"detections reference frame {frame_id} missing from {args.frames}")
        verified[frame_id] = verify_detections(dets, frame.rgb, scorer, config.verifier)
        n_checked += sum(1 for d in dets if d.band is ScoreBand.UNRELIABLE)
    dataio.write_detections(args.out, verified)
    print(f"verified {n_checked} unreliable detections -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluate / sweep / bench


def _cmd_evaluate(args) -> int:
    detections = dataio.read_detections(args.detections)
    gt = dataio.read_ground_truth(args.gt)
    curve = evaluate_detections(detections, gt, args.overlap)
    dataio.write_curve_csv(args.out_csv, curve)
    plot = args.plot or Path(args.out_csv).with_suffix(".svg")
    plots.save_curve_plot(plot, [("detections", curve)])
    print(
        f"recall@1fppi={curve.recall_at_fppi(1.0):.4f} "
        f"lamr={curve.log_average_miss_rate():.4f} "
        f"({len(curve.thresholds)} operating points) -> {args.out_csv}, {plot}"
    )
    return 0


def _cmd_sweep(args) -> int:
    config = _resolve_config(args)
    detections = dataio.read_detections(args.detections)
    gt = dataio.read_ground_truth(args.gt)
    _, frames = dataio.load_frame_dir(args.frames)
    rgb = {f.frame_id: f.rgb for f in frames if f.rgb is not None}
    scorer = load_scorer(args.scorer)
    thresholds = _parse_float_list(args.thresholds, "--thresholds")
    results = sweep_soft_threshold(
        detections, rgb, gt, scorer, thresholds,
        hard_threshold=args.hard, verifier_config=config.verifier,
        overlap_min=args.overlap,
    )
    rows = [
        (th, curve.log_average_miss_rate(), curve.recall_at_fppi(1.0))
        for th, curve in results
    ]
    for th, lamr, recall in rows:
        print(f"th_soft={th:.3f} lamr={lamr:.4f} recall@1fppi={recall:.4f}")
    best = min(rows, key=lambda r: r[1])
    print(f"best th_soft={best[0]:.3f}")
    if args.out_csv:
        dataio.write_sweep_csv(args.out_csv, rows)
        plot = args.plot or Path(args.out_csv).with_suffix(".svg")
        plots.save_sweep_plot(plot, rows)
        print(f"wrote {args.out_csv} and {plot}")
    return 0


def _cmd_bench(args) -> int:
    config = _resolve_config(args)
    pipeline, frames = _load_pipeline(args, config)
    report = time_pipeline(frames, pipeline.process, warmup=args.warmup)
    for stage, ms in report.rows():
        print(f"{stage:>10}: {ms:8.3f} ms")
    print(f"measured {report.n_frames} frames ({report.warmup} warm-up excluded)")
    if args.out_csv:
        dataio.write_timing_csv(args.out_csv, report.rows())
        print(f"wrote {args.out_csv}")
    return 0


# ---------------------------------------------------------------------------
# train-scorer


def _reaspect_crop(rgb: np.ndarray, bbox) -> Optional[np.ndarray]:
    h, w = rgb.shape[:2]
    rects = expand_candidates(tuple(bbox), (w, h), offsets=(0.0,), scales=(1.0,))
    if not rects:
        return None
    x, y, bw, bh = rects[0]
    return rgb[y : y + bh, x : x + bw]


def _cmd_train_scorer(args) -> int:
    _, frames = dataio.load_frame_dir(args.frames)
    gt = dataio.read_ground_truth(args.gt)
    hard_negatives = dataio.read_detections(args.detections) if args.detections else {}
    from .detector import bbox_iou

    rng = np.random.default_rng(args.seed)
    positives, negatives = [], []
    for frame in frames:
        if frame.rgb is None:
            continue
        boxes = gt.frames.get(frame.frame_id, [])
        gt_bboxes = [b.bbox for b in boxes if not b.ignore]
        for bbox in gt_bboxes:
            crop = _reaspect_crop(frame.rgb, bbox)
            if crop is not None:
                positives.append(build_channels(crop))
        for det in hard_negatives.get(frame.frame_id, []):
            if all(bbox_iou(det.bbox, g) < 0.3 for g in gt_bboxes):
                crop = _reaspect_crop(frame.rgb, det.bbox)
                if crop is not None:
                    negatives.append(build_channels(crop))
        img_h, img_w = frame.rgb.shape[:2]
        for _ in range(args.random_negatives):
            bh = int(rng.integers(60, 320))
            bw = max(1, bh // 3)
            x = int(rng.integers(0, max(1, img_w - bw)))
            y = int(rng.integers(0, max(1, img_h - bh)))
            rect = (x, y, bw, bh)
            if all(bbox_iou(rect, g) < 0.2 for g in gt_bboxes):
                negatives.append(build_channels(frame.rgb[y : y + bh, x : x + bw]))
    if not positives or not negatives:
        raise NoGroundTruth(
            f"scorer training needs both classes, got {len(positives)} positive / "
            f"{len(negatives)} negative crops"
        )
    scorer = train_logistic_scorer(positives, negatives, iterations=args.iterations)
    save_scorer(scorer, args.out)
    print(
        f"trained appearance scorer on {len(positives)} positives / "
        f"{len(negatives)} negatives -> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="depthped", description="Depth-template pedestrian detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="render synthetic RGB-D frames + ground truth")
    p.add_argument("--spec", type=Path, default=None, help="scene description JSON")
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--annotations", type=int, default=0, help="also render N training crops")
    p.add_argument("--annotations-out", type=Path, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a template set from annotation crops")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=["single", "weighted", "orientation", "distance"], required=True)
    p.add_argument("--k", type=int, default=3, help="cluster count for orientation mode")
    p.add_argument("--ranges", default="0,4,7", help="distance range edges in meters")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("cluster-analyze", help="pick a cluster count by mean silhouette")
    p.add_argument("--annotations", type=Path, required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-csv", type=Path, default=None)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=_cmd_cluster_analyze)

    p = sub.add_parser("detect", help="run the depth pipeline over a frame directory")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--templates", type=Path, required=True)
    p.add_argument("--scorer", type=Path, default=None, help="verify unreliable detections too")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rois-out", type=Path, default=None)
    _add_config_args(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("verify", help="re-score unreliable detections from RGB appearance")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--scorer", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_args(p)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("evaluate", help="recall/FPPI curve against ground truth")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out-csv", type=Path, required=True)
    p.add_argument("--plot", type=Path, default=None)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="evaluate several soft thresholds with verification")
    p.add_argument("--detections", type=Path, required=True)
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--scorer", type=Path, required=True)
    p.add_argument("--thresholds", default="0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--hard", type=float, default=0.0)
    p.add_argument("--overlap", type=float, default=0.5)
    p.add_argument("--out-csv", type=Path, default=None)
    p.add_argument("--plot", type=Path, default=None)
    _add_config_args(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("bench", help="per-stage wall-clock timing over a frame directory")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--templates", type=Path, required=True)
    p.add_argument("--scorer", type=Path, default=None)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out-csv", type=Path, default=None)
    _add_config_args(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("train-scorer", help="fit the appearance model from ground truth")
    p.add_argument("--frames", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--detections", type=Path, default=None,
                   help="mine unmatched detections as hard negatives")
    p.add_argument("--random-negatives", type=int, default=3, help="random crops per frame")
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=_cmd_train_scorer)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as err:
        print(f"[{err.code}] {err.message}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"[E_IO] {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
