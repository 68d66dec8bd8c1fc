"""File formats: depth maps, color images, intrinsics, annotations,
detections, ground truth, and CSV tables.

Everything here is byte-deterministic for fixed inputs: JSON is written
with sorted keys, floats use repr round-tripping, and no timestamps or
hostnames ever enter an output file.

Depth rides in 16-bit binary PGM as millimeters (0 = no measurement),
the common exchange format for commodity RGB-D sensors, or in raw
little-endian float32 meters next to a JSON shape sidecar.  Color uses
binary PPM.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .detector import Detection, ScoreBand
from .errors import FormatError
from .evaluation import EvalCurve, GroundTruthSet, GtBox
from .geometry import CameraIntrinsics, DepthFrame
from .roi import Roi
from .templates import Annotation, normalize_annotation


def _fmt(value: float) -> str:
    return f"{float(value):.9g}"


# ---------------------------------------------------------------------------
# Netpbm images


def _read_pnm_header(data: bytes, magic: bytes, n_fields: int) -> tuple[list[int], int]:
    """Parse a binary netpbm header; returns (fields, pixel data offset)."""
    if not data.startswith(magic):
        raise FormatError(f"expected {magic.decode()} header")
    pos = len(magic)
    fields: list[int] = []
    while len(fields) < n_fields:
        if pos >= len(data):
            raise FormatError("truncated netpbm header")
        ch = data[pos : pos + 1]
        if ch == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise FormatError("unterminated comment in netpbm header")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            match = re.match(rb"\d+", data[pos:])
            if not match:
                raise FormatError(f"bad netpbm header near byte {pos}")
            fields.append(int(match.group()))
            pos += match.end()
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("netpbm header must end with single whitespace")
    return fields, pos + 1


def write_depth_pgm(path: str | Path, depth_m: np.ndarray) -> None:
    """Depth in meters -> 16-bit big-endian PGM in millimeters."""
    depth_m = np.asarray(depth_m, dtype=np.float64)
    if depth_m.ndim != 2:
        raise FormatError(f"depth must be 2-d, got shape {depth_m.shape}")
    mm = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(">u2")
    h, w = mm.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode())
        fh.write(mm.tobytes())


def read_depth_pgm(path: str | Path) -> np.ndarray:
    """16-bit PGM in millimeters -> float32 meters (0 stays invalid)."""
    data = Path(path).read_bytes()
    (w, h, maxval), offset = _read_pnm_header(data, b"P5", 3)
    if maxval != 65535:
        raise FormatError(f"depth PGM must use maxval 65535, got {maxval}")
    expected = w * h * 2
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(f"depth PGM payload is {len(payload)} bytes, expected {expected}")
    mm = np.frombuffer(payload, dtype=">u2").reshape(h, w)
    return (mm.astype(np.float32)) / 1000.0


def write_rgb_ppm(path: str | Path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise FormatError(f"rgb must be uint8 HxWx3, got {rgb.dtype} {rgb.shape}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(rgb.tobytes())


def read_rgb_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    (w, h, maxval), offset = _read_pnm_header(data, b"P6", 3)
    if maxval != 255:
        raise FormatError(f"color PPM must use maxval 255, got {maxval}")
    expected = w * h * 3
    payload = data[offset : offset + expected]
    if len(payload) != expected:
        raise FormatError(f"color PPM payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()


# ---------------------------------------------------------------------------
# Raw float32 depth


def write_depth_raw(path: str | Path, depth_m: np.ndarray) -> None:
    """Row-major little-endian float32 meters plus a JSON shape sidecar."""
    depth_m = np.asarray(depth_m, dtype="<f4")
    if depth_m.ndim != 2:
        raise FormatError(f"depth must be 2-d, got shape {depth_m.shape}")
    Path(path).write_bytes(np.ascontiguousarray(depth_m).tobytes())
    sidecar = {"height": depth_m.shape[0], "width": depth_m.shape[1], "dtype": "float32_le"}
    Path(str(path) + ".json").write_text(
        json.dumps(sidecar, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_depth_raw(path: str | Path) -> np.ndarray:
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"missing shape sidecar {sidecar_path}")
    meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    try:
        h, w = int(meta["height"]), int(meta["width"])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"bad sidecar {sidecar_path}") from None
    data = Path(path).read_bytes()
    if len(data) != h * w * 4:
        raise FormatError(f"raw depth is {len(data)} bytes, expected {h * w * 4}")
    return np.frombuffer(data, dtype="<f4").reshape(h, w).copy()


def load_depth(path: str | Path) -> np.ndarray:
    """Dispatch on suffix: .pgm or .f32."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pgm":
        return read_depth_pgm(path)
    if suffix == ".f32":
        return read_depth_raw(path)
    raise FormatError(f"unsupported depth format '{suffix}' (use .pgm or .f32)")


# ---------------------------------------------------------------------------
# Intrinsics


_INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def write_intrinsics(path: str | Path, intr: CameraIntrinsics) -> None:
    lines = [
        f"fx {_fmt(intr.fx)}", f"fy {_fmt(intr.fy)}",
        f"cx {_fmt(intr.cx)}", f"cy {_fmt(intr.cy)}",
        f"width {intr.width}", f"height {intr.height}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_intrinsics(path: str | Path) -> CameraIntrinsics:
    values: dict[str, float] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[0] not in _INTRINSICS_KEYS:
            raise FormatError(f"bad intrinsics line: {raw!r}")
        values[parts[0]] = float(parts[1])
    missing = [k for k in _INTRINSICS_KEYS if k not in values]
    if missing:
        raise FormatError(f"intrinsics file misses keys: {missing}")
    return CameraIntrinsics(
        fx=values["fx"], fy=values["fy"], cx=values["cx"], cy=values["cy"],
        width=int(values["width"]), height=int(values["height"]),
    )


# ---------------------------------------------------------------------------
# Frame directories


def _frame_id_from_stem(stem: str) -> int:
    match = re.search(r"(\d+)$", stem)
    if not match:
        raise FormatError(f"cannot derive a frame id from file stem '{stem}'")
    return int(match.group(1))


def write_frame_dir(
    directory: str | Path,
    intrinsics: CameraIntrinsics,
    frames: Sequence[DepthFrame],
) -> None:
    """Lay out a frame directory: intrinsics.txt + NNNNNN.pgm (+ .ppm)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_intrinsics(directory / "intrinsics.txt", intrinsics)
    for frame in frames:
        stem = f"{frame.frame_id:06d}"
        write_depth_pgm(directory / f"{stem}.pgm", frame.depth)
        if frame.rgb is not None:
            write_rgb_ppm(directory / f"{stem}.ppm", frame.rgb)


def load_frame_dir(directory: str | Path) -> tuple[CameraIntrinsics, list[DepthFrame]]:
    """Read a frame directory back, ordered by frame id."""
    directory = Path(directory)
    intr_path = directory / "intrinsics.txt"
    if not intr_path.exists():
        raise FormatError(f"{directory} has no intrinsics.txt")
    intr = read_intrinsics(intr_path)
    frames = []
    paths = sorted(directory.glob("*.pgm")) + sorted(directory.glob("*.f32"))
    if not paths:
        raise FormatError(f"{directory} holds no .pgm or .f32 depth maps")
    for path in paths:
        frame_id = _frame_id_from_stem(path.stem)
        depth = load_depth(path)
        rgb_path = path.with_suffix(".ppm")
        rgb = read_rgb_ppm(rgb_path) if rgb_path.exists() else None
        frames.append(DepthFrame(depth=depth, frame_id=frame_id, rgb=rgb))
    frames.sort(key=lambda f: f.frame_id)
    return intr, frames


# ---------------------------------------------------------------------------
# Detections and ground truth (JSON lines)


def write_detections(path: str | Path, detections: Mapping[int, Sequence[Detection]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id in sorted(detections):
            for det in detections[frame_id]:
                record = {
                    "frame": int(frame_id),
                    "bbox": [int(v) for v in det.bbox],
                    "score": float(det.score),
                    "band": det.band.name.lower(),
                    "distance_m": float(det.distance_m),
                    "template": int(det.template_id),
                    "verified_score": None if det.verified_score is None else float(det.verified_score),
                    "accepted": det.accepted,
                }
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_detections(path: str | Path) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            det = Detection(
                bbox=tuple(int(v) for v in rec["bbox"]),
                score=float(rec["score"]),
                band=ScoreBand[rec["band"].upper()],
                distance_m=float(rec["distance_m"]),
                template_id=int(rec["template"]),
                verified_score=None if rec.get("verified_score") is None else float(rec["verified_score"]),
                accepted=rec.get("accepted"),
            )
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
            raise FormatError(f"{path}:{lineno}: bad detection record ({err})") from None
        out.setdefault(int(rec["frame"]), []).append(det)
    return out


def write_ground_truth(path: str | Path, gt: GroundTruthSet) -> None:
    """One line per frame so empty frames still count toward FPPI."""
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id in sorted(gt.frames):
            boxes = [
                [b.x, b.y, b.width, b.height, int(b.ignore)] for b in gt.frames[frame_id]
            ]
            fh.write(json.dumps({"frame": int(frame_id), "boxes": boxes}, sort_keys=True) + "\n")


def read_ground_truth(path: str | Path) -> GroundTruthSet:
    frames: dict[int, list[GtBox]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            frames[int(rec["frame"])] = [
                GtBox(int(x), int(y), int(w), int(h), bool(ignore))
                for x, y, w, h, ignore in rec["boxes"]
            ]
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as err:
            raise FormatError(f"{path}:{lineno}: bad ground-truth record ({err})") from None
    if not frames:
        raise FormatError(f"{path} holds no ground-truth frames")
    return GroundTruthSet(frames=frames)


def write_rois(path: str | Path, rois_by_frame: Mapping[int, Sequence[Roi]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for frame_id in sorted(rois_by_frame):
            for roi in rois_by_frame[frame_id]:
                rec = {
                    "frame": int(frame_id),
                    "bbox": [int(v) for v in roi.bbox],
                    "distance_m": float(roi.distance_m),
                    "points": int(len(roi.point_indices)),
                }
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Annotation directories


def save_annotations(
    directory: str | Path,
    patches: Iterable[tuple[np.ndarray, Optional[float], str]],
) -> int:
    """Write raw depth crops as NNNNNN.npy + .json sidecars.

    Each element is (raw depth crop in meters, optional distance in
    meters, source id).  Returns the number written.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    count = 0
    for i, (patch, distance, source_id) in enumerate(patches):
        stem = directory / f"{i:06d}"
        np.save(str(stem) + ".npy", np.asarray(patch, dtype=np.float32))
        meta = {
            "distance_m": None if distance is None else float(distance),
            "source_id": str(source_id),
        }
        Path(str(stem) + ".json").write_text(
            json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8"
        )
        count += 1
    return count


def load_annotations(directory: str | Path) -> list[Annotation]:
    """Read raw crops back and normalize them into training annotations."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.npy"))
    if not paths:
        raise FormatError(f"{directory} holds no .npy annotation crops")
    annotations = []
    for path in paths:
        patch = np.load(path)
        meta_path = path.with_suffix(".json")
        distance = None
        source_id = path.stem
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            distance = meta.get("distance_m")
            source_id = meta.get("source_id", source_id)
        annotations.append(
            normalize_annotation(patch, distance_m=distance, source_id=source_id)
        )
    return annotations


# ---------------------------------------------------------------------------
# CSV tables


def write_curve_csv(path: str | Path, curve: EvalCurve) -> None:
    lines = ["threshold,fppi,recall"]
    for th, fppi, recall in zip(curve.thresholds, curve.fppi, curve.recall):
        lines.append(f"{_fmt(th)},{_fmt(fppi)},{_fmt(recall)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curve_csv(path: str | Path) -> EvalCurve:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != "threshold,fppi,recall":
        raise FormatError(f"{path} is not a curve table")
    rows = [tuple(float(v) for v in line.split(",")) for line in lines[1:] if line]
    if not rows:
        raise FormatError(f"{path} holds no curve points")
    arr = np.array(rows)
    return EvalCurve(
        thresholds=arr[:, 0], fppi=arr[:, 1], recall=arr[:, 2],
        n_positives=0, n_frames=0,
    )


def write_sweep_csv(path: str | Path, rows: Sequence[tuple[float, float, float]]) -> None:
    """Summary of a soft-threshold sweep: (th_soft, lamr, recall@1fppi)."""
    lines = ["th_soft,log_avg_miss_rate,recall_at_fppi1"]
    for th, lamr, recall in rows:
        lines.append(f"{_fmt(th)},{_fmt(lamr)},{_fmt(recall)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_timing_csv(path: str | Path, rows: Sequence[tuple[str, float]]) -> None:
    lines = ["stage,mean_ms"]
    for stage, ms in rows:
        lines.append(f"{stage},{_fmt(ms)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_scores_csv(path: str | Path, rows: Sequence[tuple[int, float]]) -> None:
    """Cluster-count selection table: (k, mean silhouette)."""
    lines = ["k,silhouette"]
    for k, score in rows:
        lines.append(f"{k},{_fmt(score)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
