"""Appearance verification of unreliable depth detections.

A detection in the unreliable score band is re-examined in the RGB image:
jittered candidate crops around the box are converted to a fixed-size
three-channel stack (luma, tiled half-resolution YUV planes, tiled
gradient magnitudes) and scored by a pluggable appearance model.  The
best candidate score becomes the detection's verified score.

The scorer interface deliberately hides the model: anything that maps a
channel stack to a probability-like value in [0, 1] plugs in.  The
bundled reference model is a logistic regression over pooled per-cell
channel statistics, trained on synthetic crops.
"""

from __future__ import annotations

import abc
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .detector import Detection, ScoreBand
from .errors import ConfigError, FormatError, MissingRgb
from .raster import resize_nearest

# Stack geometry: full canvas and the half-resolution tile.
CANVAS_H, CANVAS_W = 84, 28
HALF_H, HALF_W = CANVAS_H // 2, CANVAS_W // 2
# Pooling cell for the reference scorer's features.
FEATURE_CELL = 7

_SCORER_MAGIC = b"DPSCOR01"

# BT.601 luma and the analog U/V differences, with their value ranges used
# for normalization to [0, 1].
_YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.14713, -0.28886, 0.436],
        [0.615, -0.51499, -0.10001],
    ]
)
_U_MAX = 0.436
_V_MAX = 0.615


@dataclass(frozen=True)
class VerifierConfig:
    accept_threshold: float = 0.5
    offsets: tuple[float, ...] = (-0.1, 0.0, 0.1)
    scales: tuple[float, ...] = (0.9, 1.0, 1.1)

    def __post_init__(self):
        if not (0.0 <= self.accept_threshold <= 1.0):
            raise ConfigError(
                f"accept threshold must be in [0, 1], got {self.accept_threshold}"
            )
        if any(s <= 0 for s in self.scales):
            raise ConfigError(f"candidate scales must be positive, got {self.scales}")


@dataclass
class ChannelStack:
    """Three aligned 84 x 28 channels in [0, 1]."""

    luma: np.ndarray
    planes: np.ndarray
    gradients: np.ndarray

    def __post_init__(self):
        for name in ("luma", "planes", "gradients"):
            arr = np.asarray(getattr(self, name), dtype=np.float32)
            if arr.shape != (CANVAS_H, CANVAS_W):
                raise ConfigError(f"{name} channel must be {CANVAS_H}x{CANVAS_W}, got {arr.shape}")
            setattr(self, name, arr)

    def as_array(self) -> np.ndarray:
        return np.stack([self.luma, self.planes, self.gradients])


@dataclass
class VerifierVerdict:
    original_score: float
    verified_score: float
    accepted: bool
    candidate_count: int


def _gradient_magnitude(plane: np.ndarray) -> np.ndarray:
    """Centered differences (one-sided first order at borders), clipped."""
    gy, gx = np.gradient(plane, edge_order=1)
    return np.clip(np.sqrt(gx * gx + gy * gy), 0.0, 1.0)


def build_channels(rgb_crop: np.ndarray) -> ChannelStack:
    """Convert an RGB crop to the fixed-size stack the scorer consumes.

    The crop is resized to 84 x 28 (nearest neighbor, so applying the
    resize twice is a no-op), converted to YUV with every plane
    normalized to [0, 1].  Channel 2 tiles the three half-resolution
    planes into the canvas quadrants, leaving the fourth quadrant zero;
    channel 3 tiles the three gradient magnitudes plus their elementwise
    maximum.
    """
    crop = np.asarray(rgb_crop)
    if crop.ndim != 3 or crop.shape[2] != 3 or crop.shape[0] < 1 or crop.shape[1] < 1:
        raise ConfigError(f"rgb crop must be nonempty HxWx3, got shape {crop.shape}")
    rgb = resize_nearest(crop, CANVAS_H, CANVAS_W).astype(np.float64) / 255.0

    y = rgb @ _YUV[0]
    u = (rgb @ _YUV[1] + _U_MAX) / (2 * _U_MAX)
    v = (rgb @ _YUV[2] + _V_MAX) / (2 * _V_MAX)

    halves = [resize_nearest(p, HALF_H, HALF_W) for p in (y, u, v)]
    planes = np.zeros((CANVAS_H, CANVAS_W))
    planes[:HALF_H, :HALF_W] = halves[0]
    planes[:HALF_H, HALF_W:] = halves[1]
    planes[HALF_H:, :HALF_W] = halves[2]

    mags = [_gradient_magnitude(p) for p in halves]
    grads = np.zeros((CANVAS_H, CANVAS_W))
    grads[:HALF_H, :HALF_W] = mags[0]
    grads[:HALF_H, HALF_W:] = mags[1]
    grads[HALF_H:, :HALF_W] = mags[2]
    grads[HALF_H:, HALF_W:] = np.maximum(np.maximum(mags[0], mags[1]), mags[2])

    return ChannelStack(luma=y, planes=planes, gradients=grads)


def expand_candidates(
    bbox: Sequence[int],
    image_size: tuple[int, int],
    offsets: Sequence[float] = (-0.1, 0.0, 0.1),
    scales: Sequence[float] = (0.9, 1.0, 1.1),
) -> list[tuple[int, int, int, int]]:
    """Candidate crops: the box re-aspected to 3:1 (h:w) about its center,
    jittered by the given offset fractions in x and y and rescaled.

    ``image_size`` is (width, height).  Candidates are clipped to the
    image; empty ones are dropped and exact duplicates removed while
    preserving order, so a well-centered box yields ``len(offsets)^2 *
    len(scales)`` candidates.
    """
    x, y, w, h = (float(v) for v in bbox)
    img_w, img_h = image_size
    cx = x + w / 2.0
    cy = y + h / 2.0
    base_h = h
    base_w = max(1.0, h / 3.0)

    out: list[tuple[int, int, int, int]] = []
    seen = set()
    for dy_f in offsets:
        for dx_f in offsets:
            for s in scales:
                cw = base_w * s
                ch = base_h * s
                ccx = cx + dx_f * base_w
                ccy = cy + dy_f * base_h
                x0 = int(round(ccx - cw / 2.0))
                y0 = int(round(ccy - ch / 2.0))
                x1 = int(round(ccx + cw / 2.0))
                y1 = int(round(ccy + ch / 2.0))
                x0c, y0c = max(0, x0), max(0, y0)
                x1c, y1c = min(img_w, x1), min(img_h, y1)
                if x1c - x0c < 1 or y1c - y0c < 1:
                    continue
                rect = (x0c, y0c, x1c - x0c, y1c - y0c)
                if rect not in seen:
                    seen.add(rect)
                    out.append(rect)
    return out


class AppearanceScorer(abc.ABC):
    """Maps a channel stack to a score in [0, 1]; higher means more person-like."""

    @abc.abstractmethod
    def score(self, stack: ChannelStack) -> float:
        raise NotImplementedError


class LogisticScorer(AppearanceScorer):
    """Reference model: logistic regression over per-cell channel statistics.

    Features are the mean and variance of every ``FEATURE_CELL`` square
    cell of each channel, standardized with the statistics stored at
    training time.  With all-zero weights the score is exactly 0.5.
    """

    def __init__(
        self,
        weights: np.ndarray,
        bias: float = 0.0,
        feat_mean: Optional[np.ndarray] = None,
        feat_scale: Optional[np.ndarray] = None,
        cell: int = FEATURE_CELL,
    ):
        self.cell = int(cell)
        self.weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        self.bias = float(bias)
        n = len(self.weights)
        self.feat_mean = (
            np.zeros(n) if feat_mean is None else np.asarray(feat_mean, dtype=np.float64)
        )
        self.feat_scale = (
            np.ones(n) if feat_scale is None else np.asarray(feat_scale, dtype=np.float64)
        )
        if self.feat_mean.shape != (n,) or self.feat_scale.shape != (n,):
            raise ConfigError("feature normalization arrays must match the weight count")

    def features(self, stack: ChannelStack) -> np.ndarray:
        cells_h = CANVAS_H // self.cell
        cells_w = CANVAS_W // self.cell
        feats = []
        for channel in (stack.luma, stack.planes, stack.gradients):
            blocks = channel.astype(np.float64).reshape(cells_h, self.cell, cells_w, self.cell)
            feats.append(blocks.mean(axis=(1, 3)).ravel())
            feats.append(blocks.var(axis=(1, 3)).ravel())
        return np.concatenate(feats)

    def score(self, stack: ChannelStack) -> float:
        f = (self.features(stack) - self.feat_mean) / self.feat_scale
        z = float(f @ self.weights + self.bias)
        return float(1.0 / (1.0 + np.exp(-z)))


def n_scorer_features(cell: int = FEATURE_CELL) -> int:
    return (CANVAS_H // cell) * (CANVAS_W // cell) * 2 * 3


def train_logistic_scorer(
    positives: Sequence[ChannelStack],
    negatives: Sequence[ChannelStack],
    iterations: int = 400,
    learning_rate: float = 0.5,
    l2: float = 1e-3,
) -> LogisticScorer:
    """Deterministic full-batch gradient descent on the log loss.

    Small and intentionally capacity-limited: the point of the reference
    model is to provide a working, reproducible stand-in for a stronger
    appearance classifier, not to compete with one.
    """
    if not positives or not negatives:
        raise ConfigError("scorer training needs at least one positive and one negative")
    probe = LogisticScorer(np.zeros(n_scorer_features()))
    x = np.stack([probe.features(s) for s in list(positives) + list(negatives)])
    t = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])

    mean = x.mean(axis=0)
    scale = np.maximum(x.std(axis=0), 1e-6)
    xs = (x - mean) / scale

    w = np.zeros(xs.shape[1])
    b = 0.0
    for _ in range(iterations):
        z = xs @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = p - t
        grad_w = xs.T @ err / len(t) + l2 * w
        grad_b = float(err.mean())
        w -= learning_rate * grad_w
        b -= learning_rate * grad_b
    return LogisticScorer(w, b, mean, scale)


def verify(
    detection: Detection,
    rgb: Optional[np.ndarray],
    scorer: AppearanceScorer,
    config: VerifierConfig = VerifierConfig(),
) -> VerifierVerdict:
    """Re-score one unreliable detection from its RGB appearance.

    The verified score is the maximum scorer output over the candidate
    crops.  Callers route only unreliable detections here; reliable and
    rejected ones pass the pipeline unmodified.
    """
    if detection.band != ScoreBand.UNRELIABLE:
        raise ConfigError(f"verify expects an unreliable detection, got band {detection.band.name}")
    if rgb is None:
        raise MissingRgb("frame carries no RGB image")
    rgb = np.asarray(rgb)
    img_h, img_w = rgb.shape[:2]
    rects = expand_candidates(detection.bbox, (img_w, img_h), config.offsets, config.scales)
    best = 0.0
    for x, y, w, h in rects:
        stack = build_channels(rgb[y : y + h, x : x + w])
        best = max(best, float(scorer.score(stack)))
    return VerifierVerdict(
        original_score=detection.score,
        verified_score=best,
        accepted=bool(rects) and best >= config.accept_threshold,
        candidate_count=len(rects),
    )


def verify_detections(
    detections: Sequence[Detection],
    rgb: Optional[np.ndarray],
    scorer: AppearanceScorer,
    config: VerifierConfig = VerifierConfig(),
) -> list[Detection]:
    """Apply :func:`verify` to every unreliable detection of a frame.

    Returns new detection objects; unreliable ones carry their verified
    score and accept flag, other bands pass through untouched.
    """
    out: list[Detection] = []
    for det in detections:
        if det.band != ScoreBand.UNRELIABLE:
            out.append(det)
            continue
        verdict = verify(det, rgb, scorer, config)
        out.append(
            Detection(
                bbox=det.bbox,
                score=det.score,
                band=det.band,
                distance_m=det.distance_m,
                template_id=det.template_id,
                verified_score=verdict.verified_score,
                accepted=verdict.accepted,
            )
        )
    return out


def save_scorer(scorer: LogisticScorer, path: str | Path) -> None:
    """Binary container (same family as the template container) + JSON sidecar."""
    path = Path(path)
    n = len(scorer.weights)
    blob = bytearray()
    blob += _SCORER_MAGIC
    blob += struct.pack("<HIf", scorer.cell, n, scorer.bias)
    for arr in (scorer.weights, scorer.feat_mean, scorer.feat_scale):
        blob += np.asarray(arr, dtype="<f4").tobytes(order="C")
    path.write_bytes(bytes(blob))
    meta = {
        "format": _SCORER_MAGIC.decode(),
        "cell": scorer.cell,
        "features": n,
        "kind": "logistic",
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )


def load_scorer(path: str | Path) -> LogisticScorer:
    raw = Path(path).read_bytes()
    if len(raw) < len(_SCORER_MAGIC) + 10 or raw[: len(_SCORER_MAGIC)] != _SCORER_MAGIC:
        raise FormatError(f"{path}: not a {_SCORER_MAGIC.decode()} scorer container")
    off = len(_SCORER_MAGIC)
    cell, n, bias = struct.unpack_from("<HIf", raw, off)
    off += struct.calcsize("<HIf")
    if off + 3 * 4 * n != len(raw):
        raise FormatError(f"{path}: scorer container has wrong payload size")
    arrays = []
    for _ in range(3):
        arrays.append(np.frombuffer(raw, dtype="<f4", count=n, offset=off).astype(np.float64))
        off += 4 * n
    return LogisticScorer(arrays[0], bias, arrays[1], arrays[2], cell)
