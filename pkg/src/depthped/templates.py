"""Depth-template training: normalization, averaging, reliability weights,
orientation clustering and distance-banded template sets.

An annotation is a depth crop of a head-and-shoulders region, resized to
150 x 150 and shifted so the wearer's torso depth sits at zero (median of
a central reference patch).  Templates are per-pixel masked means over
annotations; the weighted variant additionally carries per-pixel inverse
spread ``w = 1 / sigma`` so that pixels whose depth is stable across
people (head, shoulders) dominate the match while unreliable regions
(background corners) are nearly ignored.

Both quantities are the exact stationary point of the energy

    E(t, w) = sum_px [ mean_i w_px (t_px - x_i,px)^2  +  1 / w_px ]

minimized jointly over template ``t`` and weights ``w`` (see
:func:`weighted_energy`); training evaluates the closed form instead of
iterating.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DegenerateClustering,
    EmptyRange,
    EmptyTrainingSet,
    FormatError,
    SingleSample,
    TooFewSamples,
    TooSparse,
)
from .raster import resize_nearest

TEMPLATE_SIZE = 150
# Side of the central reference patch used for median normalization.
REFERENCE_PATCH = 30
# Minimum fraction of valid pixels the reference patch must contain.
MIN_REFERENCE_VALID = 0.25
# Per-pixel spread is clamped below this before inversion; keeps weights
# finite on pixels that happen to agree exactly across samples.
SIGMA_FLOOR = 0.01

_MAGIC = b"DPTSET01"


@dataclass
class Annotation:
    """One normalized training sample."""

    patch: np.ndarray
    valid: np.ndarray
    distance_m: float
    source_id: str = ""

    def __post_init__(self):
        self.patch = np.asarray(self.patch, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        expected = (TEMPLATE_SIZE, TEMPLATE_SIZE)
        if self.patch.shape != expected or self.valid.shape != expected:
            raise ConfigError(
                f"annotation must be {expected}, got {self.patch.shape} / {self.valid.shape}"
            )
        if not self.distance_m > 0:
            raise ConfigError(f"annotation distance must be positive, got {self.distance_m}")


@dataclass
class DepthTemplate:
    """Masked per-pixel mean of normalized annotations."""

    values: np.ndarray
    n_train: int


@dataclass
class WeightedTemplate:
    """Template plus per-pixel reliability weights (1 / depth spread)."""

    values: np.ndarray
    weights: np.ndarray
    n_train: int


class TemplateSetKind(str, enum.Enum):
    SINGLE = "single"
    ORIENTATION = "orientation"
    DISTANCE = "distance"


@dataclass
class TemplateSet:
    """One or more weighted templates plus the rule for picking one.

    * ``single``: exactly one member, used everywhere.
    * ``orientation``: one member per appearance cluster; matching tries
      all members and keeps the best.
    * ``distance``: one member per half-open camera-distance range
      ``[lo, hi)``; the ROI distance selects the member.
    """

    kind: TemplateSetKind
    members: list[WeightedTemplate]
    ranges: Optional[list[tuple[float, float]]] = None

    def __post_init__(self):
        if self.kind == TemplateSetKind.SINGLE and len(self.members) != 1:
            raise ConfigError("single template set must have exactly one member")
        if self.kind == TemplateSetKind.ORIENTATION and len(self.members) < 2:
            raise ConfigError("orientation template set needs at least two members")
        if self.kind == TemplateSetKind.DISTANCE:
            if not self.ranges or len(self.ranges) != len(self.members):
                raise ConfigError("distance template set needs one range per member")
            validate_ranges(self.ranges)
        elif self.ranges is not None:
            raise ConfigError(f"{self.kind.value} template set must not carry ranges")

    def range_index(self, distance_m: float) -> int:
        """Index of the half-open range containing ``distance_m``."""
        if self.kind != TemplateSetKind.DISTANCE:
            raise ConfigError("range dispatch only applies to distance template sets")
        for i, (lo, hi) in enumerate(self.ranges):
            if lo <= distance_m < hi:
                return i
        raise ConfigError(f"distance {distance_m} outside configured ranges")


def validate_ranges(ranges: Sequence[tuple[float, float]]) -> None:
    """Ranges must be ordered, contiguous, start at 0 and end open."""
    if not ranges:
        raise ConfigError("at least one distance range is required")
    if ranges[0][0] != 0.0:
        raise ConfigError(f"first range must start at 0, got {ranges[0][0]}")
    for i, (lo, hi) in enumerate(ranges):
        if not hi > lo:
            raise ConfigError(f"range [{lo}, {hi}) is empty or inverted")
        if i + 1 < len(ranges) and ranges[i + 1][0] != hi:
            raise ConfigError(f"ranges must be contiguous, gap after [{lo}, {hi})")
    if not np.isinf(ranges[-1][1]):
        raise ConfigError("last range must be open-ended (hi = inf)")


def parse_range_edges(edges: Sequence[float]) -> list[tuple[float, float]]:
    """Turn ascending inner edges like ``[0, 4, 7]`` into half-open ranges
    ``[0, 4), [4, 7), [7, inf)``."""
    values = [float(v) for v in edges]
    ranges = [(values[i], values[i + 1]) for i in range(len(values) - 1)]
    ranges.append((values[-1], np.inf))
    validate_ranges(ranges)
    return ranges


def _central_slice(size: int, patch: int = REFERENCE_PATCH) -> tuple[slice, slice]:
    lo = (size - patch) // 2
    return slice(lo, lo + patch), slice(lo, lo + patch)


def normalize_annotation(
    raw_patch: np.ndarray,
    raw_mask: Optional[np.ndarray] = None,
    distance_m: Optional[float] = None,
    source_id: str = "",
) -> Annotation:
    """Resize a raw depth crop to the template grid and zero its torso depth.

    ``raw_patch`` holds meters with 0 (or the explicit ``raw_mask``)
    marking invalid pixels.  The median of the valid pixels inside the
    central reference patch is subtracted everywhere; annotations whose
    reference patch is less than 25% valid are rejected as
    :class:`TooSparse`.  When ``distance_m`` is not given it is taken from
    that same central median, which is the distance convention used for
    range bucketing.
    """
    raw = np.asarray(raw_patch, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise ConfigError(f"raw patch must be a nonempty 2-D array, got shape {raw.shape}")
    if raw_mask is None:
        mask = (raw > 0) & np.isfinite(raw)
    else:
        mask = np.asarray(raw_mask, dtype=bool)
        if mask.shape != raw.shape:
            raise ConfigError(f"mask shape {mask.shape} does not match patch {raw.shape}")
        mask = mask & np.isfinite(raw)

    patch = resize_nearest(raw, TEMPLATE_SIZE, TEMPLATE_SIZE)
    valid = resize_nearest(mask, TEMPLATE_SIZE, TEMPLATE_SIZE)

    rows, cols = _central_slice(TEMPLATE_SIZE)
    center_vals = patch[rows, cols][valid[rows, cols]]
    needed = int(MIN_REFERENCE_VALID * REFERENCE_PATCH * REFERENCE_PATCH)
    if len(center_vals) < needed:
        raise TooSparse(
            f"central reference patch has {len(center_vals)} valid pixels, needs {needed}"
        )
    reference = float(np.median(center_vals))

    normalized = np.where(valid, patch - reference, 0.0).astype(np.float32)
    if distance_m is None:
        distance_m = reference
    return Annotation(
        patch=normalized, valid=valid, distance_m=float(distance_m), source_id=source_id
    )


def _stack(samples: Sequence[Annotation]) -> tuple[np.ndarray, np.ndarray]:
    patches = np.stack([s.patch.astype(np.float64) for s in samples])
    masks = np.stack([s.valid for s in samples])
    return patches, masks


def masked_statistics(
    patches: np.ndarray, masks: np.ndarray, sigma_floor: float = SIGMA_FLOOR
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel masked mean, spread and weight of stacked samples.

    ``sigma`` is the population spread over the samples valid at each
    pixel; pixels valid in fewer than two samples have zero spread and
    therefore receive the maximum weight ``1 / sigma_floor``.
    """
    if sigma_floor <= 0:
        raise ConfigError(f"sigma floor must be positive, got {sigma_floor}")
    masks = masks.astype(np.float64)
    counts = masks.sum(axis=0)
    safe = np.maximum(counts, 1.0)
    mean = (patches * masks).sum(axis=0) / safe
    var = (masks * (patches - mean) ** 2).sum(axis=0) / safe
    sigma = np.sqrt(var)
    weights = 1.0 / np.maximum(sigma, sigma_floor)
    return mean, sigma, weights


def train_single(samples: Sequence[Annotation]) -> DepthTemplate:
    """Masked per-pixel mean template."""
    if len(samples) == 0:
        raise EmptyTrainingSet("cannot train a template from zero samples")
    patches, masks = _stack(samples)
    mean, _, _ = masked_statistics(patches, masks)
    return DepthTemplate(values=mean.astype(np.float32), n_train=len(samples))


def train_weighted(
    samples: Sequence[Annotation], sigma_floor: float = SIGMA_FLOOR
) -> WeightedTemplate:
    """Template plus reliability weights ``w = 1 / max(sigma, sigma_floor)``."""
    if len(samples) == 0:
        raise EmptyTrainingSet("cannot train a template from zero samples")
    if len(samples) == 1:
        raise SingleSample("weighted training needs at least two samples")
    patches, masks = _stack(samples)
    mean, _, weights = masked_statistics(patches, masks, sigma_floor)
    return WeightedTemplate(
        values=mean.astype(np.float32),
        weights=weights.astype(np.float32),
        n_train=len(samples),
    )


def weighted_energy(
    values: np.ndarray,
    weights: np.ndarray,
    patches: np.ndarray,
    masks: Optional[np.ndarray] = None,
) -> float:
    """Joint training energy of a (template, weights) pair.

    Per pixel: the weighted mean squared deviation from the samples plus
    the reciprocal-weight penalty that stops weights from collapsing to
    zero.  Pixels with no valid sample contribute nothing.  The closed
    form computed by :func:`train_weighted` (masked mean, inverse spread)
    is the stationary point of this energy.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if masks is None:
        masks = np.ones(patches.shape, dtype=bool)
    masks = np.asarray(masks, dtype=np.float64)
    counts = masks.sum(axis=0)
    supported = counts > 0
    safe = np.maximum(counts, 1.0)
    data = (masks * (values - patches) ** 2).sum(axis=0) / safe
    per_pixel = weights * data + 1.0 / weights
    return float(per_pixel[supported].sum())


# ---------------------------------------------------------------------------
# Clustering


def patch_distance(
    a_patch: np.ndarray, a_mask: np.ndarray, b_patch: np.ndarray, b_mask: np.ndarray
) -> float:
    """Euclidean distance over jointly valid pixels, rescaled to full area.

    The squared sum is multiplied by ``total_pixels / jointly_valid`` so a
    pair sharing few pixels is not artificially close.  Disjoint masks
    give ``inf``.
    """
    joint = a_mask & b_mask
    n = int(joint.sum())
    if n == 0:
        return float("inf")
    diff = a_patch[joint].astype(np.float64) - b_patch[joint].astype(np.float64)
    return float(np.sqrt((diff @ diff) * (a_patch.size / n)))


def _pairwise_sq_distances(flat: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """Masked squared distance matrix of flattened samples (rows)."""
    m = masks.astype(np.float64)
    am = flat * m
    sq = flat * flat * m
    joint = m @ m.T
    cross = am @ am.T
    sums = sq @ m.T
    d2 = sums + sums.T - 2.0 * cross
    total = flat.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(joint > 0, d2 * (total / joint), np.inf)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _point_to_centroid_sq(
    flat: np.ndarray, masks: np.ndarray, c_flat: np.ndarray, c_masks: np.ndarray
) -> np.ndarray:
    """(n_samples, n_centroids) masked squared distances."""
    m = masks.astype(np.float64)
    cm = c_masks.astype(np.float64)
    joint = m @ cm.T
    cross = (flat * m) @ (c_flat * cm).T
    s_sq = (flat * flat * m) @ cm.T
    c_sq = m @ (c_flat * c_flat * cm).T
    d2 = s_sq + c_sq - 2.0 * cross
    total = flat.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        d2 = np.where(joint > 0, d2 * (total / joint), np.inf)
    return np.maximum(d2, 0.0)


def kmeans_cluster(
    samples: Sequence[Annotation],
    k: int,
    seed: int = 0,
    max_iters: int = 100,
) -> list[np.ndarray]:
    """Lloyd's algorithm on flattened annotations under the masked metric.

    Centroids start from ``k`` distinct samples drawn with the seeded
    generator; empty clusters are re-seeded from the point farthest from
    its centroid, so every returned cluster is nonempty.  Results are
    deterministic for a fixed seed.
    """
    n = len(samples)
    if k < 2:
        raise ConfigError(f"k must be >= 2, got {k}")
    if n < k:
        raise TooFewSamples(f"cannot form {k} clusters from {n} samples")

    patches, masks2d = _stack(samples)
    flat = patches.reshape(n, -1)
    masks = masks2d.reshape(n, -1)

    rng = np.random.default_rng(seed)
    init = rng.choice(n, size=k, replace=False)
    c_flat = flat[init].copy()
    c_masks = masks[init].copy()

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iters):
        d2 = _point_to_centroid_sq(flat, masks, c_flat, c_masks)
        new_assign = np.argmin(d2, axis=1)

        # Re-seed empty clusters from the farthest point, one at a time.
        # Moving a point can empty its old cluster, so loop until stable.
        own = d2[np.arange(n), new_assign]
        for _ in range(n):
            counts = np.bincount(new_assign, minlength=k)
            empties = np.nonzero(counts == 0)[0]
            if len(empties) == 0:
                break
            far = int(np.argmax(own))
            new_assign[far] = empties[0]
            own[far] = -1.0  # cannot be picked again this round

        if np.array_equal(new_assign, assign):
            break
        assign = new_assign

        for c in range(k):
            members = assign == c
            mm = masks[members]
            counts = mm.sum(axis=0)
            c_masks[c] = counts > 0
            c_flat[c] = np.where(
                c_masks[c],
                (flat[members] * mm).sum(axis=0) / np.maximum(counts, 1),
                0.0,
            )

    return [np.nonzero(assign == c)[0] for c in range(k)]


def _validate_partition(n: int, clusters: Sequence[np.ndarray]) -> list[np.ndarray]:
    nonempty = [np.asarray(c, dtype=np.int64) for c in clusters if len(c) > 0]
    if len(nonempty) < 2:
        raise DegenerateClustering(f"silhouette needs >= 2 nonempty clusters, got {len(nonempty)}")
    flat = np.concatenate(nonempty)
    if len(flat) != n or len(np.unique(flat)) != n or flat.min() < 0 or flat.max() >= n:
        raise ConfigError("clusters must partition the sample indices exactly")
    return nonempty


def silhouette_from_distances(dist: np.ndarray, clusters: Sequence[np.ndarray]) -> float:
    """Mean silhouette ``(b - a) / max(a, b)`` from a distance matrix.

    ``a`` is the mean distance to the sample's own cluster (excluding
    itself), ``b`` the smallest mean distance to any other cluster.
    Singleton clusters contribute 0 for their lone member, as does the
    degenerate case ``a == b == 0``.
    """
    n = len(dist)
    groups = _validate_partition(n, clusters)
    scores = np.zeros(n)
    for gi, own in enumerate(groups):
        if len(own) == 1:
            scores[own[0]] = 0.0
            continue
        for i in own:
            a = dist[i, own].sum() / (len(own) - 1)
            b = min(dist[i, other].mean() for gj, other in enumerate(groups) if gj != gi)
            denom = max(a, b)
            scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())


def silhouette_score(samples: Sequence[Annotation], clusters: Sequence[np.ndarray]) -> float:
    """Silhouette of a clustering of annotations under the masked metric."""
    patches, masks = _stack(samples)
    flat = patches.reshape(len(samples), -1)
    d2 = _pairwise_sq_distances(flat, masks.reshape(len(samples), -1))
    return silhouette_from_distances(np.sqrt(d2), clusters)


def select_k(
    samples: Sequence[Annotation],
    k_range: Sequence[int],
    seed: int = 0,
) -> tuple[int, list[tuple[int, float]]]:
    """Cluster at every ``k`` and keep the silhouette argmax (ties: smaller k).

    Returns the winning ``k`` and the full ``(k, score)`` table for
    reporting.
    """
    n = len(samples)
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ConfigError("k_range must not be empty")
    if ks[0] < 2 or ks[-1] > n:
        raise ConfigError(f"k_range must lie within [2, {n}], got {ks}")

    patches, masks = _stack(samples)
    flat = patches.reshape(n, -1)
    dist = np.sqrt(_pairwise_sq_distances(flat, masks.reshape(n, -1)))

    table: list[tuple[int, float]] = []
    best_k, best_score = ks[0], -np.inf
    for k in ks:
        clusters = kmeans_cluster(samples, k, seed=seed)
        score = silhouette_from_distances(dist, clusters)
        table.append((k, score))
        if score > best_score:
            best_k, best_score = k, score
    return best_k, table


# ---------------------------------------------------------------------------
# Template set construction


def _weighted_from_cluster(
    samples: Sequence[Annotation], idx: np.ndarray, sigma_floor: float
) -> WeightedTemplate:
    members = [samples[i] for i in idx]
    if len(members) == 1:
        # A singleton cluster has zero spread everywhere it is valid, so the
        # closed form degenerates to the floor weight.
        only = members[0]
        return WeightedTemplate(
            values=np.where(only.valid, only.patch, 0.0).astype(np.float32),
            weights=np.full(only.patch.shape, 1.0 / sigma_floor, dtype=np.float32),
            n_train=1,
        )
    return train_weighted(members, sigma_floor)


def train_orientation_set(
    samples: Sequence[Annotation],
    k: int,
    seed: int = 0,
    sigma_floor: float = SIGMA_FLOOR,
) -> TemplateSet:
    """Cluster annotations by appearance and train one template per cluster.

    ``k = 1`` degenerates to a single weighted template over everything.
    """
    if k == 1:
        return TemplateSet(
            kind=TemplateSetKind.SINGLE, members=[train_weighted(samples, sigma_floor)]
        )
    clusters = kmeans_cluster(samples, k, seed=seed)
    members = [_weighted_from_cluster(samples, idx, sigma_floor) for idx in clusters]
    return TemplateSet(kind=TemplateSetKind.ORIENTATION, members=members)


def train_distance_set(
    samples: Sequence[Annotation],
    ranges: Sequence[tuple[float, float]],
    sigma_floor: float = SIGMA_FLOOR,
) -> TemplateSet:
    """Bucket annotations by camera distance and train one template per range."""
    ranges = [(float(lo), float(hi)) for lo, hi in ranges]
    validate_ranges(ranges)
    buckets: list[list[Annotation]] = [[] for _ in ranges]
    for sample in samples:
        for i, (lo, hi) in enumerate(ranges):
            if lo <= sample.distance_m < hi:
                buckets[i].append(sample)
                break
    members = []
    for (lo, hi), bucket in zip(ranges, buckets):
        if len(bucket) < 2:
            raise EmptyRange(
                f"distance range [{lo}, {hi}) has {len(bucket)} samples, needs >= 2"
            )
        members.append(train_weighted(bucket, sigma_floor))
    return TemplateSet(kind=TemplateSetKind.DISTANCE, members=members, ranges=ranges)


def unit_weighted(template: DepthTemplate) -> WeightedTemplate:
    """Wrap a plain mean template with unit weights (unweighted matching)."""
    return WeightedTemplate(
        values=template.values,
        weights=np.ones_like(template.values, dtype=np.float32),
        n_train=template.n_train,
    )


# ---------------------------------------------------------------------------
# Serialization

_KIND_CODES = {
    TemplateSetKind.SINGLE: 0,
    TemplateSetKind.ORIENTATION: 1,
    TemplateSetKind.DISTANCE: 2,
}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}


def save_template_set(template_set: TemplateSet, path: str | Path) -> None:
    """Write a template set as a binary container plus a JSON sidecar.

    Layout (little-endian): magic, kind byte, member count, grid size,
    range count, ``(lo, hi)`` float64 pairs, then per member ``n_train``
    and the row-major float32 value and weight grids.
    """
    path = Path(path)
    h, w = template_set.members[0].values.shape
    ranges = template_set.ranges or []
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<BHHHH", _KIND_CODES[template_set.kind], len(template_set.members), h, w, len(ranges))
    for lo, hi in ranges:
        blob += struct.pack("<dd", lo, hi)
    for member in template_set.members:
        if member.values.shape != (h, w) or member.weights.shape != (h, w):
            raise ConfigError("all members of a template set must share one grid size")
        blob += struct.pack("<I", member.n_train)
        blob += member.values.astype("<f4").tobytes(order="C")
        blob += member.weights.astype("<f4").tobytes(order="C")
    path.write_bytes(bytes(blob))

    meta = {
        "format": _MAGIC.decode(),
        "kind": template_set.kind.value,
        "members": len(template_set.members),
        "grid": [h, w],
        "ranges": [[lo, None if np.isinf(hi) else hi] for lo, hi in ranges],
        "n_train": [m.n_train for m in template_set.members],
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n"
    )


def load_template_set(path: str | Path) -> TemplateSet:
    """Read a template set container written by :func:`save_template_set`."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 9 or raw[: len(_MAGIC)] != _MAGIC:
        raise FormatError(f"{path}: not a {_MAGIC.decode()} template container")
    off = len(_MAGIC)
    kind_code, count, h, w, n_ranges = struct.unpack_from("<BHHHH", raw, off)
    off += struct.calcsize("<BHHHH")
    if kind_code not in _CODE_KINDS:
        raise FormatError(f"{path}: unknown template kind code {kind_code}")
    ranges = []
    for _ in range(n_ranges):
        lo, hi = struct.unpack_from("<dd", raw, off)
        off += 16
        ranges.append((lo, hi))
    members = []
    grid = h * w
    for _ in range(count):
        if off + 4 + 8 * grid > len(raw):
            raise FormatError(f"{path}: truncated template container")
        (n_train,) = struct.unpack_from("<I", raw, off)
        off += 4
        values = np.frombuffer(raw, dtype="<f4", count=grid, offset=off).reshape(h, w)
        off += 4 * grid
        weights = np.frombuffer(raw, dtype="<f4", count=grid, offset=off).reshape(h, w)
        off += 4 * grid
        members.append(
            WeightedTemplate(values=values.copy(), weights=weights.copy(), n_train=n_train)
        )
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes in template container")
    return TemplateSet(
        kind=_CODE_KINDS[kind_code], members=members, ranges=ranges or None
    )
