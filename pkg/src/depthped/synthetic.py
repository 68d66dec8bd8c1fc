"""Synthetic RGB-D street scenes with exact ground truth.

Scenes hold a flat ground plane, upper-body shapes (a torso ellipsoid
topped by a head sphere) and box-shaped distractors, ray-traced through
the pinhole model into a depth map.  Depth noise grows quadratically with
distance (sigma = base + quad * z^2) to mimic stereo range error; RGB
gets striped clothing on persons and flat tones on boxes so an appearance
model has something to separate.

Ground-truth boxes are the exact pixel hulls of each person's visible
surface before noise is applied; noise perturbs range along the viewing
ray and therefore never moves a pixel between objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Optional, Sequence

import numpy as np

from .errors import SceneSpecError
from .geometry import CameraIntrinsics, DepthFrame
from .templates import Annotation, normalize_annotation

VGA_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5, width=640, height=480)

_MIN_RANGE = 0.3  # objects closer than this to the camera are rejected


@dataclass(frozen=True)
class PersonSpec:
    """An upper body standing on the ground: torso ellipsoid + head sphere.

    ``hooded`` persons carry torso colors on the head (no skin tone) and,
    together with low ``contrast``, are the hard cases for an appearance
    model.
    """

    distance_m: float
    lateral_m: float = 0.0
    orientation_deg: float = 0.0
    stature_m: float = 1.70
    upper_body_height_m: float = 0.80
    shoulder_width_m: float = 0.52
    torso_depth_m: float = 0.28
    head_radius_m: float = 0.11
    texture_seed: int = 0
    contrast: float = 1.0
    hooded: bool = False


@dataclass(frozen=True)
class BoxSpec:
    """A street-clutter distractor standing in for trash cans, strollers,
    parcels.

    The base shape is a floating box; ``stacked`` adds a narrower block on
    top (head-and-shoulders silhouette), ``rounded`` swaps the body for an
    ellipsoid (trash-can-like, the depth-ambiguous case), and ``striped``
    wraps it in fabric-like stripes (the appearance-ambiguous case).
    ``skin_top`` paints the stacked block in skin tones, turning the
    distractor into a dressed mannequin that fools appearance cues too.
    """

    distance_m: float
    lateral_m: float = 0.0
    width_m: float = 0.6
    height_m: float = 0.5
    depth_m: float = 0.5
    top_height_m: float = 1.5
    orientation_deg: float = 0.0
    stacked: bool = False
    rounded: bool = False
    striped: bool = False
    skin_top: bool = False
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    """Full description of one renderable frame."""

    intrinsics: CameraIntrinsics = VGA_INTRINSICS
    camera_height_m: float = 1.30
    ground_extent_m: float = 14.0
    max_depth_m: float = 16.0
    noise_base_m: float = 0.005
    noise_quadratic: float = 0.002
    persons: tuple[PersonSpec, ...] = ()
    boxes: tuple[BoxSpec, ...] = ()

    def __post_init__(self):
        if self.camera_height_m <= 0:
            raise SceneSpecError(f"camera height must be positive, got {self.camera_height_m}")
        if self.ground_extent_m <= 0 or self.max_depth_m <= 0:
            raise SceneSpecError("ground extent and max depth must be positive")
        if self.noise_base_m < 0 or self.noise_quadratic < 0:
            raise SceneSpecError("noise parameters must be nonnegative")
        for p in self.persons:
            if p.distance_m < _MIN_RANGE:
                raise SceneSpecError(f"person at {p.distance_m} m is inside the camera")
            if min(p.stature_m, p.upper_body_height_m, p.shoulder_width_m,
                   p.torso_depth_m, p.head_radius_m) <= 0:
                raise SceneSpecError("person dimensions must be positive")
            if p.upper_body_height_m >= p.stature_m:
                raise SceneSpecError("upper body cannot be taller than the person")
        for b in self.boxes:
            if b.distance_m < _MIN_RANGE:
                raise SceneSpecError(f"box at {b.distance_m} m is inside the camera")
            if min(b.width_m, b.height_m, b.depth_m) <= 0:
                raise SceneSpecError("box dimensions must be positive")
            if b.top_height_m <= b.height_m * 0.5:
                raise SceneSpecError("box must sit above the ground")


@dataclass
class RenderedScene:
    """Frame plus per-object pixel masks (post z-buffer, pre-noise).

    ``person_visibility`` is the fraction of a person's projected pixels
    that survived the z-buffer; partially hidden persons can be turned
    into ignore regions by :meth:`person_boxes`.
    """

    frame: DepthFrame
    person_masks: list[np.ndarray]
    box_masks: list[np.ndarray]
    person_visibility: list[float]

    def person_hulls(self) -> list[tuple[int, int, int, int]]:
        """Pixel-hull bbox of every visible person (skips empty masks)."""
        return [hull for hull, _ in self.person_boxes(min_visibility=0.0)]

    def person_boxes(
        self, min_visibility: float = 0.4
    ) -> list[tuple[tuple[int, int, int, int], bool]]:
        """(pixel hull, ignore flag) per visible person.

        Persons with less than ``min_visibility`` of their projection
        visible are flagged; the usual evaluation protocol excuses both
        hits and misses on such boxes.
        """
        boxes = []
        for mask, visibility in zip(self.person_masks, self.person_visibility):
            ys, xs = np.nonzero(mask)
            if len(xs) == 0:
                continue
            hull = (
                int(xs.min()), int(ys.min()),
                int(xs.max() - xs.min() + 1), int(ys.max() - ys.min() + 1),
            )
            boxes.append((hull, visibility < min_visibility))
        return boxes


def _rotation_y(deg: float) -> np.ndarray:
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _pixel_region(
    intr: CameraIntrinsics, center: np.ndarray, radius: float
) -> Optional[tuple[slice, slice]]:
    """Conservative pixel bbox of a sphere bounding one primitive."""
    z_near = center[2] - radius
    if z_near <= _MIN_RANGE / 2:
        raise SceneSpecError(f"object at z={center[2]:.2f} m pierces the camera")
    u0 = int(np.floor((center[0] - radius) * intr.fx / z_near + intr.cx)) - 1
    u1 = int(np.ceil((center[0] + radius) * intr.fx / z_near + intr.cx)) + 2
    v0 = int(np.floor((center[1] - radius) * intr.fy / z_near + intr.cy)) - 1
    v1 = int(np.ceil((center[1] + radius) * intr.fy / z_near + intr.cy)) + 2
    u0, u1 = max(0, u0), min(intr.width, u1)
    v0, v1 = max(0, v0), min(intr.height, v1)
    if u1 <= u0 or v1 <= v0:
        return None
    return slice(v0, v1), slice(u0, u1)


def _ray_dirs(intr: CameraIntrinsics, region: tuple[slice, slice]) -> np.ndarray:
    rows, cols = region
    us = np.arange(cols.start, cols.stop, dtype=np.float64)
    vs = np.arange(rows.start, rows.stop, dtype=np.float64)
    dx = (us - intr.cx) / intr.fx
    dy = (vs - intr.cy) / intr.fy
    d = np.empty((len(vs), len(us), 3))
    d[..., 0] = dx[None, :]
    d[..., 1] = dy[:, None]
    d[..., 2] = 1.0
    return d


def _trace_ellipsoid(
    intr: CameraIntrinsics, center: np.ndarray, semi: np.ndarray, rot_deg: float,
    depth: np.ndarray, ids: np.ndarray, obj_id: int,
    full_mask: Optional[np.ndarray] = None,
) -> None:
    """Ray-trace one ellipsoid into the depth/id buffers (nearest wins).

    ``full_mask`` collects every pixel the shape projects onto, before
    occlusion, for visibility accounting.
    """
    region = _pixel_region(intr, center, float(semi.max()))
    if region is None:
        return
    rot = _rotation_y(rot_deg)
    d = _ray_dirs(intr, region)
    m = (d @ rot) / semi
    q = (-center @ rot) / semi
    a = np.einsum("...i,...i->...", m, m)
    b = 2.0 * (m @ q)
    c = float(q @ q) - 1.0
    disc = b * b - 4.0 * a * c
    hit = disc >= 0.0
    t = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * a), np.inf)
    hit &= t > _MIN_RANGE
    if full_mask is not None:
        full_mask[region] |= hit
    sub_d = depth[region]
    closer = hit & (t < sub_d)
    sub_d[closer] = t[closer]
    depth[region] = sub_d
    sub_i = ids[region]
    sub_i[closer] = obj_id
    ids[region] = sub_i


def _trace_box(
    intr: CameraIntrinsics, center: np.ndarray, half: np.ndarray, rot_deg: float,
    depth: np.ndarray, ids: np.ndarray, obj_id: int,
) -> None:
    """Ray-trace one oriented box via the slab method."""
    region = _pixel_region(intr, center, float(np.linalg.norm(half)))
    if region is None:
        return
    rot = _rotation_y(rot_deg)
    d = _ray_dirs(intr, region)
    m = d @ rot
    q = center @ rot
    t_lo = np.full(d.shape[:2], -np.inf)
    t_hi = np.full(d.shape[:2], np.inf)
    ok = np.ones(d.shape[:2], dtype=bool)
    for i in range(3):
        mi = m[..., i]
        parallel = np.abs(mi) < 1e-12
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (q[i] - half[i]) / mi
            t2 = (q[i] + half[i]) / mi
        lo = np.minimum(t1, t2)
        hi = np.maximum(t1, t2)
        t_lo = np.where(parallel, t_lo, np.maximum(t_lo, lo))
        t_hi = np.where(parallel, t_hi, np.minimum(t_hi, hi))
        ok &= ~parallel | (np.abs(q[i]) <= half[i])
    hit = ok & (t_lo <= t_hi) & (t_lo > _MIN_RANGE)
    sub_d = depth[region]
    closer = hit & (t_lo < sub_d)
    sub_d[closer] = t_lo[closer]
    depth[region] = sub_d
    sub_i = ids[region]
    sub_i[closer] = obj_id
    ids[region] = sub_i


def _person_parts(spec: PersonSpec, camera_height: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """(center, semi-axes) of the torso and head in camera coordinates."""
    head_center_h = spec.stature_m - spec.head_radius_m
    torso_top_h = spec.stature_m - 2.0 * spec.head_radius_m + 0.02
    torso_bottom_h = spec.stature_m - spec.upper_body_height_m
    torso_center_h = 0.5 * (torso_top_h + torso_bottom_h)
    torso_semi = np.array(
        [spec.shoulder_width_m / 2.0, (torso_top_h - torso_bottom_h) / 2.0, spec.torso_depth_m / 2.0]
    )
    head_semi = np.full(3, spec.head_radius_m)
    def cam(h: float) -> np.ndarray:
        return np.array([spec.lateral_m, camera_height - h, spec.distance_m])
    return [(cam(torso_center_h), torso_semi), (cam(head_center_h), head_semi)]


def _box_parts(spec: BoxSpec) -> list[tuple[bool, float, np.ndarray]]:
    """(is_rounded, center height, half extents) per distractor part."""
    parts = []
    main_h = spec.height_m if not spec.stacked else spec.height_m * 0.72
    main_center_h = spec.top_height_m - spec.height_m + main_h / 2.0
    parts.append(
        (spec.rounded, main_center_h,
         np.array([spec.width_m / 2.0, main_h / 2.0, spec.depth_m / 2.0]))
    )
    if spec.stacked:
        top_h = spec.height_m - main_h
        parts.append(
            (spec.rounded, spec.top_height_m - top_h / 2.0,
             np.array([spec.width_m * 0.22, top_h / 2.0, spec.depth_m * 0.4]))
        )
    return parts


def _stripe_colors(
    rng: np.random.Generator, contrast: float
) -> tuple[np.ndarray, np.ndarray, float]:
    base = rng.integers(60, 170, size=3).astype(np.float64)
    alt = np.clip(base + contrast * rng.choice([-1.0, 1.0]) * (40 + rng.integers(0, 40)), 0, 255)
    period = 0.06 + float(rng.random()) * 0.10  # stripe period in meters
    return base, alt, period


def _paint_stripes(
    rgb: np.ndarray, mask: np.ndarray, depth: np.ndarray,
    intr: CameraIntrinsics, camera_height: float,
    base: np.ndarray, alt: np.ndarray, period: float, rng: np.random.Generator,
) -> None:
    """Horizontal world-anchored bands, so stripe width scales with range."""
    ys, xs = np.nonzero(mask)
    if not len(ys):
        return
    z = depth[ys, xs]
    world_h = camera_height - (ys - intr.cy) / intr.fy * z
    stripe = np.floor(world_h / period).astype(np.int64) % 2
    colors = np.where(stripe[:, None] == 0, base[None, :], alt[None, :])
    rgb[ys, xs] = colors + rng.normal(0.0, 4.0, size=(len(ys), 3))


def _texture_person(
    rgb: np.ndarray, mask_torso: np.ndarray, mask_head: np.ndarray,
    depth: np.ndarray, spec: PersonSpec, intr: CameraIntrinsics, camera_height: float,
) -> None:
    """Striped shirt plus a plain head (skin, or shirt colors when hooded)."""
    rng = np.random.default_rng(spec.texture_seed)
    base, alt, period = _stripe_colors(rng, spec.contrast)
    _paint_stripes(rgb, mask_torso, depth, intr, camera_height, base, alt, period, rng)

    ys, xs = np.nonzero(mask_head)
    if len(ys):
        if spec.hooded:
            head = base + rng.normal(0, 4, size=3)
        else:
            head = np.array([196.0, 168.0, 144.0]) + rng.normal(0, 6, size=3)
        rgb[ys, xs] = head[None, :] + rng.normal(0.0, 4.0, size=(len(ys), 3))


def _texture_box(
    rgb: np.ndarray, mask: np.ndarray, depth: np.ndarray,
    spec: BoxSpec, intr: CameraIntrinsics, camera_height: float,
) -> None:
    rng = np.random.default_rng(spec.texture_seed)
    if spec.striped:
        base, alt, period = _stripe_colors(rng, float(rng.uniform(0.5, 1.2)))
        _paint_stripes(rgb, mask, depth, intr, camera_height, base, alt, period, rng)
        if spec.stacked:
            # Plain lid on the stacked block, like a head over a shirt; a
            # mannequin gets skin tones there instead.
            lid_tone = base
            if spec.skin_top:
                lid_tone = np.array([196.0, 168.0, 144.0]) + rng.normal(0, 6, size=3)
            ys, xs = np.nonzero(mask)
            if len(ys):
                z = depth[ys, xs]
                world_h = camera_height - (ys - intr.cy) / intr.fy * z
                lid = world_h > spec.top_height_m - 0.28 * spec.height_m
                if lid.any():
                    rgb[ys[lid], xs[lid]] = lid_tone[None, :] + rng.normal(
                        0.0, 4.0, size=(int(lid.sum()), 3)
                    )
        return
    tone = rng.integers(70, 180, size=3).astype(np.float64)
    ys, xs = np.nonzero(mask)
    if len(ys):
        rgb[ys, xs] = tone[None, :] + rng.normal(0.0, 3.0, size=(len(ys), 3))


def generate_synthetic_scene(
    spec: SceneSpec, seed: int = 0, frame_id: int = 0
) -> RenderedScene:
    """Render one frame deterministically for (spec, seed)."""
    intr = spec.intrinsics
    h, w = intr.height, intr.width
    depth = np.full((h, w), np.inf)
    ids = np.full((h, w), -1, dtype=np.int16)

    # Ground: rows below the horizon out to the configured extent.
    vs = np.arange(h, dtype=np.float64)
    dy = (vs - intr.cy) / intr.fy
    with np.errstate(divide="ignore"):
        gz = np.where(dy > 1e-9, spec.camera_height_m / dy, np.inf)
    ground_rows = (gz > 0) & (gz <= spec.ground_extent_m)
    depth[ground_rows, :] = gz[ground_rows, None]
    ids[ground_rows, :] = 0

    # Objects: persons get ids 1..P (torso) and 1000+i (head, same person),
    # boxes get 2000+i.  Heads are traced separately so skin can be textured.
    person_full_masks = []
    for i, person in enumerate(spec.persons):
        full = np.zeros((h, w), dtype=bool)
        (torso_c, torso_s), (head_c, head_s) = _person_parts(person, spec.camera_height_m)
        _trace_ellipsoid(intr, torso_c, torso_s, person.orientation_deg, depth, ids, 1 + i, full)
        _trace_ellipsoid(intr, head_c, head_s, person.orientation_deg, depth, ids, 1000 + i, full)
        person_full_masks.append(full)
    for i, box in enumerate(spec.boxes):
        for is_rounded, center_h, half in _box_parts(box):
            center = np.array([box.lateral_m, spec.camera_height_m - center_h, box.distance_m])
            if is_rounded:
                _trace_ellipsoid(intr, center, half, box.orientation_deg, depth, ids, 2000 + i)
            else:
                _trace_box(intr, center, half, box.orientation_deg, depth, ids, 2000 + i)

    person_masks = [
        (ids == 1 + i) | (ids == 1000 + i) for i in range(len(spec.persons))
    ]
    person_visibility = [
        float(mask.sum()) / max(int(full.sum()), 1)
        for mask, full in zip(person_masks, person_full_masks)
    ]
    box_masks = [ids == 2000 + i for i in range(len(spec.boxes))]

    # RGB: sky default, ground gray, then object textures.
    rng = np.random.default_rng(seed)
    rgb = np.empty((h, w, 3))
    rgb[:] = np.array([178.0, 184.0, 194.0])
    rgb += rng.normal(0.0, 2.0, size=(h, w, 1))
    gmask = ids == 0
    rgb[gmask] = np.array([112.0, 108.0, 102.0]) + rng.normal(
        0.0, 5.0, size=(int(gmask.sum()), 3)
    )
    for i, person in enumerate(spec.persons):
        _texture_person(rgb, ids == 1 + i, ids == 1000 + i, depth, person, intr, spec.camera_height_m)
    for i, box in enumerate(spec.boxes):
        _texture_box(rgb, box_masks[i], depth, box, intr, spec.camera_height_m)
    rgb = np.clip(rgb, 0.0, 255.0).astype(np.uint8)

    # Range noise along the ray, then sensor cutoff.
    valid = ids >= 0
    sigma = spec.noise_base_m + spec.noise_quadratic * depth[valid] ** 2
    noisy = depth.copy()
    noisy[valid] = depth[valid] + rng.standard_normal(int(valid.sum())) * sigma
    noisy[~valid] = 0.0
    noisy[noisy > spec.max_depth_m] = 0.0
    noisy[noisy < 0.0] = 0.0

    frame = DepthFrame(depth=noisy.astype(np.float32), frame_id=frame_id, rgb=rgb)
    return RenderedScene(
        frame=frame,
        person_masks=person_masks,
        box_masks=box_masks,
        person_visibility=person_visibility,
    )


# ---------------------------------------------------------------------------
# Scene sampling


@dataclass(frozen=True)
class SceneSampler:
    """Distribution over scenes; drawing with a seeded generator is
    deterministic.  The default draws empty scenes (ground only)."""

    intrinsics: CameraIntrinsics = VGA_INTRINSICS
    camera_height_m: float = 1.30
    ground_extent_m: float = 14.0
    max_depth_m: float = 16.0
    noise_base_m: float = 0.005
    noise_quadratic: float = 0.002
    person_count: tuple[int, int] = (0, 0)
    person_distance_m: tuple[float, float] = (2.0, 10.0)
    orientation_deg: tuple[float, float] = (0.0, 360.0)
    orientation_modes_deg: Optional[tuple[float, ...]] = None
    orientation_jitter_deg: float = 6.0
    contrast: tuple[float, float] = (0.15, 1.3)
    hooded_fraction: float = 0.2
    hooded_distance_m: Optional[tuple[float, float]] = None
    box_count_weights: tuple[float, ...] = (1.0,)
    box_distance_m: tuple[float, float] = (2.0, 9.0)
    stacked_box_fraction: float = 0.35
    rounded_box_fraction: float = 0.3
    striped_box_fraction: float = 0.25
    mannequin_box_fraction: float = 0.0
    mannequin_skin_fraction: float = 1.0
    mannequin_distance_m: Optional[tuple[float, float]] = None
    max_image_overlap: float = 0.02
    min_world_gap_m: float = 0.8

    def _sample_orientation(self, rng: np.random.Generator) -> float:
        if self.orientation_modes_deg:
            mode = self.orientation_modes_deg[int(rng.integers(len(self.orientation_modes_deg)))]
            return float(mode + rng.normal(0.0, self.orientation_jitter_deg))
        lo, hi = self.orientation_deg
        return float(rng.uniform(lo, hi))

    def _lateral_bound(self, z: float) -> float:
        intr = self.intrinsics
        half_frustum = z * min(intr.cx, intr.width - 1 - intr.cx) / intr.fx
        return max(0.3, min(0.55 * z, half_frustum - 0.35))

    def _rough_bbox(self, x: float, z: float, width: float, top: float, bottom: float):
        intr = self.intrinsics
        u0 = (x - width / 2) * intr.fx / z + intr.cx
        u1 = (x + width / 2) * intr.fx / z + intr.cx
        v0 = (self.camera_height_m - top) * intr.fy / z + intr.cy
        v1 = (self.camera_height_m - bottom) * intr.fy / z + intr.cy
        return (u0, v0, u1 - u0, v1 - v0)

    def sample(self, rng: np.random.Generator) -> SceneSpec:
        from .detector import bbox_iou  # local import: avoids a hard dependency cycle

        placed_bboxes: list[tuple[float, float, float, float]] = []
        placed_xz: list[tuple[float, float]] = []

        def clashes(bbox, x, z):
            if any(bbox_iou(bbox, other) > self.max_image_overlap for other in placed_bboxes):
                return True
            return any(
                math.hypot(x - px, z - pz) < self.min_world_gap_m for px, pz in placed_xz
            )

        persons: list[PersonSpec] = []
        n_persons = int(rng.integers(self.person_count[0], self.person_count[1] + 1))
        for _ in range(n_persons):
            for _attempt in range(40):
                hooded = bool(rng.random() < self.hooded_fraction)
                z_range = self.person_distance_m
                if hooded and self.hooded_distance_m is not None:
                    z_range = self.hooded_distance_m
                z = float(rng.uniform(*z_range))
                bound = self._lateral_bound(z)
                x = float(rng.uniform(-bound, bound))
                spec = PersonSpec(
                    distance_m=z,
                    lateral_m=x,
                    orientation_deg=self._sample_orientation(rng),
                    contrast=float(rng.uniform(*self.contrast)),
                    hooded=hooded,
                    texture_seed=int(rng.integers(0, 2**31 - 1)),
                )
                bbox = self._rough_bbox(
                    x, z, spec.shoulder_width_m, spec.stature_m,
                    spec.stature_m - spec.upper_body_height_m,
                )
                if not clashes(bbox, x, z):
                    placed_bboxes.append(bbox)
                    placed_xz.append((x, z))
                    persons.append(spec)
                    break

        boxes: list[BoxSpec] = []
        weights = np.asarray(self.box_count_weights, dtype=np.float64)
        n_boxes = int(rng.choice(len(weights), p=weights / weights.sum()))
        for _ in range(n_boxes):
            for _attempt in range(40):
                mannequin = bool(rng.random() < self.mannequin_box_fraction)
                z_range = self.box_distance_m
                if mannequin and self.mannequin_distance_m is not None:
                    z_range = self.mannequin_distance_m
                z = float(rng.uniform(*z_range))
                bound = self._lateral_bound(z)
                x = float(rng.uniform(-bound, bound))
                if mannequin:
                    # Dressed mannequin: person-sized ellipsoid body with a
                    # stacked head block, skin-toned for a dressed one.
                    spec = BoxSpec(
                        distance_m=z,
                        lateral_m=x,
                        width_m=float(rng.uniform(0.48, 0.56)),
                        height_m=float(rng.uniform(0.72, 0.82)),
                        depth_m=float(rng.uniform(0.26, 0.34)),
                        top_height_m=float(rng.uniform(1.55, 1.75)),
                        orientation_deg=float(rng.uniform(-25.0, 25.0)),
                        stacked=True,
                        rounded=True,
                        striped=True,
                        skin_top=bool(rng.random() < self.mannequin_skin_fraction),
                        texture_seed=int(rng.integers(0, 2**31 - 1)),
                    )
                else:
                    stacked = bool(rng.random() < self.stacked_box_fraction)
                    rounded = bool(rng.random() < self.rounded_box_fraction)
                    striped = bool(rng.random() < self.striped_box_fraction)
                    # Rounded clutter runs wider than a torso so its depth
                    # silhouette stays distinguishable from the mannequins.
                    width = (float(rng.uniform(0.66, 0.95)) if rounded
                             else float(rng.uniform(0.42, 0.7)))
                    height = float(rng.uniform(0.5, 0.85)) if stacked else float(rng.uniform(0.4, 0.65))
                    spec = BoxSpec(
                        distance_m=z,
                        lateral_m=x,
                        width_m=width,
                        height_m=height,
                        depth_m=float(rng.uniform(0.35, 0.6)),
                        top_height_m=float(rng.uniform(1.25, 1.75)),
                        orientation_deg=float(rng.uniform(-25.0, 25.0)),
                        stacked=stacked,
                        rounded=rounded,
                        striped=striped,
                        texture_seed=int(rng.integers(0, 2**31 - 1)),
                    )
                bbox = self._rough_bbox(x, z, spec.width_m, spec.top_height_m,
                                        spec.top_height_m - spec.height_m)
                if not clashes(bbox, x, z):
                    placed_bboxes.append(bbox)
                    placed_xz.append((x, z))
                    boxes.append(spec)
                    break

        return SceneSpec(
            intrinsics=self.intrinsics,
            camera_height_m=self.camera_height_m,
            ground_extent_m=self.ground_extent_m,
            max_depth_m=self.max_depth_m,
            noise_base_m=self.noise_base_m,
            noise_quadratic=self.noise_quadratic,
            persons=tuple(persons),
            boxes=tuple(boxes),
        )


def sampler_from_dict(data: dict) -> SceneSampler:
    """Build a sampler from a parsed JSON scene description (strict keys).

    An empty document yields the default sampler: ground-plane-only
    frames with zero ground-truth boxes.
    """
    known = {f.name for f in fields(SceneSampler)}
    unknown = set(data) - known
    if unknown:
        raise SceneSpecError(f"unknown scene keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key == "intrinsics":
            kwargs[key] = CameraIntrinsics(**value)
        elif key == "orientation_modes_deg" and value is not None:
            kwargs[key] = tuple(float(v) for v in value)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return SceneSampler(**kwargs)
    except TypeError as err:
        raise SceneSpecError(f"bad scene description: {err}") from None


def sample_frames(
    sampler: SceneSampler, n_frames: int, seed: int = 0
) -> list[RenderedScene]:
    """Render ``n_frames`` independent scenes; frame ``i`` depends only on
    (sampler, seed, i)."""
    scenes = []
    for i in range(n_frames):
        rng = np.random.default_rng((seed, i))
        spec = sampler.sample(rng)
        scenes.append(generate_synthetic_scene(spec, seed=(seed * 1_000_003 + i) % (2**63), frame_id=i))
    return scenes


def render_annotation_crops(
    n: int,
    seed: int = 0,
    distance_m: tuple[float, float] = (2.0, 10.0),
    orientation_deg: tuple[float, float] = (0.0, 360.0),
    orientation_modes_deg: Optional[Sequence[float]] = None,
    orientation_jitter_deg: float = 6.0,
    noise_base_m: float = 0.005,
    noise_quadratic: float = 0.002,
    sampler: Optional[SceneSampler] = None,
) -> list[tuple[np.ndarray, str]]:
    """Render single-person scenes and cut raw training crops from them.

    Each crop is the noisy depth inside the person's pixel hull, exactly
    what a human annotator would mark on recorded frames.  With
    ``orientation_modes_deg`` the orientations cluster around the given
    headings, which is how planted-mode clustering sets are produced.
    """
    base = sampler or SceneSampler()
    base = replace(
        base,
        person_count=(1, 1),
        person_distance_m=distance_m,
        orientation_deg=orientation_deg,
        orientation_modes_deg=tuple(orientation_modes_deg) if orientation_modes_deg else None,
        orientation_jitter_deg=orientation_jitter_deg,
        noise_base_m=noise_base_m,
        noise_quadratic=noise_quadratic,
        box_count_weights=(1.0,),
    )
    crops: list[tuple[np.ndarray, str]] = []
    i = 0
    guard = 0
    while len(crops) < n:
        rng = np.random.default_rng((seed, 7_777, i))
        spec = base.sample(rng)
        scene = generate_synthetic_scene(spec, seed=(seed * 2_000_003 + i) % (2**63), frame_id=i)
        hulls = scene.person_hulls()
        i += 1
        guard += 1
        if guard > 4 * n + 100:
            raise SceneSpecError("annotation rendering keeps producing empty scenes")
        if not hulls:
            continue
        x, y, w, h = hulls[0]
        crop = scene.frame.depth[y : y + h, x : x + w]
        crops.append((crop, f"synthetic-{seed}-{i - 1}"))
    return crops


def render_annotations(n: int, seed: int = 0, **kwargs) -> list[Annotation]:
    """Normalized counterpart of :func:`render_annotation_crops`."""
    return [
        normalize_annotation(crop, source_id=source_id)
        for crop, source_id in render_annotation_crops(n, seed, **kwargs)
    ]
