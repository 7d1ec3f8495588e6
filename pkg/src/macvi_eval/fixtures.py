"""Deterministic synthetic fixtures and perturbed predictions.

Randomness comes from :class:`Lcg`, a 64-bit linear congruential generator
with fixed constants, so a seed yields the same fixture on any platform.

Directory layout written by :func:`write_fixture_dir`::

    <root>/gt/coco.json        ground-truth boxes (COCO)
    <root>/gt/tracks.txt       ground-truth tracks (MOT CSV)
    <root>/gt/meta.json        per-frame sensor metadata
    <root>/gt/edges.json       water-edge polylines
    <root>/gt/zone/<f>.pgm     danger-zone masks (0/1)
    <root>/pred/coco.json      detections
    <root>/pred/tracks.txt     tracker output
    <root>/pred/masks/<f>.pgm  segmentation masks
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import (BBox, DetectionRecord, FrameMeta, GroundTruthRecord, OBSTACLE, SKY, WATER, SegmentationRaster,
                   TrackEntry, TrackSet, WaterEdgePolyline)
from .formats import (coco_gt_file, coco_pred_file, write_coco_json, write_mask_dir, write_meta_sidecar,
                      write_mot_csv, write_water_edges)
from .geometry import CameraModel, DangerZoneSpec, clip_span, project_danger_zone
from .seg import edge_height_field
from .strata import CAMERA_TO_UAV

LCG_A = 6364136223846793005
LCG_C = 1442695040888963407
_MASK64 = (1 << 64) - 1

MOTIONS = ("static", "pan", "tilt", "teleport")
ALTITUDE_PROFILES = ("constant", "ramp", "random")


class Lcg:
    """``state <- a*state + c (mod 2**64)``; floats take the top 53 bits."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (LCG_A * self.state + LCG_C) & _MASK64
        return self.state

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * (self.next_u64() >> 11) * 2.0 ** -53

    def randint(self, lo: int, hi: int) -> int:
        """Integer in ``[lo, hi]``."""
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)

    def gauss(self) -> float:
        # Box-Muller, cosine branch only; one normal per two uniforms
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def choice(self, seq: Sequence):
        return seq[self.randint(0, len(seq) - 1)]


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 1
    frames: int = 10
    objects: Mapping[int, int] = field(default_factory=lambda: {1: 2, 2: 2, 3: 1})
    motion: str = "static"
    altitude_profile: str = "ramp"
    altitude_range: tuple[float, float] = (5.0, 260.0)
    width: int = 640
    height: int = 480
    speed: float = 2.0          # px per frame for pan and tilt
    size_range: tuple[int, int] = (8, 40)
    rasters: bool = True        # build zone and segmentation masks
    sequence_id: str = "seq"

    def __post_init__(self):
        if self.motion not in MOTIONS:
            raise ValueError(f"motion must be one of {MOTIONS}")
        if self.altitude_profile not in ALTITUDE_PROFILES:
            raise ValueError(f"altitude_profile must be one of {ALTITUDE_PROFILES}")
        if self.frames < 1 or self.width < 16 or self.height < 16:
            raise ValueError("need at least one frame and a 16x16 image")
        if any(n < 0 for n in self.objects.values()):
            raise ValueError("object counts must be non-negative")


@dataclass
class Scenario:
    spec: ScenarioSpec
    frames: list[int]
    gts: list[GroundTruthRecord]
    tracks: TrackSet
    meta: dict[int, FrameMeta]
    edges: WaterEdgePolyline
    zone_masks: dict[int, SegmentationRaster]
    seg_masks: dict[int, SegmentationRaster]

    def boxes_by_frame(self) -> dict[int, list[BBox]]:
        out: dict[int, list[BBox]] = {f: [] for f in self.frames}
        for g in self.gts:
            out[g.frame_id].append(g.bbox)
        return out


def render_mask(boxes: Iterable[BBox], polylines, width: int, height: int, shore_band: int = 10) -> SegmentationRaster:
    """Class raster: sky, a static-obstacle band just above the water edge, water below, boxes as obstacles."""
    edge = edge_height_field(polylines, width, height)
    rows = np.arange(height)[:, None]
    arr = np.full((height, width), WATER, dtype=np.uint8)
    arr[rows < edge[None, :]] = OBSTACLE
    arr[rows < edge[None, :] - shore_band] = SKY
    for b in boxes:
        c0, r0, c1, r1 = clip_span(b, width, height)
        arr[r0:r1, c0:c1] = OBSTACLE
    return SegmentationRaster.from_array(arr)


def _altitude(spec: ScenarioSpec, k: int, rng: Lcg) -> float:
    lo, hi = spec.altitude_range
    if spec.altitude_profile == "constant":
        return lo
    if spec.altitude_profile == "ramp":
        return lo if spec.frames == 1 else lo + (hi - lo) * k / (spec.frames - 1)
    return rng.uniform(lo, hi)


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    rng = Lcg(spec.seed)
    W, H = spec.width, spec.height
    n = spec.frames
    frames = list(range(1, n + 1))

    e_left, e_right = rng.uniform(0.40, 0.50) * H, rng.uniform(0.40, 0.50) * H
    poly = [[(0.0, e_left), (float(W - 1), e_right)]]
    edges = WaterEdgePolyline({f: poly for f in frames})
    y_min = math.floor(max(e_left, e_right)) + 1

    dx, dy = {"pan": (spec.speed, 0.0), "tilt": (0.0, spec.speed)}.get(spec.motion, (0.0, 0.0))
    travel_x, travel_y = dx * (n - 1), dy * (n - 1)

    objs = []  # (track_id, class_id, w, h, x0, y0)
    tid = 0
    for cls in sorted(spec.objects):
        for _ in range(spec.objects[cls]):
            tid += 1
            w = rng.randint(*spec.size_range)
            h = rng.randint(*spec.size_range)
            x_hi, y_hi = W - w - travel_x, H - h - travel_y
            if x_hi < 0 or y_hi < y_min:
                raise ValueError(f"{spec.motion} motion over {n} frames leaves the image; lower speed or frames")
            objs.append((tid, cls, w, h, rng.uniform(0, x_hi), rng.uniform(y_min, y_hi)))

    camera = rng.choice(sorted(CAMERA_TO_UAV))
    yaw = rng.uniform(-180.0, 180.0)
    lat, lon = rng.uniform(-60.0, 60.0), rng.uniform(-170.0, 170.0)

    gts, entries, meta = [], [], {}
    ann_id = 0
    for k, f in enumerate(frames):
        for (t, cls, w, h, x0, y0) in objs:
            if spec.motion == "teleport" and k > 0:
                x, y = rng.uniform(0, W - w), rng.uniform(y_min, H - h)
            else:
                x, y = x0 + dx * k, y0 + dy * k
            b = BBox(x, y, float(w), float(h))
            ann_id += 1
            gts.append(GroundTruthRecord(f, b, cls, id=ann_id))
            entries.append(TrackEntry(f, t, b, 1.0, cls, 1.0))
        yaw = (yaw + rng.uniform(-2.0, 2.0) + 180.0) % 360.0 - 180.0
        meta[f] = FrameMeta(
            altitude=_altitude(spec, k, rng), gimbal_pitch=rng.uniform(0.0, 90.0),
            uav_roll=rng.uniform(-10.0, 10.0), uav_pitch=rng.uniform(-10.0, 10.0), uav_yaw=yaw,
            speed_x=rng.uniform(0.0, 10.0), speed_y=rng.uniform(0.0, 10.0), speed_z=rng.uniform(0.0, 2.0),
            camera_id=camera, latitude=lat, longitude=lon, time_since_start_ms=1000.0 * k / 30.0,
        )

    tracks = TrackSet(spec.sequence_id, frames, entries)
    zone_masks, seg_masks = {}, {}
    if spec.rasters:
        cam = CameraModel.from_fov(W, H, 60.0)
        zone = project_danger_zone(cam, DangerZoneSpec(camera_height=2.0))
        zone_masks = {f: zone for f in frames}
        by_f: dict[int, list[BBox]] = {f: [] for f in frames}
        for g in gts:
            by_f[g.frame_id].append(g.bbox)
        seg_masks = {f: render_mask(by_f[f], poly, W, H) for f in frames}
    return Scenario(spec, frames, gts, tracks, meta, edges, zone_masks, seg_masks)


@dataclass(frozen=True)
class PerturbationSpec:
    drop_rate: float = 0.0
    duplicate_rate: float = 0.0
    shift_sigma: float = 0.0     # per-axis standard deviation, px
    class_flip_rate: float = 0.0
    score_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("drop_rate", "duplicate_rate", "class_flip_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.shift_sigma < 0 or self.score_noise < 0:
            raise ValueError("shift_sigma and score_noise must be non-negative")


@dataclass(frozen=True)
class _Draw:
    dropped: bool
    dx: float
    dy: float
    flip: bool
    flip_pick: float
    score: float
    duplicate: bool
    dup_dx: float
    dup_dy: float


def _draws(rng: Lcg, spec: PerturbationSpec) -> _Draw:
    # a fixed number of draws per object keeps the streams aligned across rates
    u_drop, gx, gy = rng.uniform(), rng.gauss(), rng.gauss()
    u_flip, u_pick, g_score = rng.uniform(), rng.uniform(), rng.gauss()
    u_dup, gdx, gdy = rng.uniform(), rng.gauss(), rng.gauss()
    s = spec.shift_sigma
    score = min(max(1.0 - spec.score_noise * abs(g_score), 0.0), 1.0)
    return _Draw(u_drop < spec.drop_rate, s * gx, s * gy, u_flip < spec.class_flip_rate, u_pick, score,
                 u_dup < spec.duplicate_rate, gdx, gdy)


def _flipped(cls: int, class_ids: Sequence[int], pick: float) -> int:
    others = [c for c in class_ids if c != cls]
    return others[min(int(pick * len(others)), len(others) - 1)] if others else cls


def perturb(gts: Iterable[GroundTruthRecord], spec: PerturbationSpec,
            class_ids: Sequence[int] | None = None) -> list[DetectionRecord]:
    """Detections derived from copies of the non-ignored GT boxes."""
    gts = [g for g in gts if not g.ignore]
    class_ids = sorted(class_ids) if class_ids is not None else sorted({g.class_id for g in gts})
    rng = Lcg(spec.seed)
    out = []
    for g in gts:
        d = _draws(rng, spec)
        if d.dropped:
            continue
        cls = _flipped(g.class_id, class_ids, d.flip_pick) if d.flip else g.class_id
        b = g.bbox.translated(d.dx, d.dy)
        out.append(DetectionRecord(g.frame_id, b, cls, d.score))
        if d.duplicate:
            dup = b.translated(0.1 * b.w * d.dup_dx, 0.1 * b.h * d.dup_dy)
            out.append(DetectionRecord(g.frame_id, dup, cls, 0.5 * d.score))
    return out


def perturb_tracks(gt: TrackSet, spec: PerturbationSpec) -> TrackSet:
    """Tracker output from GT tracks; duplicates get fresh track ids."""
    rng = Lcg(spec.seed)
    next_id = max((e.track_id for e in gt.entries), default=0) + 1
    dup_ids: dict[int, int] = {}
    out = []
    for e in gt.entries:
        d = _draws(rng, spec)
        if d.dropped:
            continue
        b = e.bbox.translated(d.dx, d.dy)
        out.append(TrackEntry(e.frame_id, e.track_id, b, d.score, e.class_id))
        if d.duplicate:
            if e.track_id not in dup_ids:
                dup_ids[e.track_id] = next_id
                next_id += 1
            dup = b.translated(0.1 * b.w * d.dup_dx, 0.1 * b.h * d.dup_dy)
            out.append(TrackEntry(e.frame_id, dup_ids[e.track_id], dup, 0.5 * d.score, e.class_id))
    return TrackSet(gt.sequence_id, list(gt.frames), out)


def perturb_masks(scn: Scenario, spec: PerturbationSpec) -> dict[int, SegmentationRaster]:
    """Segmentation masks rendered from perturbed boxes over the exact water edge."""
    preds = perturb(scn.gts, spec)
    by_f: dict[int, list[BBox]] = {f: [] for f in scn.frames}
    for p in preds:
        by_f[p.frame_id].append(p.bbox)
    W, H = scn.spec.width, scn.spec.height
    return {f: render_mask(by_f[f], scn.edges.polylines(f), W, H) for f in scn.frames}


def write_fixture_dir(scn: Scenario, root: str | Path, spec: PerturbationSpec | None = None,
                      category_names: Mapping[int, str] | None = None) -> Path:
    root = Path(root)
    spec = spec or PerturbationSpec()
    names = dict(category_names or {c: f"class{c}" for c in sorted({g.class_id for g in scn.gts} | set(scn.spec.objects))})
    gt_dir, pred_dir = root / "gt", root / "pred"
    gt_dir.mkdir(parents=True, exist_ok=True)
    pred_dir.mkdir(parents=True, exist_ok=True)
    (gt_dir / "coco.json").write_bytes(write_coco_json(coco_gt_file(scn.gts, scn.frames, names)))
    (gt_dir / "tracks.txt").write_bytes(write_mot_csv(scn.tracks))
    (gt_dir / "meta.json").write_bytes(write_meta_sidecar(scn.meta))
    (gt_dir / "edges.json").write_bytes(write_water_edges(scn.edges))
    (pred_dir / "coco.json").write_bytes(write_coco_json(coco_pred_file(perturb(scn.gts, spec, list(names)))))
    (pred_dir / "tracks.txt").write_bytes(write_mot_csv(perturb_tracks(scn.tracks, spec)))
    if scn.spec.rasters:
        write_mask_dir(scn.zone_masks, gt_dir / "zone")
        write_mask_dir(perturb_masks(scn, spec), pred_dir / "masks")
    return root


# --- count-controlled USV detection fixture ------------------------------------------

@dataclass(frozen=True)
class UsvCountFixture:
    gts: list[GroundTruthRecord]
    preds: list[DetectionRecord]
    edges: WaterEdgePolyline
    zone_masks: dict[int, SegmentationRaster]
    frames: list[int]


def usv_count_fixture(same_class: int, cross_class: int, matched_in_zone: int, misses_in_zone: int,
                      misses_out_of_zone: int, width: int = 320, height: int = 240) -> UsvCountFixture:
    """One object per frame, built so the three USV F1 counts are known in closed form.

    ``same_class + cross_class`` frames hold a GT and an identical prediction
    (the first ``matched_in_zone`` of them inside the zone). Each miss frame
    holds a GT and a far-away prediction, so both go unmatched.
    Classes cycle over 1..3; cross-class predictions take the next class.
    """
    matched = same_class + cross_class
    if matched_in_zone > matched:
        raise ValueError("matched_in_zone exceeds the matched count")
    edge_row = height // 4
    zone_top = height // 2
    zone = np.zeros((height, width), dtype=np.uint8)
    zone[zone_top:, :] = 1
    zone_r = SegmentationRaster.from_array(zone)
    poly = [[(0.0, float(edge_row)), (float(width - 1), float(edge_row))]]
    size = 20.0
    in_y, out_y = float(zone_top + 10), float(edge_row + 10)
    left, right = 10.0, float(width - 30)

    gts, preds, frames = [], [], []
    f = 0
    for k in range(matched):
        f += 1
        cls = 1 + k % 3
        y = in_y if k < matched_in_zone else out_y
        b = BBox(left, y, size, size)
        gts.append(GroundTruthRecord(f, b, cls, id=f))
        preds.append(DetectionRecord(f, b, cls if k < same_class else 1 + cls % 3, 1.0))
        frames.append(f)
    for k in range(misses_in_zone + misses_out_of_zone):
        f += 1
        cls = 1 + k % 3
        y = in_y if k < misses_in_zone else out_y
        gts.append(GroundTruthRecord(f, BBox(left, y, size, size), cls, id=f))
        preds.append(DetectionRecord(f, BBox(right, y, size, size), cls, 0.5))
        frames.append(f)
    return UsvCountFixture(gts, preds, WaterEdgePolyline({g: poly for g in frames}),
                           {g: zone_r for g in frames}, frames)


def winning_row_fixture() -> UsvCountFixture:
    """Counts giving component F1 scores 0.265, 0.400 and 72/74 (about 0.973).

    200 GTs and 200 predictions: 2*53/400 = 0.265 class-aware, 2*80/400 =
    0.400 class-agnostic; in the zone 37 GTs and 37 predictions with 36 matches.
    """
    return usv_count_fixture(same_class=53, cross_class=27, matched_in_zone=36,
                             misses_in_zone=1, misses_out_of_zone=119)
