"""USV obstacle-segmentation track.

Water-edge accuracy/robustness from per-column transitions, coverage-based
dynamic obstacle detection with connected-component false positives, the
danger-zone split and obstacle-size binning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .core import (BBox, EvalError, OBSTACLE, WATER, SegmentationRaster, WaterEdgePolyline,
                   round_half_up)
from .geometry import clip_span, in_zone_fraction

ZONE_MEMBERSHIP = 0.5


class EmptyEdge(EvalError):
    pass


class DimensionMismatch(EvalError):
    pass


class TooFewObstacles(EvalError):
    pass


@dataclass(frozen=True)
class EdgeMetricConfig:
    theta_w: float = 20.0

    def __post_init__(self):
        if self.theta_w <= 0:
            raise ValueError("theta_w must be positive")


@dataclass(frozen=True)
class SegDetectionConfig:
    coverage_threshold: float = 0.5
    fp_connectivity: int = 8
    fp_min_area: int = 25

    def __post_init__(self):
        if not 0 < self.coverage_threshold <= 1:
            raise ValueError("coverage_threshold must lie in (0, 1]")
        if self.fp_connectivity not in (4, 8):
            raise ValueError("fp_connectivity must be 4 or 8")


def precision_recall_f1(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    """Pr, Re, F1 from counts. An empty denominator scores 1 only when nothing was missed or invented."""
    pr = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    re = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
    return pr, re, f1


def avg_score(f1: float, f1_danger: float) -> float:
    """Leaderboard score: mean of the overall and danger-zone F1 (unit preserving)."""
    return (f1 + f1_danger) / 2


def _as_array(r) -> np.ndarray:
    return r.to_array() if isinstance(r, SegmentationRaster) else np.asarray(r)


def rasterize_polyline(polyline: Sequence[tuple[float, float]], width: int) -> dict[int, int]:
    """Column -> edge row for one polyline, sampled at integer columns, rows rounded half up."""
    out: dict[int, int] = {}
    pts = [(float(x), float(y)) for x, y in polyline]
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        lo, hi = min(x0, x1), max(x0, x1)
        for c in range(max(0, math.ceil(lo)), min(width - 1, math.floor(hi)) + 1):
            if c in out:
                continue
            y = y0 if x1 == x0 else y0 + (y1 - y0) * (c - x0) / (x1 - x0)
            out[c] = round_half_up(y)
    return out


def edge_pixels(polylines: Iterable, width: int) -> list[tuple[int, int]]:
    """All (column, row) GT water-edge pixels of a frame."""
    pix = []
    for pl in polylines:
        pix.extend(sorted(rasterize_polyline(pl, width).items()))
    return pix


def edge_height_field(polylines: Iterable, width: int, height: int) -> np.ndarray:
    """Per column, the lowest GT edge row; columns without an edge are entirely above it."""
    field_ = np.full(width, -1, dtype=int)
    for pl in polylines:
        for c, r in rasterize_polyline(pl, width).items():
            field_[c] = max(field_[c], r)
    field_[field_ < 0] = height
    return field_


@dataclass
class EdgeResult:
    sum_sq: float = 0.0
    n_detected: int = 0
    n_within: int = 0
    n_total: int = 0
    theta_w: float = 20.0

    @property
    def mu_A(self) -> float:
        return math.sqrt(self.sum_sq / self.n_detected) if self.n_detected else math.nan

    @property
    def mu_R(self) -> float:
        return 100.0 * self.n_within / self.n_total if self.n_total else math.nan

    def __iter__(self):
        yield self.mu_A
        yield self.mu_R

    def __add__(self, other: "EdgeResult") -> "EdgeResult":
        return EdgeResult(self.sum_sq + other.sum_sq, self.n_detected + other.n_detected,
                          self.n_within + other.n_within, self.n_total + other.n_total, self.theta_w)


def water_edge_metrics(pred: SegmentationRaster | np.ndarray, gt_edge: Iterable,
                       cfg: EdgeMetricConfig | None = None) -> EdgeResult:
    """Vertical distance from each GT edge pixel to the nearest water/non-water transition.

    A transition at boundary ``k`` separates rows ``k-1`` and ``k``; an edge at
    row ``e`` means ``e`` is the first water row, so a perfect mask has distance 0.
    """
    cfg = cfg or EdgeMetricConfig()
    arr = _as_array(pred)
    h, w = arr.shape
    pixels = edge_pixels(gt_edge, w)
    if not pixels:
        raise EmptyEdge("frame has no ground-truth water-edge pixels")
    water = arr == WATER
    trans = water[1:] != water[:-1]
    res = EdgeResult(theta_w=cfg.theta_w, n_total=len(pixels))
    cache: dict[int, np.ndarray] = {}
    for c, e in pixels:
        ks = cache.get(c)
        if ks is None:
            ks = cache[c] = np.flatnonzero(trans[:, c]) + 1
        if ks.size == 0:
            continue
        d = float(np.min(np.abs(ks - e)))
        res.n_detected += 1
        res.sum_sq += d * d
        if d < cfg.theta_w:
            res.n_within += 1
    return res


@dataclass(frozen=True)
class ObstacleRecord:
    area: int
    kind: str  # "gt" or "fp"
    detected: bool
    in_zone: bool


@dataclass
class SegDetResult:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tp_d: int = 0
    fp_d: int = 0
    fn_d: int = 0
    obstacles: list[ObstacleRecord] = field(default_factory=list)

    def __add__(self, other: "SegDetResult") -> "SegDetResult":
        return SegDetResult(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn,
                            self.tp_d + other.tp_d, self.fp_d + other.fp_d, self.fn_d + other.fn_d,
                            self.obstacles + other.obstacles)


def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)


def obstacle_detection_from_mask(pred, gt_boxes: Sequence[BBox], gt_edge: Iterable, zone_mask=None,
                                 cfg: SegDetectionConfig | None = None) -> SegDetResult:
    cfg = cfg or SegDetectionConfig()
    arr = _as_array(pred)
    h, w = arr.shape
    zone = None
    if zone_mask is not None:
        zone = _as_array(zone_mask) != 0
        if zone.shape != arr.shape:
            raise DimensionMismatch(f"zone mask {zone.shape} vs prediction {arr.shape}")
    obstacle = arr == OBSTACLE
    res = SegDetResult()
    remaining = obstacle.copy()
    for b in gt_boxes:
        c0, r0, c1, r1 = clip_span(b, w, h)
        area = max(c1 - c0, 0) * max(r1 - r0, 0)
        covered = int(obstacle[r0:r1, c0:c1].sum()) if area else 0
        hit = area > 0 and covered / area >= cfg.coverage_threshold
        inz = zone is not None and in_zone_fraction(b, zone) >= ZONE_MEMBERSHIP
        res.obstacles.append(ObstacleRecord(area, "gt", hit, inz))
        if hit:
            res.tp += 1
            res.tp_d += inz
        else:
            res.fn += 1
            res.fn_d += inz
        if area:
            remaining[r0:r1, c0:c1] = False
    heights = edge_height_field(gt_edge, w, h)
    remaining &= np.arange(h)[:, None] >= heights[None, :]
    labels, n = ndimage.label(remaining, structure=_structure(cfg.fp_connectivity))
    if n:
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        zone_hits = np.bincount(labels.ravel(), weights=zone.ravel(), minlength=n + 1) if zone is not None else None
        for lab in range(1, n + 1):
            if sizes[lab] < cfg.fp_min_area:
                continue
            inz = zone_hits is not None and zone_hits[lab] / sizes[lab] >= ZONE_MEMBERSHIP
            res.fp += 1
            res.fp_d += inz
            res.obstacles.append(ObstacleRecord(int(sizes[lab]), "fp", False, bool(inz)))
    return res


def size_binned_f1(records: Iterable[ObstacleRecord], n_bins: int = 12) -> list[float]:
    """F1 within equally populated GT-area bins; FP components join the bin matching their area."""
    records = list(records)
    gts = sorted((r for r in records if r.kind == "gt"), key=lambda r: r.area)
    if len(gts) < n_bins:
        raise TooFewObstacles(f"{len(gts)} ground-truth obstacles, need at least {n_bins}")
    bins = np.array_split(np.arange(len(gts)), n_bins)
    uppers = np.array([gts[idx[-1]].area for idx in bins])
    tp = np.zeros(n_bins, dtype=int)
    fn = np.zeros(n_bins, dtype=int)
    fp = np.zeros(n_bins, dtype=int)
    for k, idx in enumerate(bins):
        for i in idx:
            if gts[i].detected:
                tp[k] += 1
            else:
                fn[k] += 1
    for r in records:
        if r.kind == "fp":
            k = min(int(np.searchsorted(uppers, r.area, side="left")), n_bins - 1)
            fp[k] += 1
    return [precision_recall_f1(int(a), int(b), int(c))[2] for a, b, c in zip(tp, fp, fn)]


@dataclass
class SegFrameResult:
    edge: EdgeResult | None
    det: SegDetResult


@dataclass
class SegReport:
    mu_A: float
    mu_R: float
    Pr: float
    Re: float
    F1: float
    Pr_danger: float
    Re_danger: float
    F1_danger: float
    avg_score: float
    size_binned_f1: list[float] | None
    TP: int = 0
    FP: int = 0
    FN: int = 0
    TP_danger: int = 0
    FP_danger: int = 0
    FN_danger: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def seg_report(frames: Iterable[SegFrameResult], macro: bool = False, n_bins: int = 12) -> SegReport:
    """Pool per-frame results: counts are summed, then ratios taken (``macro`` averages per frame)."""
    frames = list(frames)
    edge = EdgeResult()
    det = SegDetResult()
    for fr in frames:
        if fr.edge is not None:
            edge = edge + fr.edge
        det = det + fr.det
    if macro:
        pr, re, f1 = _macro(frames, lambda d: (d.tp, d.fp, d.fn))
        prd, red, f1d = _macro(frames, lambda d: (d.tp_d, d.fp_d, d.fn_d))
    else:
        pr, re, f1 = precision_recall_f1(det.tp, det.fp, det.fn)
        prd, red, f1d = precision_recall_f1(det.tp_d, det.fp_d, det.fn_d)
    try:
        bins = size_binned_f1(det.obstacles, n_bins)
    except TooFewObstacles:
        bins = None
    return SegReport(
        mu_A=edge.mu_A, mu_R=edge.mu_R, Pr=pr, Re=re, F1=f1, Pr_danger=prd, Re_danger=red, F1_danger=f1d,
        avg_score=100.0 * avg_score(f1, f1d), size_binned_f1=bins,
        TP=det.tp, FP=det.fp, FN=det.fn, TP_danger=det.tp_d, FP_danger=det.fp_d, FN_danger=det.fn_d,
    )


def _macro(frames, counts):
    prs, res = [], []
    for fr in frames:
        tp, fp, fn = counts(fr.det)
        if tp + fp:
            prs.append(tp / (tp + fp))
        if tp + fn:
            res.append(tp / (tp + fn))
    pr = float(np.mean(prs)) if prs else 1.0
    re = float(np.mean(res)) if res else 1.0
    f1 = 2 * pr * re / (pr + re) if pr + re else 0.0
    return pr, re, f1


def evaluate_seg(pred_masks: Mapping, gt_boxes: Mapping, edges: WaterEdgePolyline, zone_masks: Mapping | None = None,
                 frames: Sequence | None = None, edge_cfg: EdgeMetricConfig | None = None,
                 det_cfg: SegDetectionConfig | None = None, macro: bool = False) -> SegReport:
    """Run both segmentation analyses over every frame of the manifest and pool them."""
    frames = list(frames) if frames is not None else list(pred_masks)
    out = []
    for f in frames:
        if f not in pred_masks:
            raise EvalError(f"no predicted mask for frame {f!r}")
        pred = _as_array(pred_masks[f])
        zone = zone_masks.get(f) if zone_masks else None
        polys = edges.polylines(f)
        try:
            er = water_edge_metrics(pred, polys, edge_cfg)
        except EmptyEdge:
            er = None
        dr = obstacle_detection_from_mask(pred, gt_boxes.get(f, []), polys, zone, det_cfg)
        out.append(SegFrameResult(er, dr))
    return seg_report(out, macro=macro)
