"""USV obstacle-detection track: three F1 scores and their average."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .core import ClassTable, DetectionRecord, EvalError, GroundTruthRecord, SegmentationRaster, UnknownClass, WaterEdgePolyline
from .geometry import in_zone_fraction, iou_matrix
from .matching import greedy_match
from .seg import ZONE_MEMBERSHIP, precision_recall_f1

USV_IOU = 0.3


class MissingEdgeForFrame(EvalError):
    pass


@dataclass
class _Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def add(self, tp, fp, fn):
        self.tp += tp
        self.fp += fp
        self.fn += fn

    def prf(self):
        return precision_recall_f1(self.tp, self.fp, self.fn)


@dataclass
class UsvDetReport:
    f1_1: float
    f1_2: float
    f1_3: float
    f1_avg: float
    components: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"f1_1": self.f1_1, "f1_2": self.f1_2, "f1_3": self.f1_3, "f1_avg": self.f1_avg,
                "components": {k: dict(v) for k, v in self.components.items()}}


def f1_average(f1_1: float, f1_2: float, f1_3: float) -> float:
    return (f1_1 + f1_2 + f1_3) / 3


def edge_height_at(polylines, x: float) -> float | None:
    """Linearly interpolated GT edge row at column ``x``; the lowest edge wins, None if uncovered."""
    best = None
    for pl in polylines:
        pts = [(float(a), float(b)) for a, b in pl]
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            lo, hi = min(x0, x1), max(x0, x1)
            if not lo <= x <= hi:
                continue
            y = y0 if x1 == x0 else y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            best = y if best is None else max(best, y)
    return best


def is_above_edge(bbox, polylines) -> bool:
    y = edge_height_at(polylines, bbox.x + 0.5 * bbox.w)
    return y is not None and bbox.y2 < y


def evaluate_usv_det(preds: Iterable[DetectionRecord], gts: Iterable[GroundTruthRecord], gt_edge: WaterEdgePolyline,
                     zone_masks: Mapping | SegmentationRaster | np.ndarray | None, classes: ClassTable | None = None,
                     *, frames=None, iou_threshold: float = USV_IOU, non_exhaustive: Iterable | None = None) -> UsvDetReport:
    classes = classes or ClassTable.usv()
    preds, gts = list(preds), [g for g in gts if not g.ignore]
    for r in list(preds) + list(gts):
        if r.class_id not in classes:
            raise UnknownClass(f"class id {r.class_id!r} not in {classes.names}")
    by_p: dict = defaultdict(list)
    by_g: dict = defaultdict(list)
    for p in preds:
        by_p[p.frame_id].append(p)
    for g in gts:
        by_g[g.frame_id].append(g)
    if frames is None:
        frames = list(dict.fromkeys([g.frame_id for g in gts] + [p.frame_id for p in preds]))
    skip_fp = set(non_exhaustive or ()) | {g.frame_id for g in gts if not g.exhaustive}

    c1, c2, c3 = _Counts(), _Counts(), _Counts()
    for f in frames:
        if f not in gt_edge.frames:
            raise MissingEdgeForFrame(f"no water-edge annotation for frame {f!r}")
        polys = gt_edge.frames[f]
        fg = by_g.get(f, [])
        fp_ = sorted(by_p.get(f, []), key=lambda r: -r.score)
        gb = np.array([g.bbox.as_list() for g in fg]).reshape(-1, 4)
        if fp_:
            pb = np.array([p.bbox.as_list() for p in fp_]).reshape(-1, 4)
            overlap = iou_matrix(pb, gb).max(axis=1) if len(fg) else np.zeros(len(fp_))
            fp_ = [p for p, o in zip(fp_, overlap) if o > 0 or not is_above_edge(p.bbox, polys)]
        pb = np.array([p.bbox.as_list() for p in fp_]).reshape(-1, 4)
        ious = iou_matrix(pb, gb)
        count_fp = f not in skip_fp

        def tally(counts, res):
            counts.add(len(res.pairs), len(res.unmatched_preds) if count_fp else 0, len(res.unmatched_gts))

        pc = np.array([p.class_id for p in fp_], dtype=int)
        gc = np.array([g.class_id for g in fg], dtype=int)
        tally(c1, greedy_match(ious, iou_threshold, allowed=pc[:, None] == gc[None, :]))
        tally(c2, greedy_match(ious, iou_threshold))

        zone = _zone_for(zone_masks, f)
        if zone is None:
            raise EvalError(f"no danger-zone mask for frame {f!r}")
        p_in = [i for i, p in enumerate(fp_) if in_zone_fraction(p.bbox, zone) >= ZONE_MEMBERSHIP]
        g_in = [j for j, g in enumerate(fg) if in_zone_fraction(g.bbox, zone) >= ZONE_MEMBERSHIP]
        tally(c3, greedy_match(ious[np.ix_(p_in, g_in)], iou_threshold))

    comps = {}
    f1s = []
    for name, c in (("f1_1", c1), ("f1_2", c2), ("f1_3", c3)):
        pr, re, f1 = c.prf()
        comps[name] = {"Pr": pr, "Re": re, "F1": f1, "TP": c.tp, "FP": c.fp, "FN": c.fn}
        f1s.append(f1)
    return UsvDetReport(f1s[0], f1s[1], f1s[2], f1_average(*f1s), comps)


def _zone_for(zone_masks, frame_id):
    if zone_masks is None:
        return None
    if isinstance(zone_masks, (SegmentationRaster, np.ndarray)):
        return zone_masks
    return zone_masks.get(frame_id)
