"""UAV object-detection track: COCO-style AP/AR, binary mode, PR curves, TIDE errors."""
from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BBox, ClassTable, DetectionRecord, EvalError, GroundTruthRecord, UnknownClass, UnknownFrame
from .geometry import intersection_over_first, iou_matrix
from .matching import greedy_match

log = logging.getLogger(__name__)

IOU_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)
MAX_DETS = (1, 10, 100)
IGNORE_OVERLAP = 0.5
AREA_RANGES = {
    "all": (0.0, float("inf")),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, float("inf")),
}


class EmptyGroundTruth(EvalError):
    pass


class EditTargetMissing(EvalError):
    pass


@dataclass
class OdReport:
    AP: float
    AP50: float
    AP75: float
    AR1: float
    AR10: float
    AR100: float
    per_class_ap: dict[str, float]
    binary_ap: float | None = None
    pr_curves: dict[str, dict[float, list[float]]] = field(default_factory=dict)
    num_gt: int = 0
    num_pred: int = 0

    def to_dict(self, *, curves: bool = True) -> dict:
        d = {
            "AP": self.AP, "AP50": self.AP50, "AP75": self.AP75,
            "AR1": self.AR1, "AR10": self.AR10, "AR100": self.AR100,
            "per_class_ap": dict(self.per_class_ap),
            "binary_ap": self.binary_ap,
            "num_gt": self.num_gt, "num_pred": self.num_pred,
        }
        if curves:
            d["pr_curves"] = {c: {f"{t:.2f}": list(p) for t, p in by_t.items()}
                              for c, by_t in self.pr_curves.items()}
        return d


@dataclass
class _Frame:
    gt_boxes: np.ndarray
    gt_cls: np.ndarray
    dt_boxes: np.ndarray
    dt_cls: np.ndarray
    dt_scores: np.ndarray


def _frame_order(gts: Sequence[GroundTruthRecord], preds: Sequence[DetectionRecord], frames) -> list:
    if frames is not None:
        order = list(frames)
        known = set(order)
        for r in preds:
            if r.frame_id not in known:
                raise UnknownFrame(f"prediction references unknown frame {r.frame_id!r}")
        for g in gts:
            if g.frame_id not in known:
                raise UnknownFrame(f"annotation references unknown frame {g.frame_id!r}")
        return order
    seen: dict = {}
    for r in list(gts) + list(preds):
        seen.setdefault(r.frame_id, None)
    return list(seen)


def prepare(preds: Iterable[DetectionRecord], gts: Iterable[GroundTruthRecord], classes: ClassTable,
            frames=None) -> tuple[list, dict]:
    """Drop ignore regions (and detections mostly inside them), group by frame.

    Class ids are projected through ``classes``, so a binary table collapses
    every label before matching.
    """
    preds, gts = list(preds), list(gts)
    order = _frame_order(gts, preds, frames)
    by_gt: dict = defaultdict(list)
    ignore: dict = defaultdict(list)
    by_dt: dict = defaultdict(list)
    for g in gts:
        if g.ignore:
            ignore[g.frame_id].append(g.bbox.as_list())
        else:
            by_gt[g.frame_id].append((g.bbox.as_list(), classes.project(g.class_id)))
    for r in preds:
        by_dt[r.frame_id].append((r.bbox.as_list(), classes.project(r.class_id), r.score))
    out = {}
    for f in order:
        dts = by_dt.get(f, [])
        if dts and ignore.get(f):
            cover = intersection_over_first(np.array([d[0] for d in dts]), np.array(ignore[f]))
            dts = [d for d, c in zip(dts, cover.max(axis=1)) if c <= IGNORE_OVERLAP]
        g = by_gt.get(f, [])
        out[f] = _Frame(
            np.array([b for b, _ in g], dtype=float).reshape(-1, 4),
            np.array([c for _, c in g], dtype=int),
            np.array([d[0] for d in dts], dtype=float).reshape(-1, 4),
            np.array([d[1] for d in dts], dtype=int),
            np.array([d[2] for d in dts], dtype=float),
        )
    return order, out


def _match_class_frame(gt_boxes, dt_boxes, thresholds, area_rng):
    """COCO per-image, per-category matching for every IoU threshold.

    Returns ``(matched, ignored, n_gt)`` with ``(T, n_det)`` boolean arrays.
    """
    n_dt = len(dt_boxes)
    gt_area = gt_boxes[:, 2] * gt_boxes[:, 3]
    gt_ign = (gt_area < area_rng[0]) | (gt_area > area_rng[1])
    n_gt = int((~gt_ign).sum())
    matched = np.zeros((len(thresholds), n_dt), dtype=bool)
    ignored = np.zeros((len(thresholds), n_dt), dtype=bool)
    if n_dt == 0:
        return matched, ignored, n_gt
    ious = iou_matrix(dt_boxes, gt_boxes)
    dt_area = dt_boxes[:, 2] * dt_boxes[:, 3]
    dt_out = (dt_area < area_rng[0]) | (dt_area > area_rng[1])
    regular = ~gt_ign
    for t, thr in enumerate(thresholds):
        res = greedy_match(ious, thr, allowed=np.broadcast_to(regular, ious.shape))
        for p, _, _ in res.pairs:
            matched[t, p] = True
        if gt_ign.any():
            rest = res.unmatched_preds
            res2 = greedy_match(ious[rest], thr, allowed=np.broadcast_to(gt_ign, (len(rest), len(gt_ign))))
            for p, _, _ in res2.pairs:
                matched[t, rest[p]] = True
                ignored[t, rest[p]] = True
        ignored[t] |= ~matched[t] & dt_out
    return matched, ignored, n_gt


def _evaluate_class(args):
    frames, thresholds, max_dets, area_rng = args
    T = len(thresholds)
    n_gt = 0
    per_frame = []
    for gt_boxes, dt_boxes, scores in frames:
        order = np.argsort(-scores, kind="mergesort")[: max_dets[-1]]
        dt_boxes, scores = dt_boxes[order], scores[order]
        m, ig, g = _match_class_frame(gt_boxes, dt_boxes, thresholds, area_rng)
        n_gt += g
        per_frame.append((scores, m, ig))
    precision = {}
    recall = {}
    for md in max_dets:
        if per_frame:
            scores = np.concatenate([s[:md] for s, _, _ in per_frame])
            m = np.concatenate([x[:, :md] for _, x, _ in per_frame], axis=1)
            ig = np.concatenate([x[:, :md] for _, _, x in per_frame], axis=1)
        else:
            scores, m, ig = np.zeros(0), np.zeros((T, 0), bool), np.zeros((T, 0), bool)
        order = np.argsort(-scores, kind="mergesort")
        m, ig = m[:, order], ig[:, order]
        tp = np.cumsum(m & ~ig, axis=1).astype(float)
        fp = np.cumsum(~m & ~ig, axis=1).astype(float)
        prec = np.zeros((T, len(RECALL_GRID)))
        rec = np.zeros(T)
        if n_gt > 0:
            for t in range(T):
                nd = tp.shape[1]
                if nd == 0:
                    continue
                rc = tp[t] / n_gt
                pr = tp[t] / np.maximum(tp[t] + fp[t], np.finfo(float).eps)
                rec[t] = rc[-1]
                envelope = np.maximum.accumulate(pr[::-1])[::-1]
                idx = np.searchsorted(rc, RECALL_GRID, side="left")
                valid = idx < nd
                prec[t, valid] = envelope[idx[valid]]
        precision[md] = prec
        recall[md] = rec
    return n_gt, precision, recall


def _per_class_inputs(order, frames: Mapping, class_id: int):
    out = []
    for f in order:
        fr = frames[f]
        gsel = fr.gt_cls == class_id
        dsel = fr.dt_cls == class_id
        if not gsel.any() and not dsel.any():
            continue
        out.append((fr.gt_boxes[gsel], fr.dt_boxes[dsel], fr.dt_scores[dsel]))
    return out


def _check_classes(records, classes: ClassTable):
    for r in records:
        if getattr(r, "ignore", False):
            continue
        if r.class_id not in classes:
            raise UnknownClass(f"class id {r.class_id!r} not in table {classes.names}")


def _run(preds, gts, classes: ClassTable, frames, thresholds, area, jobs):
    order, prepared = prepare(preds, gts, classes, frames)
    work = [(_per_class_inputs(order, prepared, cid), thresholds, MAX_DETS, AREA_RANGES[area])
            for cid in classes.ids]
    if jobs and jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_evaluate_class, work))
    else:
        results = [_evaluate_class(w) for w in work]
    return order, prepared, results


def evaluate_od(preds: Iterable[DetectionRecord], gts: Iterable[GroundTruthRecord], classes: ClassTable,
                binary: bool = False, *, frames=None, area: str = "all", with_binary_ap: bool = True,
                jobs: int = 1) -> OdReport:
    """COCO-style AP suite. AP is averaged over classes that have ground truth.

    ``binary`` collapses every class into ``non-water`` before matching. When
    not binary, ``binary_ap`` is computed by a second, collapsed pass.
    """
    preds, gts = list(preds), list(gts)
    _check_classes(preds, classes)
    _check_classes(gts, classes)
    table = classes.binary() if binary else classes
    _, _, results = _run(preds, gts, table, frames, IOU_THRESHOLDS, area, jobs)
    t50, t75 = IOU_THRESHOLDS.index(0.5), IOU_THRESHOLDS.index(0.75)
    per_class, curves = {}, {}
    ap, ap50, ap75 = [], [], []
    ar = {md: [] for md in MAX_DETS}
    for name, (n_gt, precision, recall) in zip(table.names, results):
        if n_gt == 0:
            continue
        p = precision[MAX_DETS[-1]]
        per_class[name] = float(p.mean())
        ap.append(p.mean())
        ap50.append(p[t50].mean())
        ap75.append(p[t75].mean())
        for md in MAX_DETS:
            ar[md].append(recall[md].mean())
        curves[name] = {t: p[i].tolist() for i, t in enumerate(IOU_THRESHOLDS)}
    if not per_class:
        log.warning("no ground truth in any class; AP reported as 0")

    def mean(v):
        return float(np.mean(v)) if v else 0.0

    report = OdReport(
        AP=mean(ap), AP50=mean(ap50), AP75=mean(ap75),
        AR1=mean(ar[1]), AR10=mean(ar[10]), AR100=mean(ar[100]),
        per_class_ap=per_class, pr_curves=curves,
        num_gt=sum(1 for g in gts if not g.ignore), num_pred=len(preds),
    )
    if binary:
        report.binary_ap = report.AP
    elif with_binary_ap:
        report.binary_ap = evaluate_od(preds, gts, classes, binary=True, frames=frames, area=area, jobs=jobs).AP
    return report


def ap_at(preds, gts, classes: ClassTable, iou_threshold: float, frames=None) -> float:
    """Class-averaged AP at a single IoU threshold."""
    _, _, results = _run(list(preds), list(gts), classes, frames, (iou_threshold,), "all", 1)
    vals = [precision[MAX_DETS[-1]][0].mean() for n_gt, precision, _ in results if n_gt > 0]
    return float(np.mean(vals)) if vals else 0.0


# --- TIDE error decomposition -------------------------------------------------

TIDE_CATEGORIES = ("classification", "localization", "both", "duplicate", "background", "missed")


@dataclass
class TideReport:
    base_ap: float
    counts: dict[str, int]
    delta_ap: dict[str, float]
    fp_delta_ap: float
    fn_delta_ap: float
    num_tp: int = 0

    def to_dict(self) -> dict:
        return {"base_ap": self.base_ap, "counts": dict(self.counts), "delta_ap": dict(self.delta_ap),
                "fp_delta_ap": self.fp_delta_ap, "fn_delta_ap": self.fn_delta_ap, "num_tp": self.num_tp}


def classify_false_positive(iou_same: np.ndarray, iou_other: np.ndarray, pos: float = 0.5, bg: float = 0.1) -> str:
    """TIDE category of an unmatched prediction, checked in TIDE's precedence order."""
    max_same = float(iou_same.max()) if iou_same.size else 0.0
    max_other = float(iou_other.max()) if iou_other.size else 0.0
    if bg <= max_same < pos:
        return "localization"
    if max_other >= pos:
        return "classification"
    if max_same >= pos:
        return "duplicate"
    if max(max_same, max_other) < bg:
        return "background"
    return "both"


def tide_decompose(preds: Iterable[DetectionRecord], gts: Iterable[GroundTruthRecord], classes: ClassTable,
                   base_iou: float = 0.5, bg_iou: float = 0.1, frames=None) -> TideReport:
    preds, gts = list(preds), list(gts)
    _check_classes(preds, classes)
    _check_classes(gts, classes)
    ignores = [g for g in gts if g.ignore]
    # work on the post-suppression record lists so that fixes edit what is evaluated
    order, prepared = prepare(preds, gts, classes, frames)
    kept_preds: list[DetectionRecord] = []
    kept_gts: list[GroundTruthRecord] = []
    for f in order:
        fr = prepared[f]
        for b, c in zip(fr.gt_boxes, fr.gt_cls):
            kept_gts.append(GroundTruthRecord(f, BBox(*b), int(c)))
        for b, c, s in zip(fr.dt_boxes, fr.dt_cls, fr.dt_scores):
            kept_preds.append(DetectionRecord(f, BBox(*b), int(c), float(s)))

    gt_idx_by_frame: dict = defaultdict(list)
    for i, g in enumerate(kept_gts):
        gt_idx_by_frame[g.frame_id].append(i)
    pred_idx_by_frame: dict = defaultdict(list)
    for i, p in enumerate(kept_preds):
        pred_idx_by_frame[p.frame_id].append(i)

    category: dict[int, tuple[str, int | None]] = {}
    gt_matched: set[int] = set()
    for f in order:
        pis = sorted(pred_idx_by_frame.get(f, []), key=lambda i: -kept_preds[i].score)
        gis = gt_idx_by_frame.get(f, [])
        if not pis:
            continue
        pb = np.array([kept_preds[i].bbox.as_list() for i in pis]).reshape(-1, 4)
        gb = np.array([kept_gts[i].bbox.as_list() for i in gis]).reshape(-1, 4)
        pc = np.array([kept_preds[i].class_id for i in pis])
        gc = np.array([kept_gts[i].class_id for i in gis])
        ious = iou_matrix(pb, gb)
        same = pc[:, None] == gc[None, :]
        res = greedy_match(ious, base_iou, allowed=same)
        for p, g, _ in res.pairs:
            gt_matched.add(gis[g])
        for p in res.unmatched_preds:
            cat = classify_false_positive(ious[p][same[p]], ious[p][~same[p]], base_iou, bg_iou)
            target = None
            if cat in ("localization", "duplicate"):
                cols = np.flatnonzero(same[p])
                target = gis[int(cols[np.argmax(ious[p, cols])])]
            elif cat == "classification":
                cols = np.flatnonzero(~same[p])
                target = gis[int(cols[np.argmax(ious[p, cols])])]
            category[pis[p]] = (cat, target)

    missed = [i for i in range(len(kept_gts)) if i not in gt_matched]
    counts = {c: 0 for c in TIDE_CATEGORIES}
    for cat, _ in category.values():
        counts[cat] += 1
    counts["missed"] = len(missed)

    def ap50(pr, gt):
        return ap_at(pr, list(gt) + ignores, classes, base_iou, frames=order)

    base = ap50(kept_preds, kept_gts)

    def fixed_preds(which: set[str]) -> list[DetectionRecord]:
        claimed = set(gt_matched)
        out = []
        for i in sorted(range(len(kept_preds)), key=lambda i: -kept_preds[i].score):
            p = kept_preds[i]
            if i not in category or category[i][0] not in which:
                out.append(p)
                continue
            cat, target = category[i]
            if cat in ("classification", "localization") and target not in claimed:
                claimed.add(target)
                g = kept_gts[target]
                out.append(replace(p, class_id=g.class_id) if cat == "classification" else replace(p, bbox=g.bbox))
            # everything else is suppressed
        return out

    delta = {}
    for cat in TIDE_CATEGORIES[:-1]:
        delta[cat] = ap50(fixed_preds({cat}), kept_gts) - base
    missed_set = set(missed)
    kept_matched_gts = [g for i, g in enumerate(kept_gts) if i not in missed_set]
    delta["missed"] = ap50(kept_preds, kept_matched_gts) - base
    fp_only = [p for i, p in enumerate(kept_preds) if i not in category]
    return TideReport(
        base_ap=base, counts=counts, delta_ap=delta,
        fp_delta_ap=ap50(fp_only, kept_gts) - base,
        fn_delta_ap=ap50(kept_preds, kept_matched_gts) - base,
        num_tp=len(gt_matched),
    )


# --- corrected annotations ------------------------------------------------------

@dataclass
class Corrections:
    moved: dict[int, BBox] = field(default_factory=dict)
    added: list[GroundTruthRecord] = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not self.moved and not self.added


def apply_corrections(gts: Sequence[GroundTruthRecord], corrections: Corrections, frames=None) -> list[GroundTruthRecord]:
    known_frames = set(frames) if frames is not None else {g.frame_id for g in gts}
    ids = {g.id for g in gts if g.id is not None}
    for gid in corrections.moved:
        if gid not in ids:
            raise EditTargetMissing(f"moved annotation id {gid} does not exist")
    for a in corrections.added:
        if a.frame_id not in known_frames:
            raise EditTargetMissing(f"added annotation references unknown frame {a.frame_id!r}")
    out = [replace(g, bbox=corrections.moved[g.id]) if g.id in corrections.moved else g for g in gts]
    return out + list(corrections.added)


def corrected_reeval(preds, gts, corrections: Corrections, classes: ClassTable, binary: bool = False,
                     frames=None) -> tuple[OdReport, OdReport]:
    preds, gts = list(preds), list(gts)
    if frames is None:
        frames = _frame_order(gts, preds, None)
    before = evaluate_od(preds, gts, classes, binary, frames=frames)
    after = evaluate_od(preds, apply_corrections(gts, corrections, frames), classes, binary, frames=frames)
    return before, after
