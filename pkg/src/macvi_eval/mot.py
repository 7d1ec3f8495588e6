"""UAV tracking track: CLEAR-MOT, identity metrics and HOTA.

Per-sequence statistics are kept as raw counts so that several sequences
combine the same way a single concatenated sequence would for the additive
metrics; HOTA association terms are TP-weighted across sequences.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import EvalError, TrackSet
from .geometry import iou_matrix
from .matching import optimal_match

_EPS = np.finfo(float).eps


class FrameMismatch(EvalError):
    pass


@dataclass(frozen=True)
class MotConfig:
    iou_min: float = 0.5
    hota_alphas: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))
    mt_threshold: float = 0.8
    ml_threshold: float = 0.2
    id_iou: float = 0.5
    split_reentering_gt: bool = True

    def __post_init__(self):
        for v in (self.iou_min, self.mt_threshold, self.ml_threshold, self.id_iou):
            if not 0 < v < 1:
                raise ValueError("thresholds must lie in (0, 1)")
        if list(self.hota_alphas) != sorted(self.hota_alphas):
            raise ValueError("hota_alphas must be sorted")


@dataclass
class MotReport:
    HOTA: float
    DetA: float
    AssA: float
    LocA: float
    MOTA: float
    MOTP: float
    IDF1: float
    IDP: float
    IDR: float
    MT: int
    PT: int
    ML: int
    TP: int
    FP: int
    FN: int
    IDs: int
    Frag: int
    Re: float
    Pr: float
    GT_count: int
    num_gt_tracks: int
    per_sequence: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class _SeqStats:
    # CLEAR
    tp: int = 0
    fp: int = 0
    fn: int = 0
    idsw: int = 0
    frag: int = 0
    mt: int = 0
    pt: int = 0
    ml: int = 0
    motp_sum: float = 0.0
    # identity
    idtp: int = 0
    n_gt_dets: int = 0
    n_tr_dets: int = 0
    n_gt_tracks: int = 0
    # HOTA, one entry per alpha
    h_tp: np.ndarray | None = None
    h_fn: np.ndarray | None = None
    h_fp: np.ndarray | None = None
    h_assa: np.ndarray | None = None
    h_loca: np.ndarray | None = None


def _relabel(gt: TrackSet, split: bool):
    """Dense GT identities; with ``split`` a track that leaves and comes back gets a new identity."""
    present: dict[int, set] = {}
    for e in gt.entries:
        present.setdefault(e.track_id, set()).add(e.frame_id)
    mapping: dict[tuple, int] = {}
    label_of: dict[tuple, int] = {}
    for tid in sorted(present):
        seg = 0
        prev_in = False
        started = False
        for f in gt.frames:
            now = f in present[tid]
            if now and started and not prev_in and split:
                seg += 1
            if now:
                started = True
                key = (tid, seg)
                if key not in mapping:
                    mapping[key] = len(mapping)
                label_of[(tid, f)] = mapping[key]
            prev_in = now
    return label_of, len(mapping)


def _frames(pred: TrackSet, gt: TrackSet, cfg: MotConfig):
    known = set(gt.frames)
    for e in pred.entries:
        if e.frame_id not in known:
            raise FrameMismatch(f"sequence {gt.sequence_id}: prediction frame {e.frame_id!r} not in ground truth")
    gt_label, n_gt = _relabel(gt, cfg.split_reentering_gt)
    tr_map: dict[int, int] = {}
    for e in sorted(pred.entries, key=lambda e: e.track_id):
        tr_map.setdefault(e.track_id, len(tr_map))
    gt_by = gt.by_frame()
    pr_by = {f: [] for f in gt.frames}
    for e in pred.entries:
        pr_by[e.frame_id].append(e)
    out = []
    for f in gt.frames:
        ge = sorted(gt_by[f], key=lambda e: e.track_id)
        pe = sorted(pr_by[f], key=lambda e: e.track_id)
        g_ids = np.array([gt_label[(e.track_id, f)] for e in ge], dtype=int)
        t_ids = np.array([tr_map[e.track_id] for e in pe], dtype=int)
        sim = iou_matrix(np.array([e.bbox.as_list() for e in ge]).reshape(-1, 4),
                         np.array([e.bbox.as_list() for e in pe]).reshape(-1, 4))
        out.append((g_ids, t_ids, sim))
    return out, n_gt, len(tr_map)


def _clear(frames, n_gt: int, cfg: MotConfig, st: _SeqStats):
    prev_tracker = np.full(n_gt, -1)
    prev_step = np.full(n_gt, -1)
    gt_count = np.zeros(n_gt, dtype=int)
    matched_count = np.zeros(n_gt, dtype=int)
    frag_count = np.zeros(n_gt, dtype=int)
    for g_ids, t_ids, sim in frames:
        gt_count[g_ids] += 1
        if len(g_ids) == 0 or len(t_ids) == 0:
            st.fp += len(t_ids)
            st.fn += len(g_ids)
            prev_step[:] = -1
            continue
        pairs = []
        # continuity: last frame's pairs survive when still overlapping enough
        kept_r, kept_c = set(), set()
        for r, g in enumerate(g_ids):
            prev = prev_step[g]
            if prev < 0:
                continue
            cols = np.flatnonzero(t_ids == prev)
            if cols.size and sim[r, cols[0]] >= cfg.iou_min - _EPS:
                pairs.append((r, int(cols[0])))
                kept_r.add(r)
                kept_c.add(int(cols[0]))
        rest_r = [r for r in range(len(g_ids)) if r not in kept_r]
        rest_c = [c for c in range(len(t_ids)) if c not in kept_c]
        if rest_r and rest_c:
            sub = sim[np.ix_(rest_r, rest_c)]
            res = optimal_match(np.where(sub >= cfg.iou_min - _EPS, sub, 0.0))
            pairs += [(rest_r[i], rest_c[j]) for i, j, _ in res.pairs]
        rows = np.array([p[0] for p in pairs], dtype=int)
        cols = np.array([p[1] for p in pairs], dtype=int)
        m_gt, m_tr = g_ids[rows], t_ids[cols]
        prev_m = prev_tracker[m_gt]
        st.idsw += int(np.sum((prev_m >= 0) & (m_tr != prev_m)))
        matched_count[m_gt] += 1
        not_prev = prev_step < 0
        prev_tracker[m_gt] = m_tr
        prev_step[:] = -1
        prev_step[m_gt] = m_tr
        frag_count += not_prev & (prev_step >= 0)
        n = len(pairs)
        st.tp += n
        st.fn += len(g_ids) - n
        st.fp += len(t_ids) - n
        st.motp_sum += float(np.sum(1.0 - sim[rows, cols]))
    seen = gt_count > 0
    ratio = matched_count[seen] / gt_count[seen]
    st.mt = int(np.sum(ratio > cfg.mt_threshold))
    st.ml = int(np.sum(ratio < cfg.ml_threshold))
    st.pt = int(seen.sum()) - st.mt - st.ml
    st.frag = int(np.sum(frag_count[frag_count > 0] - 1))
    st.n_gt_tracks = int(seen.sum())


def _identity(frames, n_gt: int, n_tr: int, cfg: MotConfig, st: _SeqStats):
    counts = np.zeros((n_gt, n_tr))
    for g_ids, t_ids, sim in frames:
        st.n_gt_dets += len(g_ids)
        st.n_tr_dets += len(t_ids)
        if len(g_ids) and len(t_ids):
            counts[np.ix_(g_ids, t_ids)] += sim >= cfg.id_iou - _EPS
    if n_gt and n_tr:
        st.idtp = int(round(optimal_match(counts, lexicographic=False).total))


def hota_association(frames, n_gt: int, n_tr: int, alphas):
    """HOTA per alpha: returns ``(tp, fn, fp, assa, loca_sum)`` arrays."""
    A = len(alphas)
    pmc = np.zeros((n_gt, n_tr))
    gt_count = np.zeros((n_gt, 1))
    tr_count = np.zeros((1, n_tr))
    for g_ids, t_ids, sim in frames:
        if len(g_ids) and len(t_ids):
            denom = sim.sum(0)[None, :] + sim.sum(1)[:, None] - sim
            sim_iou = np.zeros_like(sim)
            ok = denom > _EPS
            sim_iou[ok] = sim[ok] / denom[ok]
            pmc[g_ids[:, None], t_ids[None, :]] += sim_iou
        gt_count[g_ids] += 1
        tr_count[0, t_ids] += 1
    with np.errstate(divide="ignore", invalid="ignore"):
        gas = np.where(pmc > 0, pmc / (gt_count + tr_count - pmc), 0.0)
    tp = np.zeros(A)
    fn = np.zeros(A)
    fp = np.zeros(A)
    loca = np.zeros(A)
    matches = np.zeros((A, n_gt, n_tr))
    for g_ids, t_ids, sim in frames:
        if len(g_ids) == 0 or len(t_ids) == 0:
            fp += len(t_ids)
            fn += len(g_ids)
            continue
        score = gas[g_ids[:, None], t_ids[None, :]] * sim
        res = optimal_match(score)
        rows = np.array([p[0] for p in res.pairs], dtype=int)
        cols = np.array([p[1] for p in res.pairs], dtype=int)
        s = sim[rows, cols]
        for a, alpha in enumerate(alphas):
            ok = s >= alpha - _EPS
            n = int(ok.sum())
            tp[a] += n
            fn[a] += len(g_ids) - n
            fp[a] += len(t_ids) - n
            if n:
                loca[a] += s[ok].sum()
                matches[a, g_ids[rows[ok]], t_ids[cols[ok]]] += 1
    assa = np.zeros(A)
    for a in range(A):
        mc = matches[a]
        ass = mc / np.maximum(1, gt_count + tr_count - mc)
        assa[a] = np.sum(mc * ass) / max(1.0, tp[a])
    return tp, fn, fp, assa, loca


def _sequence_stats(pred: TrackSet, gt: TrackSet, cfg: MotConfig) -> _SeqStats:
    frames, n_gt, n_tr = _frames(pred, gt, cfg)
    st = _SeqStats()
    _clear(frames, n_gt, cfg, st)
    _identity(frames, n_gt, n_tr, cfg, st)
    st.h_tp, st.h_fn, st.h_fp, st.h_assa, st.h_loca = hota_association(frames, n_gt, n_tr, cfg.hota_alphas)
    return st


def _hota_from(tp, fn, fp, assa) -> tuple[float, float, float]:
    deta = tp / np.maximum(1.0, tp + fn + fp)
    hota = np.sqrt(deta * assa)
    return float(hota.mean()), float(deta.mean()), float(assa.mean())


def _report(stats: list[_SeqStats], per_seq: dict[str, float]) -> MotReport:
    tp = sum(s.tp for s in stats)
    fp = sum(s.fp for s in stats)
    fn = sum(s.fn for s in stats)
    idsw = sum(s.idsw for s in stats)
    gt_count = tp + fn
    idtp = sum(s.idtp for s in stats)
    n_gt_dets = sum(s.n_gt_dets for s in stats)
    n_tr_dets = sum(s.n_tr_dets for s in stats)
    h_tp = sum(s.h_tp for s in stats)
    h_fn = sum(s.h_fn for s in stats)
    h_fp = sum(s.h_fp for s in stats)
    h_assa = sum(s.h_assa * s.h_tp for s in stats) / np.maximum(1e-10, h_tp)
    h_loca = sum(s.h_loca for s in stats)
    hota, deta, assa = _hota_from(h_tp, h_fn, h_fp, h_assa)
    loca = float((np.maximum(1e-10, h_loca) / np.maximum(1e-10, h_tp)).mean())
    return MotReport(
        HOTA=hota, DetA=deta, AssA=assa, LocA=loca,
        MOTA=mota_from_counts(fp, fn, idsw, max(1, gt_count)),
        MOTP=sum(s.motp_sum for s in stats) / max(1, tp),
        IDF1=idtp / max(1.0, 0.5 * (n_gt_dets + n_tr_dets)),
        IDP=idtp / max(1, n_tr_dets), IDR=idtp / max(1, n_gt_dets),
        MT=sum(s.mt for s in stats), PT=sum(s.pt for s in stats), ML=sum(s.ml for s in stats),
        TP=tp, FP=fp, FN=fn, IDs=idsw, Frag=sum(s.frag for s in stats),
        Re=tp / max(1, gt_count), Pr=tp / max(1, tp + fp),
        GT_count=gt_count, num_gt_tracks=sum(s.n_gt_tracks for s in stats),
        per_sequence=per_seq,
    )


def _as_map(ts) -> dict[str, TrackSet]:
    if isinstance(ts, TrackSet):
        return {ts.sequence_id: ts}
    return dict(ts)


def _pairs(pred, gt):
    gts, preds = _as_map(gt), _as_map(pred)
    if isinstance(gt, TrackSet) and isinstance(pred, TrackSet):
        preds = {gt.sequence_id: pred}
    extra = set(preds) - set(gts)
    if extra:
        raise FrameMismatch(f"predictions for unknown sequences {sorted(extra)}")
    for seq in sorted(gts):
        yield seq, preds.get(seq, TrackSet(seq, list(gts[seq].frames), [])), gts[seq]


def evaluate_mot(pred: TrackSet | Mapping[str, TrackSet], gt: TrackSet | Mapping[str, TrackSet],
                 cfg: MotConfig | None = None) -> MotReport:
    cfg = cfg or MotConfig()
    stats, per_seq = [], {}
    for seq, p, g in _pairs(pred, gt):
        st = _sequence_stats(p, g, cfg)
        stats.append(st)
        per_seq[seq] = _hota_from(st.h_tp, st.h_fn, st.h_fp, st.h_assa)[0]
    return _report(stats, per_seq)


def per_sequence_hota(pred, gt, cfg: MotConfig | None = None) -> dict[str, float]:
    return evaluate_mot(pred, gt, cfg).per_sequence


def mota_from_counts(fp: int, fn: int, idsw: int, gt_count: float) -> float:
    return 1.0 - (fn + fp + idsw) / gt_count


def gt_count_from_recall(fn: int, recall: float) -> float:
    """Number of GT detections implied by FN and recall (Re = TP / GT)."""
    if not 0 <= recall < 1:
        raise ValueError("recall must lie in [0, 1)")
    return fn / (1.0 - recall)
