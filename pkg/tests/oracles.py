"""Slow, obviously-correct reference implementations used as test oracles.

Nothing here imports the engine's metric code; they only share the data
types. Loops are deliberately naive.
"""
from __future__ import annotations

import itertools
import math
from collections import deque

import numpy as np


def box_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


# --- detection AP by enumerating score cuts -----------------------------------------

def _greedy_tp(frames_preds, frames_gts, thr) -> int:
    """TP count of a set of predictions, matched frame by frame in score order."""
    tp = 0
    for f, preds in frames_preds.items():
        gts = frames_gts.get(f, [])
        taken = [False] * len(gts)
        for _, box in sorted(preds, key=lambda p: -p[0]):
            best, best_j = -1.0, -1
            for j, g in enumerate(gts):
                if taken[j]:
                    continue
                v = box_iou(box, g)
                if v >= thr and v > best:
                    best, best_j = v, j
            if best_j >= 0:
                taken[best_j] = True
                tp += 1
    return tp


def ap_table_by_cuts(preds, gts, thresholds, grid=None):
    """Interpolated precision ``[t][r]`` for one class.

    ``preds``: list of (frame, score, box) with distinct scores; ``gts``: list of
    (frame, box). For every cut keeping the k highest scores the TP count is
    recomputed from scratch; precision at recall ``r`` is the best precision
    of any cut reaching ``r``.
    """
    grid = np.linspace(0.0, 1.0, 101) if grid is None else grid
    n_gt = len(gts)
    by_gt: dict = {}
    for f, b in gts:
        by_gt.setdefault(f, []).append(b)
    ranked = sorted(preds, key=lambda p: -p[1])
    table = []
    for thr in thresholds:
        points = []
        for k in range(1, len(ranked) + 1):
            kept: dict = {}
            for f, s, b in ranked[:k]:
                kept.setdefault(f, []).append((s, b))
            tp = _greedy_tp(kept, by_gt, thr)
            points.append((tp / n_gt, tp / k))
        row = []
        for r in grid:
            reach = [p for rc, p in points if rc >= r]
            row.append(max(reach) if reach else 0.0)
        table.append(row)
    return np.array(table)


# --- bipartite search -------------------------------------------------------------------

def partial_bijections(n_rows: int, n_cols: int):
    """Every one-to-one partial map rows -> cols, as a tuple of (row, col) pairs."""
    for k in range(min(n_rows, n_cols) + 1):
        for rows in itertools.combinations(range(n_rows), k):
            for cols in itertools.permutations(range(n_cols), k):
                yield tuple(zip(rows, cols))


def best_bijection(weight, allowed=None, tol=1e-9):
    """Maximum-total partial bijection over positive, allowed entries.

    Ties within ``tol`` go to the lexicographically smallest sorted pair list,
    where running out of pairs ranks after any further pair (so a set beats
    its own prefix).
    """
    n, m = len(weight), len(weight[0]) if len(weight) else 0
    best_total, best = 0.0, ()
    candidates = []
    for bij in partial_bijections(n, m):
        if any(weight[i][j] <= 0 or (allowed is not None and not allowed[i][j]) for i, j in bij):
            continue
        total = sum(weight[i][j] for i, j in bij)
        candidates.append((total, tuple(sorted(bij))))
        best_total = max(best_total, total)
    limit = best_total - tol * max(1.0, abs(best_total))
    end = ((math.inf, math.inf),)
    best = min((bij for total, bij in candidates if total >= limit), key=lambda b: b + end)
    return best_total, best


# --- tracking -------------------------------------------------------------------------

def idf1_oracle(gt_frames, pr_frames, thr=0.5):
    """``gt_frames``/``pr_frames``: list over frames of {id: box}. Returns (IDTP, IDF1)."""
    gt_ids = sorted({i for fr in gt_frames for i in fr})
    pr_ids = sorted({i for fr in pr_frames for i in fr})
    n_gt = sum(len(fr) for fr in gt_frames)
    n_pr = sum(len(fr) for fr in pr_frames)
    overlap = [[0] * len(pr_ids) for _ in gt_ids]
    for gf, pf in zip(gt_frames, pr_frames):
        for a, g in enumerate(gt_ids):
            for b, p in enumerate(pr_ids):
                if g in gf and p in pf and box_iou(gf[g], pf[p]) >= thr:
                    overlap[a][b] += 1
    best = 0
    for bij in partial_bijections(len(gt_ids), len(pr_ids)):
        best = max(best, sum(overlap[a][b] for a, b in bij))
    denom = 0.5 * (n_gt + n_pr)
    return best, (best / denom if denom else 0.0)


def hota_oracle(gt_frames, pr_frames, alphas):
    """HOTA, DetA, AssA by exhaustive per-frame assignment search.

    Follows the standard definition: a global alignment score weights the
    per-frame similarity, the best-scoring bijection of every frame is kept,
    and matches below alpha are discarded.
    """
    gt_ids = sorted({i for fr in gt_frames for i in fr})
    pr_ids = sorted({i for fr in pr_frames for i in fr})
    gi = {g: a for a, g in enumerate(gt_ids)}
    pi = {p: b for b, p in enumerate(pr_ids)}
    G, P = len(gt_ids), len(pr_ids)
    gt_n = [0] * G
    pr_n = [0] * P
    potential = [[0.0] * P for _ in range(G)]
    sims = []
    for gf, pf in zip(gt_frames, pr_frames):
        gl, pl = sorted(gf), sorted(pf)
        s = [[box_iou(gf[g], pf[p]) for p in pl] for g in gl]
        sims.append((gl, pl, s))
        for g in gl:
            gt_n[gi[g]] += 1
        for p in pl:
            pr_n[pi[p]] += 1
        for r, g in enumerate(gl):
            for c, p in enumerate(pl):
                row = sum(s[r])
                col = sum(s[k][c] for k in range(len(gl)))
                den = row + col - s[r][c]
                if den > 0:
                    potential[gi[g]][pi[p]] += s[r][c] / den
    gas = [[potential[a][b] / (gt_n[a] + pr_n[b] - potential[a][b]) if potential[a][b] > 0 else 0.0
            for b in range(P)] for a in range(G)]
    hotas, detas, assas = [], [], []
    chosen = []
    for gl, pl, s in sims:
        if not gl or not pl:
            chosen.append(())
            continue
        w = [[gas[gi[g]][pi[p]] * s[r][c] for c, p in enumerate(pl)] for r, g in enumerate(gl)]
        chosen.append(best_bijection(w)[1])
    for alpha in alphas:
        tp = fn = fp = 0
        mc = [[0] * P for _ in range(G)]
        for (gl, pl, s), bij in zip(sims, chosen):
            ok = [(r, c) for r, c in bij if s[r][c] >= alpha]
            tp += len(ok)
            fn += len(gl) - len(ok)
            fp += len(pl) - len(ok)
            for r, c in ok:
                mc[gi[gl[r]]][pi[pl[c]]] += 1
        ass = 0.0
        for a in range(G):
            for b in range(P):
                if mc[a][b]:
                    ass += mc[a][b] * mc[a][b] / (gt_n[a] + pr_n[b] - mc[a][b])
        assa = ass / tp if tp else 0.0
        deta = tp / (tp + fn + fp) if tp + fn + fp else 0.0
        detas.append(deta)
        assas.append(assa)
        hotas.append(math.sqrt(deta * assa))
    n = len(alphas)
    return sum(hotas) / n, sum(detas) / n, sum(assas) / n


# --- rasters ----------------------------------------------------------------------------

def flood_fill_components(mask, connectivity=8):
    """Sizes of the connected components of a boolean 2-D list/array, by BFS."""
    h, w = len(mask), len(mask[0])
    seen = [[False] * w for _ in range(h)]
    if connectivity == 8:
        steps = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    else:
        steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    sizes = []
    for r in range(h):
        for c in range(w):
            if not mask[r][c] or seen[r][c]:
                continue
            seen[r][c] = True
            q = deque([(r, c)])
            n = 0
            while q:
                y, x = q.popleft()
                n += 1
                for dr, dc in steps:
                    yy, xx = y + dr, x + dc
                    if 0 <= yy < h and 0 <= xx < w and mask[yy][xx] and not seen[yy][xx]:
                        seen[yy][xx] = True
                        q.append((yy, xx))
            sizes.append(n)
    return sizes


def polyline_rows(polyline, width):
    """Column -> edge row, rows rounded half up; first segment covering a column wins."""
    out = {}
    for (x0, y0), (x1, y1) in zip(polyline, polyline[1:]):
        for c in range(width):
            if c in out or not (min(x0, x1) <= c <= max(x0, x1)):
                continue
            y = y0 if x1 == x0 else y0 + (y1 - y0) * (c - x0) / (x1 - x0)
            out[c] = math.floor(y + 0.5)
    return out


def edge_metrics_oracle(mask, polylines, theta=20.0):
    """(mu_A, mu_R) scanning each column of a class raster from the top."""
    h, w = len(mask), len(mask[0])
    sq, n_det, n_in, n_all = 0.0, 0, 0, 0
    for pl in polylines:
        for c, e in sorted(polyline_rows(pl, w).items()):
            n_all += 1
            best = None
            for k in range(1, h):
                if (mask[k - 1][c] == 1) != (mask[k][c] == 1):
                    d = abs(k - e)
                    best = d if best is None else min(best, d)
            if best is None:
                continue
            n_det += 1
            sq += best * best
            if best < theta:
                n_in += 1
    mu_a = math.sqrt(sq / n_det) if n_det else math.nan
    mu_r = 100.0 * n_in / n_all if n_all else math.nan
    return mu_a, mu_r


# --- danger zone -------------------------------------------------------------------------

def zone_mask_raycast(fx, fy, cx, cy, width, height, cam_h, pitch, roll, radius, hull_offset=0.0):
    """Per-pixel ray cast with a scipy rotation (camera -> world)."""
    from scipy.spatial.transform import Rotation

    rot = Rotation.from_euler("x", -(90.0 + pitch), degrees=True) * Rotation.from_euler("z", roll, degrees=True)
    out = np.zeros((height, width), dtype=np.uint8)
    for v in range(height):
        for u in range(width):
            d = rot.apply([(u + 0.5 - cx) / fx, (v + 0.5 - cy) / fy, 1.0])
            if d[2] >= 0:
                continue
            t = cam_h / -d[2]
            if math.hypot(t * d[0], t * d[1] - hull_offset) <= radius:
                out[v, u] = 1
    return out
