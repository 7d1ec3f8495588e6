"""Assignment kernels: greedy score-ordered matching and optimal bipartite matching."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

_TIE_TOL = 1e-9


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]] = field(default_factory=list)
    unmatched_preds: list[int] = field(default_factory=list)
    unmatched_gts: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(sum(p[2] for p in self.pairs))

    def pred_to_gt(self) -> dict[int, int]:
        return {p: g for p, g, _ in self.pairs}


def greedy_match(ious: np.ndarray, threshold: float, allowed: np.ndarray | None = None) -> MatchResult:
    """Match predictions (rows, already in descending score order) to GTs (columns).

    Each prediction takes the free GT with the highest IoU >= ``threshold``;
    equal IoUs go to the lower GT index. ``allowed`` optionally masks pairs
    (e.g. class agreement).
    """
    ious = np.asarray(ious, dtype=float)
    n_pred, n_gt = ious.shape
    cand = ious >= threshold
    if allowed is not None:
        cand &= allowed
    # plain lists: the matrices are small and per-row numpy calls dominate otherwise
    rows, ok_rows = ious.tolist(), cand.tolist()
    free = [True] * n_gt
    res = MatchResult()
    for p in range(n_pred):
        row, ok = rows[p], ok_rows[p]
        best, g = -1.0, -1
        for j in range(n_gt):
            if ok[j] and free[j] and row[j] > best:   # strict: ties keep the lower index
                best, g = row[j], j
        if g < 0:
            res.unmatched_preds.append(p)
            continue
        free[g] = False
        res.pairs.append((p, g, best))
    res.unmatched_gts = [j for j in range(n_gt) if free[j]]
    return res


def _best_total(sim: np.ndarray) -> float:
    if sim.size == 0:
        return 0.0
    r, c = linear_sum_assignment(sim, maximize=True)
    return float(sim[r, c].sum())


def optimal_match(sim: np.ndarray, min_similarity: float = 0.0, *, lexicographic: bool = True) -> MatchResult:
    """Maximum-total-similarity one-to-one assignment of rows (GTs) to columns (preds).

    Pairs below ``min_similarity`` (and zero-similarity pairs) are forbidden.
    Among optimal assignments the lexicographically smallest sorted pair list
    is returned (a list ranks before its own prefixes), so the result does not
    depend on solver internals.
    """
    sim = np.asarray(sim, dtype=float)
    n_rows, n_cols = sim.shape
    work = np.where((sim >= min_similarity) & (sim > 0), sim, 0.0)
    res = MatchResult()
    if not work.any():
        res.unmatched_preds = list(range(n_cols))
        res.unmatched_gts = list(range(n_rows))
        return res
    if not lexicographic:
        r, c = linear_sum_assignment(work, maximize=True)
        chosen = [(int(i), int(j)) for i, j in zip(r, c) if work[i, j] > 0]
    else:
        chosen = _lex_min_optimal(work)
    used_r = {i for i, _ in chosen}
    used_c = {j for _, j in chosen}
    res.pairs = [(i, j, float(sim[i, j])) for i, j in sorted(chosen)]
    res.unmatched_gts = [i for i in range(n_rows) if i not in used_r]
    res.unmatched_preds = [j for j in range(n_cols) if j not in used_c]
    return res


def _lex_min_optimal(work: np.ndarray) -> list[tuple[int, int]]:
    rows = list(range(work.shape[0]))
    cols = list(range(work.shape[1]))
    target = _best_total(work)
    tol = _TIE_TOL * max(1.0, abs(target))
    chosen: list[tuple[int, int]] = []
    remaining = target
    while rows:
        i = rows[0]
        sub = work[np.ix_(rows, cols)]
        if not sub.any():
            break
        fixed = False
        for jj, j in enumerate(cols):
            v = work[i, j]
            if v <= 0:
                continue
            rest = np.delete(np.delete(sub, 0, axis=0), jj, axis=1)
            if v + _best_total(rest) >= remaining - tol:
                chosen.append((i, j))
                remaining -= v
                rows.pop(0)
                cols.pop(jj)
                fixed = True
                break
        if not fixed:
            rows.pop(0)  # row i stays unmatched in every optimum we still can reach
    return chosen
