import pytest
from hypothesis import given, strategies as st

from macvi_eval.core import BBox, ClassTable, DetectionRecord, GroundTruthRecord
from macvi_eval.od import TIDE_CATEGORIES, tide_decompose

from oracles import box_iou

TWO = ClassTable(("a", "b"), (1, 2))


def gt(f, x, y, w, h, c=1):
    return GroundTruthRecord(f, BBox(x, y, w, h), c)


def det(f, x, y, w, h, c=1, s=1.0):
    return DetectionRecord(f, BBox(x, y, w, h), c, s)


def only(counts, **expected):
    full = {c: 0 for c in TIDE_CATEGORIES}
    full.update(expected)
    return counts == full


def test_all_correct_has_no_errors():
    gts = [gt(1, 0, 0, 10, 10), gt(1, 30, 30, 10, 10, 2)]
    r = tide_decompose([det(g.frame_id, *g.bbox.as_list(), g.class_id) for g in gts], gts, TWO)
    assert only(r.counts)
    assert all(v == 0.0 for v in r.delta_ap.values())
    assert r.base_ap == 1.0 and r.num_tp == 2


def test_duplicate_on_matched_gt():
    gts = [gt(1, 0, 0, 10, 10)]
    r = tide_decompose([det(1, 0, 0, 10, 10, s=0.9), det(1, 1, 0, 10, 10, s=0.5)], gts, TWO)
    assert only(r.counts, duplicate=1)
    assert r.delta_ap["duplicate"] >= 0


def test_localization_error():
    # 30/100 overlap with the right class
    r = tide_decompose([det(1, 0, 0, 10, 3)], [gt(1, 0, 0, 10, 10)], TWO)
    assert only(r.counts, localization=1, missed=1)
    assert r.delta_ap["localization"] == pytest.approx(1.0)


@pytest.mark.parametrize("pred, category", [
    (det(1, 0, 0, 10, 10, c=2), "classification"),   # perfect box, wrong label
    (det(1, 0, 0, 10, 3, c=2), "both"),              # poor box, wrong label
    (det(1, 50, 50, 10, 10), "background"),          # nothing nearby
    (det(1, 0, 0, 10, 0.5), "background"),           # overlap below 0.1
])
def test_single_error_taxonomy(pred, category):
    r = tide_decompose([pred], [gt(1, 0, 0, 10, 10)], TWO)
    assert only(r.counts, **{category: 1, "missed": 1})


def test_missed_only():
    r = tide_decompose([], [gt(1, 0, 0, 10, 10), gt(1, 20, 20, 5, 5)], TWO)
    assert only(r.counts, missed=2)


def test_fixing_misses_lifts_recall():
    gts = [gt(1, 0, 0, 10, 10), gt(1, 20, 20, 5, 5)]
    r = tide_decompose([det(1, 0, 0, 10, 10)], gts, TWO)
    assert only(r.counts, missed=1)
    assert r.base_ap == pytest.approx(0.5, abs=0.01)
    assert r.base_ap + r.fn_delta_ap == 1.0
    assert r.delta_ap["missed"] == r.fn_delta_ap


def test_fixing_a_classification_error_recovers_the_box():
    gts = [gt(1, 0, 0, 10, 10)]
    r = tide_decompose([det(1, 0, 0, 10, 10, c=2)], gts, TWO)
    assert r.base_ap == 0.0
    assert r.delta_ap["classification"] == pytest.approx(1.0)
    assert r.delta_ap["background"] == 0.0


def _oracle_categories(preds, gts, pos=0.5, bg=0.1):
    """Independent taxonomy: score-ordered same-class matching, then per-FP thresholds."""
    counts = {c: 0 for c in TIDE_CATEGORIES}
    taken = set()
    for i, p in sorted(enumerate(preds), key=lambda ip: -ip[1].score):
        cands = [(box_iou(p.bbox.as_list(), g.bbox.as_list()), j) for j, g in enumerate(gts)
                 if g.class_id == p.class_id and j not in taken]
        cands = [c for c in cands if c[0] >= pos]
        if cands:
            taken.add(max(cands, key=lambda c: (c[0], -c[1]))[1])  # ties go to the lower index
            continue
        same = max([box_iou(p.bbox.as_list(), g.bbox.as_list()) for g in gts if g.class_id == p.class_id], default=0.0)
        other = max([box_iou(p.bbox.as_list(), g.bbox.as_list()) for g in gts if g.class_id != p.class_id], default=0.0)
        if bg <= same < pos:
            counts["localization"] += 1
        elif other >= pos:
            counts["classification"] += 1
        elif same >= pos:
            counts["duplicate"] += 1
        elif max(same, other) < bg:
            counts["background"] += 1
        else:
            counts["both"] += 1
    counts["missed"] = len(gts) - len(taken)
    return counts


box = st.tuples(st.integers(0, 15), st.integers(0, 15), st.integers(2, 9), st.integers(2, 9))


@st.composite
def scene(draw):
    gts = [gt(1, *b, c=draw(st.integers(1, 2))) for b in draw(st.lists(box, max_size=4))]
    n = draw(st.integers(0, 5))
    scores = draw(st.lists(st.integers(1, 999), min_size=n, max_size=n, unique=True))
    preds = [det(1, *draw(box), c=draw(st.integers(1, 2)), s=s / 1000) for s in scores]
    return preds, gts


@given(scene())
def test_taxonomy_matches_oracle_and_partitions_errors(inst):
    preds, gts = inst
    r = tide_decompose(preds, gts, TWO)
    assert r.counts == _oracle_categories(preds, gts)
    fp_total = sum(r.counts[c] for c in TIDE_CATEGORIES if c != "missed")
    assert fp_total == len(preds) - r.num_tp
    assert r.counts["missed"] == len(gts) - r.num_tp
