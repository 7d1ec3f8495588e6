import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from macvi_eval.core import BBox
from macvi_eval.geometry import (DEFAULT_ZONE_RADIUS, CameraModel, DangerZoneSpec, NoGroundVisible, in_zone_fraction,
                                 iou, iou_matrix, project_danger_zone, zone_boundary_rows)
from oracles import box_iou, zone_mask_raycast

coord = st.floats(-50, 50, allow_nan=False)
size = st.floats(0.5, 40, allow_nan=False)
boxes = st.builds(BBox, coord, coord, size, size)


def test_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(20, 20, 5, 5)) == 0.0
    assert iou(a, BBox(5, 5, 10, 10)) == pytest.approx(25 / 175)


@given(boxes, boxes)
def test_iou_symmetric_bounded_and_matches_oracle(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(box_iou(a.as_list(), b.as_list()), abs=1e-12)


@given(boxes, boxes, st.integers(-20, 20), st.integers(-20, 20))
def test_iou_translation_invariant(a, b, dx, dy):
    assert iou(a.translated(dx, dy), b.translated(dx, dy)) == pytest.approx(iou(a, b), abs=1e-12)


@given(st.lists(boxes, min_size=1, max_size=5), st.lists(boxes, min_size=1, max_size=5))
def test_iou_matrix_agrees_with_pairwise(a, b):
    m = iou_matrix(np.array([x.as_list() for x in a]), np.array([x.as_list() for x in b]))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            assert m[i, j] == pytest.approx(iou(x, y), abs=1e-12)


def test_default_radius_from_speed_and_horizon():
    assert DEFAULT_ZONE_RADIUS == 1.5 * 10
    assert DangerZoneSpec().radius == 15.0


def test_zone_all_out_when_looking_above_horizon():
    cam = CameraModel.from_fov(64, 48, 60)
    spec = DangerZoneSpec(camera_height=1.0, pitch=-80.0)
    assert project_danger_zone(cam, spec).to_array().sum() == 0
    with pytest.raises(NoGroundVisible):
        project_danger_zone(cam, spec, require_ground=True)


def test_zone_left_right_symmetric_without_roll():
    cam = CameraModel.from_fov(80, 60, 70)
    m = project_danger_zone(cam, DangerZoneSpec(camera_height=1.0, pitch=10.0)).to_array()
    assert m.any()
    assert (m == m[:, ::-1]).all()


def test_zone_boundary_closed_form_pitch_30():
    # h=1, pitch 30 deg down: at the principal column the boundary row is where the
    # depression angle equals atan(1/15)
    cam = CameraModel(100.0, 100.0, 50.0, 50.0, 101, 100)
    m = project_danger_zone(cam, DangerZoneSpec(radius=15.0, camera_height=1.0, pitch=30.0)).to_array()
    rows = zone_boundary_rows(m)
    angle = math.radians(30.0) - math.atan(1 / 15)
    expected = 50.0 - 100.0 * math.tan(angle)  # image row of the boundary ray (continuous)
    assert abs(rows[50] - expected) <= 1.0


@pytest.mark.parametrize("seed", range(20))
def test_zone_boundary_matches_raycast_oracle(seed):
    rng = np.random.default_rng(seed)
    h, pitch, roll = rng.uniform(0.5, 3.0), rng.uniform(-5.0, 25.0), rng.uniform(-15.0, 15.0)
    cam = CameraModel.from_fov(48, 36, rng.uniform(50, 90))
    ours = zone_boundary_rows(project_danger_zone(cam, DangerZoneSpec(camera_height=h, pitch=pitch, roll=roll)))
    ref = zone_boundary_rows(zone_mask_raycast(cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height,
                                               h, pitch, roll, 15.0))
    both = (ours >= 0) & (ref >= 0)
    assert np.abs(ours[both] - ref[both]).max(initial=0) <= 1
    assert ((ours >= 0) == (ref >= 0)).all()


@given(st.floats(2, 30), st.floats(2, 30), st.floats(-5, 30))
def test_zone_monotone_in_radius(r1, r2, pitch):
    lo, hi = sorted((r1, r2))
    cam = CameraModel.from_fov(40, 30, 60)
    a = project_danger_zone(cam, DangerZoneSpec(radius=lo, pitch=pitch)).to_array()
    b = project_danger_zone(cam, DangerZoneSpec(radius=hi, pitch=pitch)).to_array()
    assert (a <= b).all()


def _half_zone(top=10):
    z = np.zeros((20, 20), dtype=np.uint8)
    z[top:] = 1
    return z


def test_in_zone_fraction_inside_outside():
    z = _half_zone()
    assert in_zone_fraction(BBox(2, 12, 5, 5), z) == 1.0
    assert in_zone_fraction(BBox(2, 1, 5, 5), z) == 0.0


@pytest.mark.parametrize("y", [5.5, 5.6, 6.0, 6.4, 6.5])
def test_in_zone_fraction_straddling_midline(y):
    z = _half_zone()
    b = BBox(3, y, 4, 8)   # midline near row 10
    naive = sum(z[r, c] for r in range(20) for c in range(20)
                if math.floor(b.x + .5) <= c < math.floor(b.x2 + .5) and math.floor(b.y + .5) <= r < math.floor(b.y2 + .5))
    n_pix = (math.floor(b.x2 + .5) - math.floor(b.x + .5)) * (math.floor(b.y2 + .5) - math.floor(b.y + .5))
    f = in_zone_fraction(b, z)
    assert f == naive / n_pix
    assert abs(f - 0.5) <= 1 / 8 + 1e-12


@given(st.integers(0, 19), st.integers(0, 19), boxes)
def test_in_zone_fraction_monotone_under_growth(t1, t2, b):
    lo, hi = sorted((t1, t2))
    assert in_zone_fraction(b, _half_zone(hi)) <= in_zone_fraction(b, _half_zone(lo))


@given(boxes)
def test_iou_of_a_box_with_itself_is_exactly_one(a):
    assert iou(a, a) == 1.0
    assert iou_matrix(np.array([a.as_list()]), np.array([a.as_list()]))[0, 0] == 1.0
