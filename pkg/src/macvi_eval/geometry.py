"""Box geometry and the danger-zone projection.

Camera convention: x right, y down, z along the optical axis. World frame:
X right, Y forward, Z up, water plane at Z = 0 and the camera at Z = height.
Positive pitch tilts the optical axis down; positive roll rotates the image
x axis towards the image y axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BBox, EvalError, SegmentationRaster

CRUISE_SPEED_MPS = 1.5
HORIZON_S = 10.0
DEFAULT_ZONE_RADIUS = CRUISE_SPEED_MPS * HORIZON_S


class NoGroundVisible(EvalError):
    pass


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraModel":
        f = 0.5 * width / math.tan(math.radians(hfov_deg) / 2)
        return cls(f, f, width / 2, height / 2, width, height)


@dataclass(frozen=True)
class DangerZoneSpec:
    radius: float = DEFAULT_ZONE_RADIUS
    camera_height: float = 1.0
    roll: float = 0.0
    pitch: float = 0.0
    # forward offset of the zone centre from the camera nadir, metres
    hull_offset: float = 0.0

    def __post_init__(self):
        if self.radius <= 0 or self.camera_height <= 0:
            raise ValueError("radius and camera_height must be positive")


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from the same coordinate differences, so identical boxes give exactly 1
    union = (a.x2 - a.x) * (a.y2 - a.y) + (b.x2 - b.x) * (b.y2 - b.y) - inter
    return min(1.0, inter / union) if union > 0 else 0.0


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` xywh arrays."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, 0, None], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, 1, None], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = ((ax2 - a[:, 0]) * (ay2 - a[:, 1]))[:, None] + ((bx2 - b[:, 0]) * (by2 - b[:, 1]))[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / union, 0.0)
    return np.minimum(out, 1.0)


def intersection_over_first(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Intersection area divided by the area of each box in ``a``."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    if len(a) == 0 or len(b) == 0:
        return np.zeros((len(a), len(b)))
    iw = np.minimum((a[:, 0] + a[:, 2])[:, None], (b[:, 0] + b[:, 2])[None, :]) - np.maximum(a[:, 0, None], b[None, :, 0])
    ih = np.minimum((a[:, 1] + a[:, 3])[:, None], (b[:, 1] + b[:, 3])[None, :]) - np.maximum(a[:, 1, None], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = (((a[:, 0] + a[:, 2]) - a[:, 0]) * ((a[:, 1] + a[:, 3]) - a[:, 1]))[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.minimum(np.where(area > 0, inter / area, 0.0), 1.0)


def clip_span(b: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    c0, r0, c1, r1 = b.pixel_span()
    return max(c0, 0), max(r0, 0), min(c1, width), min(r1, height)


def rasterize_box(b: BBox, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    c0, r0, c1, r1 = clip_span(b, width, height)
    if c1 > c0 and r1 > r0:
        mask[r0:r1, c0:c1] = True
    return mask


def in_zone_fraction(b: BBox, zone_mask: SegmentationRaster | np.ndarray) -> float:
    """Fraction of the box's (clipped) raster pixels that are in the zone."""
    zone = zone_mask.to_array() if isinstance(zone_mask, SegmentationRaster) else np.asarray(zone_mask)
    h, w = zone.shape
    c0, r0, c1, r1 = clip_span(b, w, h)
    if c1 <= c0 or r1 <= r0:
        return 0.0
    patch = zone[r0:r1, c0:c1]
    return float(np.count_nonzero(patch)) / patch.size


def _ray_directions(cam: CameraModel, roll_deg: float, pitch_deg: float):
    cols = np.arange(cam.width) + 0.5
    rows = np.arange(cam.height) + 0.5
    a = ((cols - cam.cx) / cam.fx)[None, :]
    b = ((rows - cam.cy) / cam.fy)[:, None]
    phi, theta = math.radians(roll_deg), math.radians(pitch_deg)
    # roll about the optical axis
    ar = math.cos(phi) * a - math.sin(phi) * b
    br = math.sin(phi) * a + math.cos(phi) * b
    # camera axes in world: x -> (1,0,0), y(down) -> (0,-sin,-cos), z -> (0,cos,-sin)
    st, ct = math.sin(theta), math.cos(theta)
    dx = ar
    dy = -st * br + ct
    dz = -ct * br - st
    return np.broadcast_to(dx, (cam.height, cam.width)), dy, dz


def ground_distance_map(cam: CameraModel, zone: DangerZoneSpec) -> np.ndarray:
    """Distance on the water plane from the zone centre for every pixel; inf above the horizon."""
    dx, dy, dz = _ray_directions(cam, zone.roll, zone.pitch)
    hits = dz < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(hits, zone.camera_height / -dz, np.inf)
        gx = t * dx
        gy = t * dy - zone.hull_offset
        dist = np.where(hits, np.hypot(gx, gy), np.inf)
    return dist


def project_danger_zone(cam: CameraModel, zone: DangerZoneSpec, *,
                        require_ground: bool = False) -> SegmentationRaster:
    """Binary mask (1 = inside the danger zone) of the zone projected into the image.

    With ``require_ground`` a view that sees no water plane at all raises
    :class:`NoGroundVisible`; otherwise it yields an all-out mask.
    """
    dist = ground_distance_map(cam, zone)
    if require_ground and not np.isfinite(dist).any():
        raise NoGroundVisible("no pixel ray intersects the water plane")
    mask = (dist <= zone.radius).astype(np.uint8)
    return SegmentationRaster.from_array(mask)


def zone_boundary_rows(mask: SegmentationRaster | np.ndarray) -> np.ndarray:
    """Top-most in-zone row per column, -1 where the column has none."""
    arr = mask.to_array() if isinstance(mask, SegmentationRaster) else np.asarray(mask)
    inside = arr != 0
    top = np.argmax(inside, axis=0)
    return np.where(inside.any(axis=0), top, -1)
