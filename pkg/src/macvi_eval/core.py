"""Domain types shared by every evaluator.

Frame ids are opaque hashables (ints for COCO/MOT exports, strings elsewhere);
ordering always comes from an explicit manifest, never from sorting the ids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

FrameId = Hashable

OBSTACLE, WATER, SKY, IGNORE = 0, 1, 2, 4
RASTER_CLASSES = frozenset({OBSTACLE, WATER, SKY, IGNORE})


class EvalError(ValueError):
    """Base class for input errors raised by the evaluators."""


class UnknownClass(EvalError):
    pass


class UnknownFrame(EvalError):
    pass


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


@dataclass(frozen=True, slots=True)
class BBox:
    """Axis-aligned box in pixels, (x, y) is the top-left corner.

    Construction does not reject degenerate boxes so that parsers can hand
    them to :func:`validate_dataset`; use :attr:`is_valid` to check.
    """

    x: float
    y: float
    w: float
    h: float

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return self.x + 0.5 * self.w, self.y + 0.5 * self.h

    @property
    def is_valid(self) -> bool:
        coords = (self.x, self.y, self.w, self.h)
        return all(math.isfinite(c) for c in coords) and self.w > 0 and self.h > 0

    def pixel_span(self) -> tuple[int, int, int, int]:
        """Rasterized extent ``(c0, r0, c1, r1)``, end-exclusive, rounding half up."""
        return (round_half_up(self.x), round_half_up(self.y),
                round_half_up(self.x2), round_half_up(self.y2))

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True, slots=True)
class DetectionRecord:
    frame_id: FrameId
    bbox: BBox
    class_id: int
    score: float = 1.0


@dataclass(frozen=True, slots=True)
class GroundTruthRecord:
    frame_id: FrameId
    bbox: BBox
    class_id: int
    ignore: bool = False
    exhaustive: bool = True
    id: int | None = None


# (lo, hi) inclusive ranges of the sensor metadata shipped with the UAV data.
# Longitude spans +-180; a +-90 bound would reject valid positions.
META_RANGES: dict[str, tuple[float, float]] = {
    "time_since_start_ms": (0.0, math.inf),
    "latitude": (-90.0, 90.0),
    "longitude": (-180.0, 180.0),
    "altitude": (0.0, math.inf),
    "gimbal_pitch": (0.0, 90.0),
    "uav_roll": (-90.0, 90.0),
    "uav_pitch": (-90.0, 90.0),
    "uav_yaw": (-180.0, 180.0),
    "speed_x": (0.0, math.inf),
    "speed_y": (0.0, math.inf),
    "speed_z": (0.0, math.inf),
}
META_TEXT_FIELDS = ("camera_id", "timestamp")


@dataclass(frozen=True, slots=True)
class FrameMeta:
    """Per-frame sensor metadata. Absent values are ``None``, never sentinels."""

    altitude: float | None = None
    gimbal_pitch: float | None = None
    uav_roll: float | None = None
    uav_pitch: float | None = None
    uav_yaw: float | None = None
    speed_x: float | None = None
    speed_y: float | None = None
    speed_z: float | None = None
    camera_id: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    timestamp: str | None = None
    time_since_start_ms: float | None = None

    def get(self, key: str):
        return getattr(self, key)

    def present(self) -> dict[str, object]:
        return {k: getattr(self, k) for k in self.__slots__ if getattr(self, k) is not None}

    def range_violations(self) -> list[str]:
        out = []
        for key, (lo, hi) in META_RANGES.items():
            v = getattr(self, key)
            if v is None:
                continue
            if not (isinstance(v, (int, float)) and lo <= v <= hi):
                out.append(key)
        return out


@dataclass(frozen=True)
class ClassTable:
    """Ordered category table; ``ids`` default to ``0..n-1``."""

    names: tuple[str, ...]
    ids: tuple[int, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        ids = tuple(self.ids) if self.ids else tuple(range(len(names)))
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate class names in {names}")
        if len(ids) != len(names) or len(set(ids)) != len(ids):
            raise ValueError("class ids must be unique and match names")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.ids

    def name_of(self, class_id: int) -> str:
        try:
            return self.names[self.ids.index(class_id)]
        except ValueError:
            raise UnknownClass(f"class id {class_id!r} not in {dict(zip(self.ids, self.names))}") from None

    @property
    def is_binary(self) -> bool:
        return self.names == ("non-water",)

    def binary(self) -> "ClassTable":
        """Collapse to the single ``non-water`` class. Idempotent."""
        if self.is_binary:
            return self
        return ClassTable(("non-water",), (self.ids[0],))

    def project(self, class_id: int) -> int:
        """Map a class id of the source table into this table."""
        if self.is_binary:
            return self.ids[0]
        if class_id not in self:
            raise UnknownClass(f"class id {class_id!r} not in table")
        return class_id

    @classmethod
    def od(cls) -> "ClassTable":
        return cls(("swimmer", "boat", "jetski", "life_saving_appliance", "buoy"), (1, 2, 3, 4, 5))

    @classmethod
    def mot(cls) -> "ClassTable":
        return cls(("object",), (1,))

    @classmethod
    def usv(cls) -> "ClassTable":
        return cls(("vessel", "person", "other"), (1, 2, 3))


@dataclass(frozen=True, slots=True)
class TrackEntry:
    frame_id: FrameId
    track_id: int
    bbox: BBox
    score: float = 1.0
    class_id: int = 1
    visibility: float = -1.0


@dataclass
class TrackSet:
    """Identity-labelled boxes of one sequence, ``frames`` is the frame manifest."""

    sequence_id: str
    frames: list
    entries: list[TrackEntry] = field(default_factory=list)

    def __post_init__(self):
        if len(set(self.frames)) != len(self.frames):
            raise EvalError(f"sequence {self.sequence_id}: repeated frame ids in manifest")
        seen = set()
        for e in self.entries:
            key = (e.frame_id, e.track_id)
            if key in seen:
                raise EvalError(f"sequence {self.sequence_id}: duplicate (frame, id) {key}")
            seen.add(key)

    def by_frame(self) -> dict:
        out = {f: [] for f in self.frames}
        for e in self.entries:
            if e.frame_id not in out:
                raise UnknownFrame(f"sequence {self.sequence_id}: frame {e.frame_id!r} not in manifest")
            out[e.frame_id].append(e)
        return out

    def subset(self, frames: Iterable) -> "TrackSet":
        keep = set(frames)
        return TrackSet(self.sequence_id, [f for f in self.frames if f in keep],
                        [e for e in self.entries if e.frame_id in keep])


@dataclass(frozen=True)
class SegmentationRaster:
    """Row-major 8-bit raster, values are class indices (or 0/1 for zone masks)."""

    width: int
    height: int
    data: bytes

    def __post_init__(self):
        if len(self.data) != self.width * self.height:
            raise EvalError(f"raster data has {len(self.data)} bytes, expected {self.width * self.height}")

    @classmethod
    def from_array(cls, arr) -> "SegmentationRaster":
        import numpy as np

        arr = np.ascontiguousarray(arr, dtype=np.uint8)
        h, w = arr.shape
        return cls(w, h, arr.tobytes())

    def to_array(self):
        import numpy as np

        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width)


Polyline = Sequence[tuple[float, float]]


@dataclass
class WaterEdgePolyline:
    """Ground-truth water edge: ``frames[frame_id]`` is a list of polylines."""

    frames: dict = field(default_factory=dict)

    def polylines(self, frame_id) -> list:
        return self.frames.get(frame_id, [])


@dataclass(frozen=True, slots=True)
class Violation:
    kind: str
    where: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> list[str]:
        return [v.kind for v in self.violations]


def validate_dataset(gts: Iterable[GroundTruthRecord],
                     meta: Mapping[FrameId, FrameMeta] | None = None) -> ValidationReport:
    report = ValidationReport()
    seen_ids: set[int] = set()
    for i, g in enumerate(gts):
        where = f"annotation {g.id if g.id is not None else i} (frame {g.frame_id})"
        if not g.bbox.is_valid:
            report.violations.append(Violation("degenerate_bbox", where, f"degenerate bbox {g.bbox.as_list()}"))
        if g.id is not None:
            if g.id in seen_ids:
                report.violations.append(Violation("duplicate_id", where, f"duplicate annotation id {g.id}"))
            seen_ids.add(g.id)
    for frame_id, m in (meta or {}).items():
        for key in m.range_violations():
            lo, hi = META_RANGES[key]
            report.violations.append(Violation(
                "meta_out_of_range", f"frame {frame_id}",
                f"{key}={m.get(key)!r} out of range [{lo}, {hi}]"))
    return report
