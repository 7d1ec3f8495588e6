"""Metadata-stratified re-evaluation and 2-D meta histograms."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .core import FrameMeta

log = logging.getLogger(__name__)

UNKNOWN = "unknown"

# UAV carrying each camera model of the UAV object-detection data.
CAMERA_TO_UAV = {
    "L1D-20C": "Mavic",
    "RedEdge-MX": "Trinity",
    "UMC-R10C": "Trinity",
    "Zenmuse X5": "M100",
    "Zenmuse XT2": "M210",
    "Zenmuse Z30": "M210",
}


@dataclass(frozen=True)
class StratumSpec:
    """Numeric bins (``edges``) or categorical strata (``categories``).

    Numeric bins are half-open except the last, which is closed so that the
    maximum value is binned. Values outside the edges are clamped into the
    first/last bin.
    """

    key: str
    labels: tuple[str, ...]
    edges: tuple[float, ...] | None = None
    categories: tuple[tuple, ...] | None = None

    def __post_init__(self):
        if (self.edges is None) == (self.categories is None):
            raise ValueError("give exactly one of edges or categories")
        if self.edges is not None:
            e = list(self.edges)
            if any(b <= a for a, b in zip(e, e[1:])):
                raise ValueError("edges must be strictly increasing")
            if len(self.labels) != len(e) - 1:
                raise ValueError("need one label per bin")
        elif len(self.labels) != len(self.categories):
            raise ValueError("need one label per category group")
        if UNKNOWN in self.labels:
            raise ValueError(f"{UNKNOWN!r} is reserved")

    @classmethod
    def equidistant(cls, key: str, lo: float, hi: float, labels: Sequence[str]) -> "StratumSpec":
        n = len(labels)
        edges = tuple(float(v) for v in np.linspace(lo, hi, n + 1))
        return cls(key, tuple(labels), edges=edges)

    @classmethod
    def altitude(cls) -> "StratumSpec":
        return cls.equidistant("altitude", 5.0, 260.0, ("L", "M", "H"))

    @classmethod
    def gimbal_pitch(cls) -> "StratumSpec":
        return cls.equidistant("gimbal_pitch", 0.0, 90.0, ("A", "AR", "R"))

    @classmethod
    def camera(cls, camera_to_uav: Mapping[str, str] | None = None,
               uavs: Sequence[str] = ("Mavic", "M210", "Trinity")) -> "StratumSpec":
        mapping = camera_to_uav or CAMERA_TO_UAV
        groups = tuple(tuple(c for c, u in mapping.items() if u == uav) for uav in uavs)
        return cls("camera_id", tuple(uavs), categories=groups)

    def assign(self, value) -> str:
        if value is None:
            return UNKNOWN
        if self.categories is not None:
            for label, group in zip(self.labels, self.categories):
                if value in group:
                    return label
            return UNKNOWN
        e = self.edges
        if value < e[0] or value > e[-1]:
            log.warning("%s=%r outside [%s, %s], clamped", self.key, value, e[0], e[-1])
        k = int(np.searchsorted(e, value, side="right")) - 1
        return self.labels[min(max(k, 0), len(self.labels) - 1)]


def stratify(frames: Iterable, meta: Mapping, spec: StratumSpec) -> dict[str, list]:
    """Partition ``frames`` (order kept) by ``spec``; frames without the key go to ``unknown``."""
    out: dict[str, list] = {label: [] for label in spec.labels}
    out[UNKNOWN] = []
    for f in frames:
        m = meta.get(f)
        out[spec.assign(m.get(spec.key) if m is not None else None)].append(f)
    return out


def stratified_eval(evaluate: Callable[[list], object], partition: Mapping[str, list]) -> dict[str, object]:
    """Run ``evaluate(frames)`` per stratum; empty strata are absent from the result."""
    return {label: evaluate(list(frames)) for label, frames in partition.items() if frames}


def restrict_records(records: Iterable, frames: Iterable) -> list:
    keep = set(frames)
    return [r for r in records if r.frame_id in keep]


def meta_histogram2d(meta: Mapping[object, FrameMeta], key_x: str, key_y: str,
                     bins_x: Sequence[float], bins_y: Sequence[float]) -> np.ndarray:
    """Counts grid ``[i, j]`` over ``bins_x[i] x bins_y[j]``; frames missing either key are skipped."""
    xs, ys = [], []
    for m in meta.values():
        x, y = m.get(key_x), m.get(key_y)
        if x is None or y is None:
            continue
        xs.append(x)
        ys.append(y)
    counts, _, _ = np.histogram2d(np.asarray(xs, float), np.asarray(ys, float), bins=[np.asarray(bins_x, float), np.asarray(bins_y, float)])
    return counts.astype(int)
