"""Ground-truth directories and per-track evaluation from raw submission bytes.

Shared by the command line and the service, so both produce the same report
for the same inputs.
"""
from __future__ import annotations

import io
import zipfile
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Mapping

from .core import BBox, ClassTable, EvalError, FrameMeta, GroundTruthRecord, SegmentationRaster, TrackSet, WaterEdgePolyline
from .formats import (CocoFile, frame_key, parse_coco_json, parse_mot_csv, read_mask_dir, read_mask_pgm,
                      read_meta_sidecar, read_water_edges, report_json)
from .mot import evaluate_mot
from .od import evaluate_od
from .seg import evaluate_seg
from .usvdet import evaluate_usv_det


class MissingInput(EvalError):
    pass


@dataclass
class GroundTruthDir:
    """Lazy view of a ground-truth directory (see :mod:`macvi_eval.fixtures` for the layout)."""

    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def _path(self, name: str) -> Path:
        p = self.root / name
        if not p.exists():
            raise MissingInput(f"missing ground-truth file: {p}")
        return p

    @cached_property
    def coco(self) -> CocoFile:
        return parse_coco_json(self._path("coco.json").read_bytes())

    @property
    def gts(self) -> list[GroundTruthRecord]:
        return self.coco.records

    @property
    def frames(self) -> list:
        return self.coco.frames or list(dict.fromkeys(g.frame_id for g in self.gts))

    @cached_property
    def classes(self) -> ClassTable:
        return classes_from_coco(self.coco)

    @cached_property
    def tracks(self) -> TrackSet:
        return parse_mot_csv(self._path("tracks.txt").read_bytes(), "seq", frames=self.frames)

    @cached_property
    def meta(self) -> dict[object, FrameMeta]:
        p = self.root / "meta.json"
        return read_meta_sidecar(p.read_bytes()) if p.exists() else {}

    @cached_property
    def edges(self) -> WaterEdgePolyline:
        return read_water_edges(self._path("edges.json").read_bytes())

    @cached_property
    def zone_masks(self) -> dict:
        return read_mask_dir(self._path("zone"), allowed=(0, 1))

    def boxes_by_frame(self) -> dict[object, list[BBox]]:
        out: dict = {f: [] for f in self.frames}
        for g in self.gts:
            if not g.ignore:
                out.setdefault(g.frame_id, []).append(g.bbox)
        return out


def classes_from_coco(cf: CocoFile) -> ClassTable:
    """Class table from the listed categories (minus ``ignored``), else from the annotations."""
    cats = [c for c in cf.categories if c.get("name") != "ignored"]
    if not cats:
        ids = sorted({g.class_id for g in cf.records if not g.ignore})
        return ClassTable(tuple(f"class{i}" for i in ids), tuple(ids))
    return ClassTable(tuple(c["name"] for c in cats), tuple(c["id"] for c in cats))


def read_mask_zip(data: bytes) -> dict[object, SegmentationRaster]:
    """Masks bundled as ``<frame>.pgm`` members of a zip archive."""
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile:
        raise EvalError("segmentation payload must be a zip of .pgm masks") from None
    out = {}
    with zf:
        for name in sorted(zf.namelist()):
            if name.endswith(".pgm"):
                out[frame_key(Path(name).stem)] = read_mask_pgm(zf.read(name))
    return out


def load_masks(path: Path) -> dict:
    return read_mask_dir(path) if path.is_dir() else read_mask_zip(path.read_bytes())


def evaluate_track(track: str, payload: bytes | Mapping, gt: GroundTruthDir, *, jobs: int = 1,
                   curves: bool = False) -> dict:
    """Evaluate one submission payload and return the report as a plain dict.

    ``payload`` is file content (COCO detections, MOT CSV, or a zip of masks);
    for ``usv-seg`` an already-parsed mask mapping is accepted too.
    """
    if track in ("od", "od-binary"):
        preds = _detections(payload)
        rep = evaluate_od(preds, gt.gts, gt.classes, binary=track == "od-binary", frames=gt.frames, jobs=jobs)
        return rep.to_dict(curves=curves)
    if track == "mot":
        pred = parse_mot_csv(payload, gt.tracks.sequence_id, frames=gt.tracks.frames)
        return evaluate_mot(pred, gt.tracks).to_dict()
    if track == "usv-det":
        preds = _detections(payload)
        return evaluate_usv_det(preds, gt.gts, gt.edges, gt.zone_masks, gt.classes, frames=gt.frames).to_dict()
    if track == "usv-seg":
        masks = payload if isinstance(payload, Mapping) else read_mask_zip(payload)
        return evaluate_seg(masks, gt.boxes_by_frame(), gt.edges, gt.zone_masks, frames=gt.frames).to_dict()
    raise EvalError(f"unknown track {track!r}")


def _detections(payload: bytes):
    cf = parse_coco_json(payload)
    if cf.kind != "pred":
        raise EvalError("expected a COCO detection list")
    return cf.records


def primary_keys(track: str) -> tuple[str, ...]:
    """Report keys ranking a leaderboard, most significant first."""
    return {"od": ("AP", "AP50"), "od-binary": ("AP", "AP50"), "mot": ("HOTA", "MOTA"),
            "usv-seg": ("avg_score",), "usv-det": ("f1_avg",)}[track]


def track_report_json(track: str, report: dict) -> bytes:
    return report_json(report, track)
