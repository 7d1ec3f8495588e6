"""Parsers and writers for every exchange format.

All writers emit something their own parser accepts. Data files keep full
float precision; reports go through :func:`report_json`, which sorts keys and
rounds floats to four decimals.
"""
from __future__ import annotations

import json
import logging
import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .core import (BBox, DetectionRecord, EvalError, FrameMeta, GroundTruthRecord, META_RANGES, META_TEXT_FIELDS,
                   RASTER_CLASSES, SegmentationRaster, TrackEntry, TrackSet, WaterEdgePolyline)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
REPORT_DECIMALS = 4


class MalformedJson(EvalError):
    pass


class NegativeDimensions(EvalError):
    pass


class UnknownCategory(EvalError):
    pass


class DuplicatePair(EvalError):
    pass


class BadMagic(EvalError):
    pass


class IndexOutOfSet(EvalError):
    pass


class BundleError(EvalError):
    pass


class RangeViolation(UserWarning):
    pass


def frame_key(k: str):
    """JSON object keys are strings; integer-looking keys map back to int frame ids."""
    return int(k) if re.fullmatch(r"-?\d+", k) else k


# --- canonical JSON ------------------------------------------------------------

def json_safe(obj, ndigits):
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return None
        v = round(obj, ndigits) if ndigits is not None else obj
        return 0.0 if v == 0 else v
    if isinstance(obj, dict):
        return {str(k): json_safe(v, ndigits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v, ndigits) for v in obj]
    if isinstance(obj, np.generic):
        return json_safe(obj.item(), ndigits)
    return obj


def canonical_json(obj, ndigits: int | None = None) -> bytes:
    return (json.dumps(json_safe(obj, ndigits), sort_keys=True, indent=1, ensure_ascii=False) + "\n").encode()


def report_json(report: Mapping, kind: str) -> bytes:
    body = dict(report)
    body["format_version"] = FORMAT_VERSION
    body["kind"] = kind
    return canonical_json(body, REPORT_DECIMALS)


def _load_json(data: bytes | str):
    try:
        return json.loads(data)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedJson(f"not valid JSON: {e}") from None


# --- COCO ----------------------------------------------------------------------

@dataclass
class CocoFile:
    """Parsed COCO file: ground truth (``kind='gt'``) or a detection list (``kind='pred'``)."""

    kind: str
    records: list
    extras: list[dict] = field(default_factory=list)
    images: list[dict] = field(default_factory=list)
    categories: list[dict] = field(default_factory=list)
    top: dict = field(default_factory=dict)

    @property
    def frames(self) -> list:
        return [im["id"] for im in self.images]


def _bbox(raw, where: str) -> BBox:
    if not isinstance(raw, list) or len(raw) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw):
        raise MalformedJson(f"{where}: bbox must be four numbers, got {raw!r}")
    b = BBox(*(float(v) for v in raw))
    if b.w < 0 or b.h < 0:
        raise NegativeDimensions(f"{where}: negative box size in {raw!r}")
    return b


def parse_coco_json(data: bytes | str, category_ids: Iterable[int] | None = None) -> CocoFile:
    doc = _load_json(data)
    known = set(category_ids) if category_ids is not None else None
    if isinstance(doc, list):
        recs, extras = [], []
        for i, d in enumerate(doc):
            if not isinstance(d, dict) or not {"image_id", "category_id", "bbox", "score"} <= d.keys():
                raise MalformedJson(f"detection {i}: needs image_id, category_id, bbox, score")
            cat = d["category_id"]
            if known is not None and cat not in known:
                raise UnknownCategory(f"detection {i}: unknown category {cat!r}")
            recs.append(DetectionRecord(d["image_id"], _bbox(d["bbox"], f"detection {i}"), cat, float(d["score"])))
            extras.append({k: v for k, v in d.items() if k not in ("image_id", "category_id", "bbox", "score")})
        return CocoFile("pred", recs, extras)
    if not isinstance(doc, dict) or "annotations" not in doc:
        raise MalformedJson("expected a detection list or an object with 'annotations'")
    images = doc.get("images", [])
    categories = doc.get("categories", [])
    if categories:
        listed = {c["id"] for c in categories}
        known = listed if known is None else known & listed
    ignored_cats = {c["id"] for c in categories if c.get("name") == "ignored"}
    exhaustive = {}
    for im in images:
        if "id" not in im:
            raise MalformedJson("image entry without id")
        exhaustive[im["id"]] = bool(im.get("exhaustive", not im.get("not_exhaustive", False)))
    recs, extras = [], []
    for i, a in enumerate(doc["annotations"]):
        if not isinstance(a, dict) or not {"image_id", "category_id", "bbox"} <= a.keys():
            raise MalformedJson(f"annotation {i}: needs image_id, category_id, bbox")
        cat = a["category_id"]
        ign = bool(a.get("ignore", False)) or cat in ignored_cats
        if known is not None and cat not in known and not ign:
            raise UnknownCategory(f"annotation {a.get('id', i)}: unknown category {cat!r}")
        recs.append(GroundTruthRecord(a["image_id"], _bbox(a["bbox"], f"annotation {a.get('id', i)}"), cat,
                                      ignore=ign, exhaustive=exhaustive.get(a["image_id"], True), id=a.get("id")))
        extras.append({k: v for k, v in a.items() if k not in ("id", "image_id", "category_id", "bbox")})
    top = {k: v for k, v in doc.items() if k not in ("images", "annotations", "categories")}
    return CocoFile("gt", recs, extras, list(images), list(categories), top)


def write_coco_json(cf: CocoFile) -> bytes:
    extras = cf.extras or [{} for _ in cf.records]
    if cf.kind == "pred":
        out = []
        for r, ex in zip(cf.records, extras):
            d = dict(ex)
            d.update(image_id=r.frame_id, category_id=r.class_id, bbox=r.bbox.as_list(), score=r.score)
            out.append(d)
        return canonical_json(out)
    anns = []
    for r, ex in zip(cf.records, extras):
        d = dict(ex)
        if r.id is not None:
            d["id"] = r.id
        d.update(image_id=r.frame_id, category_id=r.class_id, bbox=r.bbox.as_list())
        if r.ignore or "ignore" in d:
            d["ignore"] = r.ignore
        anns.append(d)
    doc = dict(cf.top)
    doc.update(images=cf.images, annotations=anns, categories=cf.categories)
    return canonical_json(doc)


def coco_gt_file(gts: Iterable[GroundTruthRecord], frames: Iterable, category_names: Mapping[int, str]) -> CocoFile:
    """Build a ground-truth file; frame exhaustiveness comes from the records of each frame."""
    gts = list(gts)
    non_exhaustive = {g.frame_id for g in gts if not g.exhaustive}
    images = [{"id": f, "file_name": f"{f}.jpg", "exhaustive": f not in non_exhaustive} for f in frames]
    cats = [{"id": k, "name": v} for k, v in category_names.items()]
    extras = [{"area": g.bbox.area, "iscrowd": 0} for g in gts]
    return CocoFile("gt", gts, extras, images, cats, {"info": {"format_version": FORMAT_VERSION}})


def coco_pred_file(preds: Iterable[DetectionRecord]) -> CocoFile:
    preds = list(preds)
    return CocoFile("pred", preds, [{} for _ in preds])


# --- MOTChallenge-style CSV ------------------------------------------------------

def _num(v: float) -> str:
    return str(int(v)) if float(v).is_integer() and abs(v) < 1e15 else repr(float(v))


def parse_mot_csv(data: bytes | str, sequence_id: str = "seq", frames: Iterable | None = None) -> TrackSet:
    """Lines ``frame,id,x,y,w,h,score,class,visibility``; trailing fields are optional."""
    text = data.decode() if isinstance(data, bytes) else data
    entries = []
    seen = set()
    last = None
    monotone = True
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 6:
            raise EvalError(f"line {ln}: expected at least 6 fields, got {len(parts)}")
        try:
            frame = int(float(parts[0]))
            tid = int(float(parts[1]))
            x, y, w, h = (float(p) for p in parts[2:6])
            score = float(parts[6]) if len(parts) > 6 else 1.0
            cls = int(float(parts[7])) if len(parts) > 7 else 1
            vis = float(parts[8]) if len(parts) > 8 else -1.0
        except ValueError as e:
            raise EvalError(f"line {ln}: {e}") from None
        if w < 0 or h < 0:
            raise NegativeDimensions(f"line {ln}: negative box size")
        if (frame, tid) in seen:
            raise DuplicatePair(f"line {ln}: duplicate (frame, id) = ({frame}, {tid})")
        seen.add((frame, tid))
        if last is not None and frame < last:
            monotone = False
        last = frame
        entries.append(TrackEntry(frame, tid, BBox(x, y, w, h), score, cls, vis))
    if not monotone:
        log.warning("sequence %s: frames not in increasing order, sorted", sequence_id)
    entries.sort(key=lambda e: (e.frame_id, e.track_id))
    manifest = list(frames) if frames is not None else sorted({e.frame_id for e in entries})
    return TrackSet(sequence_id, manifest, entries)


def write_mot_csv(ts: TrackSet) -> bytes:
    order = {f: i for i, f in enumerate(ts.frames)}
    lines = []
    for e in sorted(ts.entries, key=lambda e: (order.get(e.frame_id, 0), e.track_id)):
        b = e.bbox
        lines.append(",".join([str(e.frame_id), str(e.track_id), _num(b.x), _num(b.y), _num(b.w), _num(b.h),
                               _num(e.score), str(e.class_id), _num(e.visibility)]))
    return ("\n".join(lines) + ("\n" if lines else "")).encode()


# --- masks as binary portable graymaps ------------------------------------------

def write_mask_pgm(raster: SegmentationRaster) -> bytes:
    return f"P5\n{raster.width} {raster.height}\n255\n".encode() + bytes(raster.data)


def read_mask_pgm(data: bytes, allowed: Iterable[int] = RASTER_CLASSES) -> SegmentationRaster:
    if not data.startswith(b"P5"):
        raise BadMagic("not a binary portable graymap (P5)")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(data):
            raise BadMagic("truncated header")
        ch = data[pos:pos + 1]
        if ch == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace() and data[end:end + 1] != b"#":
                end += 1
            tokens.append(data[pos:end])
            pos = end
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise BadMagic(f"bad header {tokens!r}") from None
    if maxval > 255:
        raise BadMagic("only 8-bit graymaps are supported")
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise BadMagic(f"expected {w * h} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    bad = np.setdiff1d(np.unique(arr), np.fromiter(allowed, dtype=np.uint8))
    if bad.size:
        raise IndexOutOfSet(f"pixel values {bad.tolist()} outside {sorted(allowed)}")
    return SegmentationRaster(w, h, bytes(body))


def read_mask_dir(path: str | Path, allowed: Iterable[int] = RASTER_CLASSES) -> dict:
    return {frame_key(p.stem): read_mask_pgm(p.read_bytes(), allowed) for p in sorted(Path(path).glob("*.pgm"))}


def write_mask_dir(masks: Mapping, path: str | Path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for f, r in masks.items():
        (path / f"{f}.pgm").write_bytes(write_mask_pgm(r))


# --- metadata sidecar ------------------------------------------------------------

def _meta_from(obj: Mapping, where: str) -> FrameMeta:
    kept = {}
    for k, v in obj.items():
        if k in META_RANGES:
            lo, hi = META_RANGES[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not lo <= v <= hi:
                warnings.warn(RangeViolation(f"{where}: {k}={v!r} outside [{lo}, {hi}], dropped"), stacklevel=3)
                continue
            kept[k] = float(v)
        elif k in META_TEXT_FIELDS:
            if v is not None:
                kept[k] = str(v)
        else:
            log.debug("%s: unknown meta field %r ignored", where, k)
    return FrameMeta(**kept)


def read_meta_sidecar(data: bytes | str) -> dict:
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise MalformedJson("meta sidecar must map frame id to an object")
    doc = doc.get("frames", doc) if "format_version" in doc else doc
    out = {}
    for k, v in doc.items():
        if not isinstance(v, dict):
            raise MalformedJson(f"frame {k}: meta must be an object")
        out[frame_key(k)] = _meta_from(v, f"frame {k}")
    return out


def write_meta_sidecar(meta: Mapping) -> bytes:
    return canonical_json({"format_version": FORMAT_VERSION,
                           "frames": {str(f): m.present() for f, m in meta.items()}})


# --- water edges -----------------------------------------------------------------

def read_water_edges(data: bytes | str) -> WaterEdgePolyline:
    doc = _load_json(data)
    frames = doc.get("frames") if isinstance(doc, dict) else None
    if not isinstance(frames, dict):
        raise MalformedJson("water-edge file needs a 'frames' object")
    out = {}
    for k, polys in frames.items():
        lines = []
        for pl in polys:
            if len(pl) < 2:
                raise MalformedJson(f"frame {k}: polyline with fewer than two vertices")
            lines.append([(float(x), float(y)) for x, y in pl])
        out[frame_key(k)] = lines
    return WaterEdgePolyline(out)


def write_water_edges(edges: WaterEdgePolyline) -> bytes:
    return canonical_json({"format_version": FORMAT_VERSION,
                           "frames": {str(f): [[list(p) for p in pl] for pl in polys]
                                      for f, polys in edges.frames.items()}})


# --- submission bundle --------------------------------------------------------------

TRACKS = ("od", "od-binary", "mot", "usv-seg", "usv-det")


@dataclass
class SubmissionBundle:
    track: str
    declared_fps: float | str
    hardware: str
    datasets_used: list[str]
    model_name: str = ""
    payload: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"track": self.track, "declared_fps": self.declared_fps, "hardware": self.hardware,
                "datasets_used": list(self.datasets_used), "model_name": self.model_name,
                "payload": list(self.payload)}


def parse_bundle_manifest(obj: Mapping | bytes | str, track: str | None = None) -> SubmissionBundle:
    """Validate submission metadata; any missing or invalid field raises :class:`BundleError`.

    ``track`` fills in a manifest that does not name one.
    """
    if isinstance(obj, (bytes, str)):
        obj = _load_json(obj)
    if not isinstance(obj, Mapping):
        raise BundleError("manifest must be a JSON object")
    track = obj.get("track") or track
    if track not in TRACKS:
        raise BundleError(f"unknown track {track!r}")
    fps = obj.get("declared_fps")
    if fps != "unmeasured":
        if isinstance(fps, bool) or not isinstance(fps, (int, float)) or not fps > 0:
            raise BundleError("declared_fps must be a positive number or 'unmeasured'")
        fps = float(fps)
    hw = obj.get("hardware")
    if not isinstance(hw, str) or not hw.strip():
        raise BundleError("hardware description is required")
    ds = obj.get("datasets_used")
    if not isinstance(ds, list) or not all(isinstance(d, str) for d in ds):
        raise BundleError("datasets_used must be a list of dataset names")
    return SubmissionBundle(track, fps, hw.strip(), list(ds), str(obj.get("model_name", "")),
                            list(obj.get("payload", [])))
