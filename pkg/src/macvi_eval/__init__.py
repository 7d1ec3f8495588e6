"""Scoring toolkit for maritime aerial and surface-vehicle perception benchmarks.

Detection (COCO-style AP and TIDE), multi-object tracking (HOTA, CLEAR,
identity metrics), obstacle segmentation and USV detection, metadata
stratification, synthetic fixtures and a submission service.
"""
from .core import (BBox, ClassTable, DetectionRecord, EvalError, FrameMeta, GroundTruthRecord, SegmentationRaster,
                   TrackEntry, TrackSet, WaterEdgePolyline, validate_dataset)
from .mot import MotConfig, MotReport, evaluate_mot
from .od import OdReport, TideReport, corrected_reeval, evaluate_od, tide_decompose
from .seg import SegReport, evaluate_seg
from .usvdet import UsvDetReport, evaluate_usv_det

__version__ = "0.1.0"

__all__ = [
    "BBox", "ClassTable", "DetectionRecord", "EvalError", "FrameMeta", "GroundTruthRecord", "SegmentationRaster",
    "TrackEntry", "TrackSet", "WaterEdgePolyline", "validate_dataset",
    "MotConfig", "MotReport", "evaluate_mot",
    "OdReport", "TideReport", "corrected_reeval", "evaluate_od", "tide_decompose",
    "SegReport", "evaluate_seg", "UsvDetReport", "evaluate_usv_det",
]
