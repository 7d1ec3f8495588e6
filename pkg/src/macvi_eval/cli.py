"""Command-line front end.

Exit status: 0 on success, 2 on input errors (bad paths or formats), 1 on
internal errors. Diagnostics go to standard error; reports go to ``--output``
or standard output as canonical JSON.
"""
from __future__ import annotations

import argparse
from dataclasses import asdict
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from .core import ClassTable, EvalError, validate_dataset
from .fixtures import (PerturbationSpec, ScenarioSpec, generate_scenario, winning_row_fixture, write_fixture_dir)
from .formats import (coco_gt_file, coco_pred_file, parse_coco_json, parse_mot_csv, read_meta_sidecar,
                      report_json, write_coco_json, write_mask_dir, write_water_edges)
from .mot import evaluate_mot
from .od import evaluate_od, tide_decompose
from .runner import GroundTruthDir, classes_from_coco, load_masks
from .seg import EdgeMetricConfig, evaluate_seg
from .strata import StratumSpec, restrict_records, stratified_eval, stratify
from .usvdet import evaluate_usv_det

log = logging.getLogger("macvi_eval")


class InputError(Exception):
    pass


def _existing(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InputError(f"{path}: no such file or directory")
    return p


def _gt(path: str) -> GroundTruthDir:
    p = _existing(path)
    if not p.is_dir():
        raise InputError(f"{path}: expected a ground-truth directory")
    return GroundTruthDir(p)


def _coco_gt(path: str):
    """Ground truth from a directory or a single COCO file: (records, frames, classes)."""
    p = _existing(path)
    if p.is_dir():
        gt = GroundTruthDir(p)
        return gt.gts, gt.frames, gt.classes
    cf = parse_coco_json(p.read_bytes())
    if cf.kind != "gt":
        raise InputError(f"{path}: expected a COCO ground-truth file")
    return cf.records, cf.frames or None, classes_from_coco(cf)


def _preds(path: str):
    cf = parse_coco_json(_existing(path).read_bytes())
    if cf.kind != "pred":
        raise InputError(f"{path}: expected a COCO detection list")
    return cf.records


def _emit(data: bytes, output: str | None) -> None:
    if output:
        Path(output).write_bytes(data)
    else:
        sys.stdout.write(data.decode())


def _pr_csv(report, path: str) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou", "recall", "precision"])
    for cls, by_t in report.pr_curves.items():
        for t, prec in by_t.items():
            for i, p in enumerate(prec):
                w.writerow([cls, f"{t:.2f}", f"{i / (len(prec) - 1):.2f}", f"{p:.4f}"])
    Path(path).write_text(buf.getvalue())


# --- subcommands ---------------------------------------------------------------------

def cmd_eval_od(a) -> bytes:
    gts, frames, classes = _coco_gt(a.gt)
    rep = evaluate_od(_preds(a.pred), gts, classes, binary=a.binary, frames=frames, jobs=a.jobs)
    if a.pr_csv:
        _pr_csv(rep, a.pr_csv)
    return report_json(rep.to_dict(curves=False), "od-binary" if a.binary else "od")


def cmd_eval_mot(a) -> bytes:
    p = _existing(a.gt)
    if p.is_dir():
        gt = GroundTruthDir(p).tracks
    else:
        gt = parse_mot_csv(p.read_bytes(), "seq")
    pred = parse_mot_csv(_existing(a.pred).read_bytes(), gt.sequence_id, frames=gt.frames)
    return report_json(evaluate_mot(pred, gt).to_dict(), "mot")


def _option(build, *args):
    try:
        return build(*args)
    except ValueError as e:
        raise InputError(str(e)) from None


def cmd_eval_seg(a) -> bytes:
    edge_cfg = _option(EdgeMetricConfig, a.theta_w)
    gt = _gt(a.gt)
    masks = load_masks(_existing(a.pred))
    rep = evaluate_seg(masks, gt.boxes_by_frame(), gt.edges, gt.zone_masks, frames=gt.frames,
                       edge_cfg=edge_cfg, macro=a.macro)
    return report_json(rep.to_dict(), "usv-seg")


def cmd_eval_usv_det(a) -> bytes:
    gt = _gt(a.gt)
    rep = evaluate_usv_det(_preds(a.pred), gt.gts, gt.edges, gt.zone_masks, gt.classes, frames=gt.frames,
                           iou_threshold=a.iou)
    return report_json(rep.to_dict(), "usv-det")


def cmd_tide(a) -> bytes:
    gts, frames, classes = _coco_gt(a.gt)
    rep = tide_decompose(_preds(a.pred), gts, classes, base_iou=a.base_iou, frames=frames)
    return report_json(rep.to_dict(), "tide")


def _stratum_spec(a) -> StratumSpec:
    if a.edges:
        edges = [float(v) for v in a.edges.split(",")]
        labels = a.labels.split(",") if a.labels else [f"b{i}" for i in range(len(edges) - 1)]
        return StratumSpec(a.key, tuple(labels), edges=tuple(edges))
    presets = {"altitude": StratumSpec.altitude, "gimbal_pitch": StratumSpec.gimbal_pitch,
               "camera_id": StratumSpec.camera, "camera": StratumSpec.camera}
    if a.key not in presets:
        raise InputError(f"no preset bins for {a.key!r}; pass --edges")
    return presets[a.key]()


def cmd_stratify(a) -> bytes:
    gt = _gt(a.gt)
    meta = read_meta_sidecar(_existing(a.meta).read_bytes()) if a.meta else gt.meta
    spec = _stratum_spec(a)
    part = stratify(gt.frames, meta, spec)
    if a.track in ("od", "od-binary"):
        preds = _preds(a.pred)

        def run(frames):
            return evaluate_od(restrict_records(preds, frames), restrict_records(gt.gts, frames), gt.classes,
                               binary=a.track == "od-binary", frames=frames, jobs=a.jobs).to_dict(curves=False)
    elif a.track == "usv-det":
        preds = _preds(a.pred)

        def run(frames):
            return evaluate_usv_det(restrict_records(preds, frames), restrict_records(gt.gts, frames), gt.edges,
                                    gt.zone_masks, gt.classes, frames=frames).to_dict()
    elif a.track == "mot":
        pred = parse_mot_csv(_existing(a.pred).read_bytes(), gt.tracks.sequence_id, frames=gt.tracks.frames)

        def run(frames):
            return evaluate_mot(pred.subset(frames), gt.tracks.subset(frames)).to_dict()
    else:
        raise InputError(f"stratify does not support track {a.track!r}")
    reports = stratified_eval(run, part)
    counts = {label: {"frames": len(fr), "num_gt": len([g for g in restrict_records(gt.gts, fr) if not g.ignore])}
              for label, fr in part.items()}
    return report_json({"key": spec.key, "labels": list(spec.labels), "strata": reports, "counts": counts},
                       f"stratified-{a.track}")


def _objects(text: str) -> dict[int, int]:
    try:
        return {int(k): int(v) for k, v in (item.split(":") for item in text.split(","))}
    except ValueError:
        raise InputError(f"--objects expects 'class:count,...', got {text!r}") from None


def cmd_fixtures(a) -> bytes:
    root = Path(a.out)
    if a.preset == "usv-winner":
        fx = winning_row_fixture()
        gt_dir, pred_dir = root / "gt", root / "pred"
        gt_dir.mkdir(parents=True, exist_ok=True)
        pred_dir.mkdir(parents=True, exist_ok=True)
        names = dict(zip(ClassTable.usv().ids, ClassTable.usv().names))
        (gt_dir / "coco.json").write_bytes(write_coco_json(coco_gt_file(fx.gts, fx.frames, names)))
        (gt_dir / "edges.json").write_bytes(write_water_edges(fx.edges))
        write_mask_dir(fx.zone_masks, gt_dir / "zone")
        (pred_dir / "coco.json").write_bytes(write_coco_json(coco_pred_file(fx.preds)))
        return report_json({"path": str(root), "frames": len(fx.frames), "preset": "usv-winner"}, "fixtures")
    pert = {}
    if a.perturb:
        try:
            pert = json.loads(_existing(a.perturb).read_text())
            ps = PerturbationSpec(**pert)
        except (json.JSONDecodeError, TypeError, ValueError) as e:
            raise InputError(f"{a.perturb}: bad perturbation spec: {e}") from None
    else:
        ps = PerturbationSpec(seed=a.seed)
    spec = ScenarioSpec(seed=a.seed, frames=a.frames, objects=_objects(a.objects), motion=a.motion,
                        altitude_profile=a.altitude_profile, width=a.width, height=a.height, rasters=not a.no_rasters)
    scn = generate_scenario(spec)
    write_fixture_dir(scn, root, ps)
    return report_json({"path": str(root), "frames": len(scn.frames), "objects": len(scn.gts),
                        "perturbation": asdict(ps)}, "fixtures")


def cmd_validate(a) -> bytes:
    p = _existing(a.gt)
    gt_file = p / "coco.json" if p.is_dir() else p
    cf = parse_coco_json(_existing(str(gt_file)).read_bytes())
    meta_path = Path(a.meta) if a.meta else (p / "meta.json" if p.is_dir() else None)
    meta = read_meta_sidecar(_existing(str(meta_path)).read_bytes()) if meta_path and (a.meta or meta_path.exists()) else {}
    rep = validate_dataset(cf.records if cf.kind == "gt" else [], meta)
    violations = [{"kind": v.kind, "where": v.where, "message": v.message} for v in rep.violations]
    out = report_json({"ok": rep.ok, "violations": violations}, "validation")
    if not rep.ok:
        _emit(out, a.output)
        raise InputError(f"{a.gt}: {len(rep.violations)} validation problem(s)")
    return out


def cmd_serve(a) -> bytes | None:
    from .service import ServiceConfig, serve

    env = dict(os.environ)
    for flag, var in (("data_dir", "MACVI_DATA_DIR"), ("gt_dir", "MACVI_GT_DIR"), ("users", "MACVI_USERS"),
                      ("quota", "MACVI_QUOTA")):
        if getattr(a, flag) is not None:
            env[var] = str(getattr(a, flag))
    serve(ServiceConfig.from_env(env), host=a.host, port=a.port)
    return None


# --- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="macvi-eval", description="Maritime detection, tracking and segmentation scoring.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help_, gt_help="ground-truth directory", pred=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=func)
        sp.add_argument("gt", help=gt_help)
        if pred:
            sp.add_argument("pred", help="predictions")
        sp.add_argument("-o", "--output", help="write the report here instead of standard output")
        sp.add_argument("--config", help="JSON file with option defaults")
        sp.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
        return sp

    sp = add("eval-od", cmd_eval_od, "COCO-style AP/AR", "ground-truth directory or COCO file")
    sp.add_argument("--binary", action="store_true", help="collapse all classes into non-water")
    sp.add_argument("--pr-csv", help="also write precision-recall curves as CSV")
    add("eval-mot", cmd_eval_mot, "HOTA, CLEAR and identity metrics", "ground-truth directory or MOT CSV")
    sp = add("eval-seg", cmd_eval_seg, "segmentation masks (directory or zip of .pgm)")
    sp.add_argument("--theta-w", type=float, default=20.0)
    sp.add_argument("--macro", action="store_true", help="average Pr/Re per frame instead of pooling")
    sp = add("eval-usv-det", cmd_eval_usv_det, "USV obstacle-detection F1 scores")
    sp.add_argument("--iou", type=float, default=0.3)
    sp = add("tide", cmd_tide, "TIDE error breakdown", "ground-truth directory or COCO file")
    sp.add_argument("--base-iou", type=float, default=0.5)
    sp = add("stratify", cmd_stratify, "per-stratum reports by frame metadata")
    sp.add_argument("--track", default="od", choices=("od", "od-binary", "mot", "usv-det"))
    sp.add_argument("--key", default="altitude")
    sp.add_argument("--edges", help="comma-separated bin edges")
    sp.add_argument("--labels", help="comma-separated bin labels")
    sp.add_argument("--meta", help="metadata sidecar (default: <gt>/meta.json)")
    sp = add("validate", cmd_validate, "check annotations and metadata", "ground-truth directory or COCO file",
             pred=False)
    sp.add_argument("--meta")

    sp = sub.add_parser("fixtures", help="write a synthetic fixture directory")
    sp.set_defaults(func=cmd_fixtures)
    sp.add_argument("out")
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--frames", type=int, default=10)
    sp.add_argument("--objects", default="1:2,2:2,3:1")
    sp.add_argument("--motion", default="static", choices=("static", "pan", "tilt", "teleport"))
    sp.add_argument("--altitude-profile", default="ramp", choices=("constant", "ramp", "random"))
    sp.add_argument("--width", type=int, default=640)
    sp.add_argument("--height", type=int, default=480)
    sp.add_argument("--no-rasters", action="store_true")
    sp.add_argument("--perturb", help="JSON perturbation spec")
    sp.add_argument("--preset", choices=("usv-winner",))
    sp.add_argument("-o", "--output")
    sp.add_argument("--config")

    sp = sub.add_parser("serve", help="run the submission service")
    sp.set_defaults(func=cmd_serve)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int)
    sp.add_argument("--data-dir")
    sp.add_argument("--gt-dir")
    sp.add_argument("--users")
    sp.add_argument("--quota", type=int)
    sp.add_argument("--config")
    return p


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        path = _existing(args.config)
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise InputError(f"{args.config}: not valid JSON: {e}") from None
        if not isinstance(cfg, dict):
            raise InputError(f"{args.config}: expected a JSON object")
        sp = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sp._actions}
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise InputError(f"{args.config}: unknown option(s) {unknown}")
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)   # command-line flags still win
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
    except InputError as e:
        print(f"macvi-eval: error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
        if out is not None:
            _emit(out, getattr(args, "output", None))
        return 0
    except (InputError, EvalError, OSError) as e:
        print(f"macvi-eval: error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - report, never dump a traceback on users
        log.info("internal error", exc_info=True)
        print(f"macvi-eval: internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
