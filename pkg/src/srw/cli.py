"""Batch pipeline over scene corpora: filter, doors, generate, stats, eval.

Corpus layout::

    input_root/
      label_map.json              # optional; required when masks are used
      scenes/<scene_id>.json
      views/<scene_id>/<view_id>.json   # pose; "mask" is relative to this file

Outputs are deterministic for a fixed seed: scenes and views are processed
in sorted order, per-door sampling seeds are derived from
(seed, scene_id, door_id), and workers only change scheduling, never bytes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from . import metrics
from .doors import (
    CLOSED_RATIO_THRESHOLD,
    SAMPLES_PER_DOOR,
    DoorStateReport,
    scene_door_ids,
    single_door_state,
)
from .errors import DimensionMismatch, SrwError
from .geometry import fit_plane_dlt, residual_summary
from .ingest import (
    MAX_PLANE_RESIDUAL_MM,
    CameraView,
    SemanticMask,
    filter_scene,
    load_label_map,
    load_mask,
    load_scene,
    load_view,
)
from .metrics import EVAL_GRID, ScoredSet, TrueSet
from .model import SceneGraph
from .visibility import (
    AnnotatedView,
    load_annotation,
    occluder_regions,
    save_annotation,
    visible_segments,
)
from .wireframe import (
    JUNCTION_SCORE_LABELS,
    LINE_SCORE_LABELS,
    MATCH_TAU,
    NONSEMANTIC_LABEL,
    ScoredJunction,
    ScoredSegment,
    load_prediction,
    match_to_junctions,
    predicted_label,
    to_nonsemantic,
)

log = logging.getLogger("srw")

HIST_BINS = 50
HIST_RANGE = (-8.0, 2.0)
LINE_STAT_LABELS = ("wall", "floor", "ceiling", "door", "window")
JUNCTION_STAT_LABELS = ("proper", "false")


@dataclass(frozen=True)
class RunConfig:
    input_root: Path
    output_root: Path
    pred_root: Path | None = None
    seed: int = 0
    workers: int = 1
    samples_per_door: int = SAMPLES_PER_DOOR
    door_ratio: float = CLOSED_RATIO_THRESHOLD
    max_residual_mm: float = MAX_PLANE_RESIDUAL_MM
    nms: bool = False
    gamma: float = metrics.NMS_GAMMA
    tau: float = MATCH_TAU
    betas: tuple[float, ...] = metrics.BETAS
    thetas: tuple[float, ...] = metrics.THETAS
    allow_missing: bool = False
    nonsemantic: bool = False


def _scene_ids(input_root: Path) -> list[str]:
    return sorted(p.stem for p in (input_root / "scenes").glob("*.json"))


def _load_bundle(
    cfg: RunConfig, scene_id: str, with_masks: bool
) -> tuple[SceneGraph, list[CameraView], dict[str, SemanticMask]]:
    scene = load_scene(cfg.input_root / "scenes" / f"{scene_id}.json")
    views: list[CameraView] = []
    masks: dict[str, SemanticMask] = {}
    view_dir = cfg.input_root / "views" / scene_id
    label_map_path = cfg.input_root / "label_map.json"
    label_map = load_label_map(label_map_path) if label_map_path.exists() else None
    for pose_path in sorted(view_dir.glob("*.json")):
        view = load_view(pose_path)
        views.append(view)
        if with_masks and view.mask_path:
            if label_map is None:
                raise SrwError(f"{scene_id}: masks referenced but no label_map.json in corpus")
            mask = load_mask(pose_path.parent / view.mask_path, label_map)
            if (mask.width, mask.height) != (view.width, view.height):
                raise DimensionMismatch(
                    f"{scene_id}/{view.view_id}: mask is {mask.width}x{mask.height}, "
                    f"view is {view.width}x{view.height}"
                )
            masks[view.view_id] = mask
    return scene, views, masks


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _run_per_scene(cfg: RunConfig, worker, scene_ids: list[str]) -> list:
    """Map a worker over scenes, sorted, optionally in a process pool."""
    if cfg.workers <= 1:
        return [worker(cfg, sid) for sid in scene_ids]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(partial(_call_worker, worker, cfg), scene_ids, chunksize=1))


def _call_worker(worker, cfg: RunConfig, scene_id: str):
    return worker(cfg, scene_id)


# --- filter -----------------------------------------------------------------


def _filter_worker(cfg: RunConfig, scene_id: str) -> dict:
    out: dict = {"scene_id": scene_id}
    try:
        scene = load_scene(cfg.input_root / "scenes" / f"{scene_id}.json")
    except SrwError as exc:
        out["error"] = str(exc)
        return out
    report, _ = filter_scene(scene, max_residual_mm=cfg.max_residual_mm)
    supplied = []
    refit = []
    for plane in scene.planes:
        pts = scene.positions(plane.outer_boundary)
        if len(set(plane.outer_boundary)) < 3:
            continue
        supplied.append(residual_summary(plane.params, pts))
        try:
            refit.append(residual_summary(fit_plane_dlt(pts), pts))
        except SrwError:
            pass
    out["report"] = {
        "scene_id": report.scene_id,
        "accepted": report.accepted,
        "reason": report.reason.value,
        "max_residual_mm": report.max_residual_mm,
    }
    for key, summaries in (("supplied", supplied), ("refit", refit)):
        out[key] = {
            "max": [s.max_mm for s in summaries],
            "median": [s.median_mm for s in summaries],
            "min": [s.min_mm for s in summaries],
        }
    return out


def _write_residual_hist(path: Path, values_by_kind: dict[str, list[float]]) -> None:
    lo, hi = HIST_RANGE
    edges = np.linspace(lo, hi, HIST_BINS + 1)
    counts = {}
    for kind, values in values_by_kind.items():
        arr = np.asarray(values, dtype=float)
        logs = np.full(arr.shape, lo)
        positive = arr > 0
        logs[positive] = np.log10(arr[positive])
        logs = np.clip(logs, lo, hi)
        counts[kind], _ = np.histogram(logs, bins=edges)
    rows = ["bin_left,bin_right,count_max,count_median,count_min"]
    for i in range(HIST_BINS):
        rows.append(
            f"{edges[i]!r},{edges[i + 1]!r},"
            f"{int(counts['max'][i])},{int(counts['median'][i])},{int(counts['min'][i])}"
        )
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_filter(cfg: RunConfig) -> int:
    scene_ids = _scene_ids(cfg.input_root)
    results = _run_per_scene(cfg, _filter_worker, scene_ids)
    out_dir = cfg.output_root / "filter"
    out_dir.mkdir(parents=True, exist_ok=True)

    reports = []
    errors = []
    hists = {"supplied": {"max": [], "median": [], "min": []}, "refit": {"max": [], "median": [], "min": []}}
    for res in results:
        if "error" in res:
            errors.append({"scene_id": res["scene_id"], "error": res["error"]})
            log.error("scene %s: %s", res["scene_id"], res["error"])
            continue
        reports.append(res["report"])
        for kind in ("supplied", "refit"):
            for stat in ("max", "median", "min"):
                hists[kind][stat].extend(res[kind][stat])
    _write_json(out_dir / "report.json", {"scenes": reports, "errors": errors})

    rows = ["scene_id,accepted,reason,max_residual_mm"]
    rows += [
        f"{r['scene_id']},{str(r['accepted']).lower()},{r['reason']},{r['max_residual_mm']!r}"
        for r in reports
    ]
    (out_dir / "summary.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_residual_hist(out_dir / "residual_hist_supplied.csv", hists["supplied"])
    _write_residual_hist(out_dir / "residual_hist_refit.csv", hists["refit"])
    log.info("filtered %d scenes (%d accepted)", len(reports), sum(r["accepted"] for r in reports))
    return 0


# --- doors ------------------------------------------------------------------


def _scene_door_reports(
    cfg: RunConfig, scene, views, masks
) -> tuple[list[DoorStateReport], list[str]]:
    """Door states with per-door error isolation; failed doors are skipped."""
    reports = []
    errors = []
    for door_id in scene_door_ids(scene):
        try:
            reports.append(
                single_door_state(
                    scene, door_id, views, masks,
                    samples_per_door=cfg.samples_per_door,
                    seed=cfg.seed,
                    closed_threshold=cfg.door_ratio,
                )
            )
        except SrwError as exc:
            errors.append(f"door {door_id}: {exc}")
    return reports, errors


def _doors_worker(cfg: RunConfig, scene_id: str) -> dict:
    out: dict = {"scene_id": scene_id, "doors": [], "errors": []}
    try:
        scene, views, masks = _load_bundle(cfg, scene_id, with_masks=True)
    except SrwError as exc:
        out["errors"].append(str(exc))
        return out
    reports, errors = _scene_door_reports(cfg, scene, views, masks)
    out["errors"] += errors
    out["doors"] = [
        {
            "door_id": r.door_id,
            "closed_ratio": r.closed_ratio,
            "visible_samples": r.visible_samples,
            "state": r.state.value,
        }
        for r in reports
    ]
    return out


def cmd_doors(cfg: RunConfig) -> int:
    scene_ids = _scene_ids(cfg.input_root)
    results = _run_per_scene(cfg, _doors_worker, scene_ids)
    for res in results:
        for err in res["errors"]:
            log.error("scene %s: %s", res["scene_id"], err)
        _write_json(cfg.output_root / "doors" / f"{res['scene_id']}.json", res["doors"])
    return 0


# --- generate / stats ---------------------------------------------------------


def _generate_worker(cfg: RunConfig, scene_id: str) -> dict:
    out: dict = {
        "scene_id": scene_id,
        "lines": Counter(),
        "junctions": Counter(),
        "errors": [],
        "views": 0,
    }
    try:
        scene, views, masks = _load_bundle(cfg, scene_id, with_masks=True)
    except SrwError as exc:
        out["errors"].append(f"scene {scene_id}: {exc}")
        return out
    report, scene = filter_scene(scene, max_residual_mm=cfg.max_residual_mm)
    if not report.accepted:
        for view in views:
            out["errors"].append(
                f"scene {scene_id} view {view.view_id}: scene rejected ({report.reason.value})"
            )
        return out
    # doors without a usable state report stay absent and therefore occlude
    # (same conservative rule as undetermined doors)
    states, door_errors = _scene_door_reports(cfg, scene, views, masks)
    out["errors"] += [f"scene {scene_id}: {err}" for err in door_errors]
    regions = occluder_regions(scene, states)
    for view in views:
        try:
            annotated = visible_segments(scene, view, states, regions=regions)
        except SrwError as exc:
            out["errors"].append(f"scene {scene_id} view {view.view_id}: {exc}")
            continue
        path = cfg.output_root / "annotations" / scene_id / f"{view.view_id}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        save_annotation(annotated, path)
        out["views"] += 1
        for segment in annotated.segments:
            out["lines"][segment.label.value] += 1
        for junction in annotated.junctions:
            out["junctions"][junction.label.value] += 1
    return out


def _write_stats(path: Path, line_counts: Counter, junction_counts: Counter) -> None:
    rows = ["kind,label,count,percent"]
    for kind, counts, labels in (
        ("line", line_counts, LINE_STAT_LABELS),
        ("junction", junction_counts, JUNCTION_STAT_LABELS),
    ):
        total = sum(counts[l] for l in labels)
        for label in labels:
            pct = 100.0 * counts[label] / total if total else 0.0
            rows.append(f"{kind},{label},{counts[label]},{pct!r}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")


def cmd_generate(cfg: RunConfig) -> int:
    scene_ids = _scene_ids(cfg.input_root)
    results = _run_per_scene(cfg, _generate_worker, scene_ids)
    line_counts: Counter = Counter()
    junction_counts: Counter = Counter()
    views = 0
    for res in results:
        for err in res["errors"]:
            log.error("%s", err)
        line_counts.update(res["lines"])
        junction_counts.update(res["junctions"])
        views += res["views"]
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    _write_stats(cfg.output_root / "stats.csv", line_counts, junction_counts)
    log.info("annotated %d views across %d scenes", views, len(scene_ids))
    return 0


def cmd_stats(cfg: RunConfig) -> int:
    line_counts: Counter = Counter()
    junction_counts: Counter = Counter()
    for path in sorted(cfg.input_root.rglob("*.json")):
        view = load_annotation(path)
        for segment in view.segments:
            line_counts[segment.label.value] += 1
        for junction in view.junctions:
            junction_counts[junction.label.value] += 1
    cfg.output_root.mkdir(parents=True, exist_ok=True)
    _write_stats(cfg.output_root / "stats.csv", line_counts, junction_counts)
    return 0


# --- eval ---------------------------------------------------------------------


def _annotation_arrays(view: AnnotatedView) -> tuple[TrueSet, TrueSet]:
    sx = EVAL_GRID / view.width
    sy = EVAL_GRID / view.height
    scale = np.array([sx, sy])
    jpos = np.array([j.position for j in view.junctions], dtype=float).reshape(-1, 2) * scale
    jlabels = tuple(j.label.value for j in view.junctions)
    lines = np.array(
        [[jpos[a], jpos[b]] for a, b in (s.junctions for s in view.segments)], dtype=float
    ).reshape(-1, 2, 2)
    line_labels = tuple(s.label.value for s in view.segments)
    return TrueSet(lines, line_labels), TrueSet(jpos, jlabels)


def _prediction_arrays(
    pred, cfg: RunConfig
) -> dict[str, tuple[ScoredSet, ScoredSet]]:
    """Per-view prediction arrays for both evaluation modes.

    Segments are rescaled to the evaluation grid, snapped to their nearest
    junctions, optionally suppressed, and reduced to (geometry, score, label)
    rows; junction proposals are evaluated as-is. Keys: "semantic" and
    "nonsemantic".
    """
    scale = np.array([EVAL_GRID / pred.width, EVAL_GRID / pred.height])
    junctions = [ScoredJunction(j.position * scale, j.scores) for j in pred.junctions]
    segments = [
        ScoredSegment(scores=s.scores, endpoints=s.endpoints * scale) for s in pred.segments
    ]
    wireframe, _ = match_to_junctions(segments, junctions, tau=cfg.tau)
    jpos = np.array([j.position for j in wireframe.junctions], dtype=float).reshape(-1, 2)

    out: dict[str, tuple[ScoredSet, ScoredSet]] = {}
    for mode in ("semantic", "nonsemantic") if cfg.nonsemantic else ("semantic",):
        wf = wireframe if mode == "semantic" else to_nonsemantic(wireframe)
        seg_geometry = np.array(
            [[jpos[a], jpos[b]] for a, b in (s.junctions for s in wf.segments)], dtype=float
        ).reshape(-1, 2, 2)
        if mode == "semantic":
            seg_labels = tuple(predicted_label(s.scores, LINE_SCORE_LABELS) for s in wf.segments)
            jct_labels = tuple(
                predicted_label(j.scores, JUNCTION_SCORE_LABELS) for j in wf.junctions
            )
        else:
            seg_labels = tuple(NONSEMANTIC_LABEL for _ in wf.segments)
            jct_labels = tuple(NONSEMANTIC_LABEL for _ in wf.junctions)
        seg_scores = np.array(
            [s.scores[l] for s, l in zip(wf.segments, seg_labels)], dtype=float
        )
        jct_scores = np.array(
            [j.scores[l] for j, l in zip(wf.junctions, jct_labels)], dtype=float
        )
        if cfg.nms and seg_geometry.shape[0]:
            keep = metrics.line_nms(seg_geometry, seg_scores, seg_labels, gamma=cfg.gamma)
            seg_geometry = seg_geometry[keep]
            seg_scores = seg_scores[keep]
            seg_labels = tuple(l for l, k in zip(seg_labels, keep) if k)
        out[mode] = (
            ScoredSet(seg_geometry, seg_scores, seg_labels),
            ScoredSet(jpos, jct_scores, jct_labels),
        )
    return out


def cmd_eval(cfg: RunConfig) -> int:
    gt_root = cfg.input_root
    pred_root = cfg.pred_root
    gt_files = {str(p.relative_to(gt_root)) for p in gt_root.rglob("*.json")}
    pred_files = {str(p.relative_to(pred_root)) for p in pred_root.rglob("*.json")}
    missing = sorted(gt_files - pred_files)
    extra = sorted(pred_files - gt_files)
    for rel in missing:
        log.error("missing prediction for %s", rel)
    for rel in extra:
        log.error("prediction %s has no ground truth", rel)
    if (missing or extra) and not cfg.allow_missing:
        log.error("view sets differ; pass --allow-missing to evaluate the intersection")
        return 1

    line_truth: dict[str, TrueSet] = {}
    junction_truth: dict[str, TrueSet] = {}
    preds: dict[str, dict[str, tuple[ScoredSet, ScoredSet]]] = {}
    for rel in sorted(gt_files & pred_files):
        gt_view = load_annotation(gt_root / rel)
        pred = load_prediction(pred_root / rel)
        if (pred.width, pred.height) != (gt_view.width, gt_view.height):
            message = f"{rel}: prediction is {pred.width}x{pred.height}, ground truth {gt_view.width}x{gt_view.height}"
            if not cfg.allow_missing:
                log.error("%s", message)
                return 1
            log.error("skipping %s", message)
            continue
        line_truth[rel], junction_truth[rel] = _annotation_arrays(gt_view)
        preds[rel] = _prediction_arrays(pred, cfg)

    out_dir = cfg.output_root / "eval"
    payload: dict = {"views": len(preds)}
    modes = ("semantic", "nonsemantic") if cfg.nonsemantic else ("semantic",)
    for mode in modes:
        line_preds = {rel: data[mode][0] for rel, data in preds.items()}
        junction_preds = {rel: data[mode][1] for rel, data in preds.items()}
        if mode == "semantic":
            truth_l, truth_j = line_truth, junction_truth
            line_labels: tuple[str, ...] | None = metrics.LINE_EVAL_LABELS
            junction_labels: tuple[str, ...] | None = metrics.JUNCTION_EVAL_LABELS
        else:
            truth_l = {k: TrueSet(v.geometry, tuple(NONSEMANTIC_LABEL for _ in v.labels)) for k, v in line_truth.items()}
            truth_j = {k: TrueSet(v.geometry, tuple(NONSEMANTIC_LABEL for _ in v.labels)) for k, v in junction_truth.items()}
            line_labels = None
            junction_labels = None
        report = metrics.evaluate(
            line_preds,
            truth_l,
            junction_preds,
            truth_j,
            betas=cfg.betas,
            thetas=cfg.thetas,
            line_labels=line_labels,
            junction_labels=junction_labels,
        )
        payload[mode] = metrics.report_to_dict(report)
        metrics.write_pr_csvs(report, out_dir / "pr" / mode)
    _write_json(out_dir / "report.json", payload)
    log.info("evaluated %d views", len(preds))
    return 0


# --- entry point ----------------------------------------------------------------


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srw", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, output=True):
        p.add_argument("--input", required=True, type=Path, help="corpus or annotation root")
        if output:
            p.add_argument("--output", required=True, type=Path, help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)

    p_filter = sub.add_parser("filter", help="quality-gate scenes and write residual reports")
    common(p_filter)
    p_filter.add_argument("--max-residual-mm", type=float, default=MAX_PLANE_RESIDUAL_MM)

    p_doors = sub.add_parser("doors", help="estimate door open/closed states")
    common(p_doors)
    p_doors.add_argument("--samples", type=int, default=SAMPLES_PER_DOOR)
    p_doors.add_argument("--door-ratio", type=float, default=CLOSED_RATIO_THRESHOLD)

    p_gen = sub.add_parser("generate", help="generate per-view wireframe annotations")
    common(p_gen)
    p_gen.add_argument("--samples", type=int, default=SAMPLES_PER_DOOR)
    p_gen.add_argument("--door-ratio", type=float, default=CLOSED_RATIO_THRESHOLD)
    p_gen.add_argument("--max-residual-mm", type=float, default=MAX_PLANE_RESIDUAL_MM)

    p_stats = sub.add_parser("stats", help="recompute label statistics from annotations")
    common(p_stats)

    p_eval = sub.add_parser("eval", help="score predictions against annotations")
    common(p_eval)
    p_eval.add_argument("--pred", required=True, type=Path, help="prediction root")
    p_eval.add_argument("--nms", action="store_true")
    p_eval.add_argument("--gamma", type=float, default=metrics.NMS_GAMMA)
    p_eval.add_argument("--tau", type=float, default=MATCH_TAU)
    p_eval.add_argument("--beta", type=_float_list, default=metrics.BETAS)
    p_eval.add_argument("--theta", type=_float_list, default=metrics.THETAS)
    p_eval.add_argument("--allow-missing", action="store_true")
    p_eval.add_argument("--nonsemantic", action="store_true")
    return parser


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        input_root=args.input,
        output_root=args.output,
        pred_root=getattr(args, "pred", None),
        seed=getattr(args, "seed", 0),
        workers=max(1, getattr(args, "workers", 1)),
        samples_per_door=getattr(args, "samples", SAMPLES_PER_DOOR),
        door_ratio=getattr(args, "door_ratio", CLOSED_RATIO_THRESHOLD),
        max_residual_mm=getattr(args, "max_residual_mm", MAX_PLANE_RESIDUAL_MM),
        nms=getattr(args, "nms", False),
        gamma=getattr(args, "gamma", metrics.NMS_GAMMA),
        tau=getattr(args, "tau", MATCH_TAU),
        betas=tuple(getattr(args, "beta", metrics.BETAS)),
        thetas=tuple(getattr(args, "theta", metrics.THETAS)),
        allow_missing=getattr(args, "allow_missing", False),
        nonsemantic=getattr(args, "nonsemantic", False),
    )


_COMMANDS = {
    "filter": cmd_filter,
    "doors": cmd_doors,
    "generate": cmd_generate,
    "stats": cmd_stats,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    cfg = _config_from_args(args)
    if not cfg.input_root.is_dir():
        log.error("input directory %s does not exist", cfg.input_root)
        return 2
    if args.command in ("filter", "doors", "generate") and not (cfg.input_root / "scenes").is_dir():
        log.error("%s has no scenes/ directory", cfg.input_root)
        return 2
    if args.command == "eval" and (cfg.pred_root is None or not cfg.pred_root.is_dir()):
        log.error("prediction directory %s does not exist", cfg.pred_root)
        return 2
    try:
        return _COMMANDS[args.command](cfg)
    except SrwError as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
