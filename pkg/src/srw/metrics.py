"""Detection metrics for semantic wireframes: line NMS, structural AP over
line segments, junction AP, and their label/threshold aggregates.

All geometric thresholds are defined at 128x128 resolution; callers rescale
coordinates with `scale_to_grid` first. Matching is a global score-descending
sweep with per-view pools of unmatched ground truth: a prediction is a true
positive when the nearest unmatched same-label ground-truth item of its view
is within the threshold, and that item is then consumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

BETAS = (5.0, 10.0, 15.0)
THETAS = (0.5, 1.0, 2.0)
NMS_GAMMA = 3.0
EVAL_GRID = 128.0
LINE_EVAL_LABELS = ("wall", "floor", "ceiling", "door", "window")
JUNCTION_EVAL_LABELS = ("false", "proper")


def scale_to_grid(points: np.ndarray, width: float, height: float, grid: float = EVAL_GRID) -> np.ndarray:
    """Rescale pixel coordinates (..., 2) to the grid x grid evaluation frame."""
    pts = np.array(points, dtype=float)
    pts[..., 0] *= grid / width
    pts[..., 1] *= grid / height
    return pts


def segment_sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Sum of squared endpoint distances, minimized over the two endpoint
    correspondences (segments are unordered).

    Per-endpoint sums are formed before pairing so the result is exactly
    symmetric in its arguments.
    """
    a = np.asarray(a, dtype=float).reshape(2, 2)
    b = np.asarray(b, dtype=float).reshape(2, 2)
    d = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)  # d[i, j] = ||a_i - b_j||^2
    return float(min(d[0, 0] + d[1, 1], d[0, 1] + d[1, 0]))


def _pairwise_segment_sq(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """(n, m) matrix of segment_sq_distance values."""
    # diff[i, j, a, b] = ||pred[i, a] - gt[j, b]||^2
    diff = ((pred[:, None, :, None] - gt[:, None]) ** 2).sum(-1)
    return np.minimum(diff[:, :, 0, 0] + diff[:, :, 1, 1], diff[:, :, 0, 1] + diff[:, :, 1, 0])


def _pairwise_point_dist(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    return np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)


def line_nms(
    lines: np.ndarray,
    scores: np.ndarray,
    labels: Sequence[str],
    gamma: float = NMS_GAMMA,
) -> np.ndarray:
    """Keep mask after single-pass non-maximum suppression.

    A segment is removed when some same-label segment with strictly higher
    score (ties: earlier input index wins) lies at squared distance below
    gamma^2. Suppression is evaluated against the original input set, which
    makes the operation idempotent.
    """
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 2)
    scores = np.asarray(scores, dtype=float)
    n = lines.shape[0]
    if n == 0:
        return np.zeros(0, dtype=bool)
    labels = np.asarray(labels, dtype=object)
    dist = _pairwise_segment_sq(lines, lines)
    idx = np.arange(n)
    higher = (scores[None, :] > scores[:, None]) | (
        (scores[None, :] == scores[:, None]) & (idx[None, :] < idx[:, None])
    )
    same_label = labels[None, :] == labels[:, None]
    removed = np.any(same_label & higher & (dist < gamma * gamma), axis=1)
    return ~removed


@dataclass(frozen=True)
class APResult:
    ap: float  # in [0, 100]
    pr_points: tuple[tuple[float, float, float], ...]  # (score, recall, precision) per sweep step
    zero_gt: bool


def average_precision(
    tp: np.ndarray, fp: np.ndarray, scores: np.ndarray, n_gt: int
) -> APResult:
    """Area under the monotone precision envelope of the PR sweep, x100.

    Predictions are swept by descending score (ties by input index); recall
    uses the total ground-truth count as denominator. Zero ground truth
    defines AP as 0 and flags the result.
    """
    tp = np.asarray(tp, dtype=bool)
    fp = np.asarray(fp, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    if int(tp.sum()) > n_gt:
        raise ValueError(f"{int(tp.sum())} true positives exceed {n_gt} ground truths")
    order = np.lexsort((np.arange(scores.size), -scores))
    tp_cum = np.cumsum(tp[order])
    fp_cum = np.cumsum(fp[order])
    precision = tp_cum / np.maximum(tp_cum + fp_cum, 1)
    if n_gt == 0:
        points = tuple(
            (float(scores[order][i]), 0.0, float(precision[i])) for i in range(scores.size)
        )
        return APResult(0.0, points, True)
    recall = tp_cum / n_gt
    points = tuple(
        (float(scores[order][i]), float(recall[i]), float(precision[i]))
        for i in range(scores.size)
    )

    r = np.concatenate(([0.0], recall, [1.0]))
    p = np.concatenate(([0.0], precision, [0.0]))
    for i in range(p.size - 1, 0, -1):
        p[i - 1] = max(p[i - 1], p[i])
    steps = np.where(r[1:] != r[:-1])[0]
    ap = float(np.sum((r[steps + 1] - r[steps]) * p[steps + 1])) * 100.0
    return APResult(ap, points, n_gt == 0)


@dataclass(frozen=True)
class ScoredSet:
    """One view's scored detections (lines (n, 2, 2) or junctions (n, 2))."""

    geometry: np.ndarray
    scores: np.ndarray
    labels: tuple[str, ...]


@dataclass(frozen=True)
class TrueSet:
    geometry: np.ndarray
    labels: tuple[str, ...]


@dataclass(frozen=True)
class LabelEval:
    ap: float
    pr_points: tuple[tuple[float, float, float], ...]
    n_gt: int
    n_pred: int
    tp: int
    fp: int
    zero_gt: bool


def _ap_sweep(
    predictions: Mapping[str, ScoredSet],
    ground_truth: Mapping[str, TrueSet],
    threshold: float,
    label: str | None,
    pairwise,
) -> LabelEval:
    entries = []  # (score, order, view, local index)
    order = 0
    for view_id in sorted(predictions):
        pred = predictions[view_id]
        for i in range(pred.scores.size):
            if label is None or pred.labels[i] == label:
                entries.append((float(pred.scores[i]), order, view_id, i))
                order += 1
    entries.sort(key=lambda e: (-e[0], e[1]))

    gt_geometry: dict[str, np.ndarray] = {}
    gt_free: dict[str, np.ndarray] = {}
    n_gt = 0
    for view_id in sorted(ground_truth):
        truth = ground_truth[view_id]
        keep = [
            i for i in range(len(truth.labels)) if label is None or truth.labels[i] == label
        ]
        geom = truth.geometry[keep] if keep else truth.geometry[:0]
        gt_geometry[view_id] = geom
        gt_free[view_id] = np.ones(len(keep), dtype=bool)
        n_gt += len(keep)

    tp = np.zeros(len(entries), dtype=bool)
    fp = np.zeros(len(entries), dtype=bool)
    scores = np.array([e[0] for e in entries], dtype=float)
    for row, (_, _, view_id, i) in enumerate(entries):
        geom = gt_geometry.get(view_id)
        free = gt_free.get(view_id)
        matched = False
        if geom is not None and geom.shape[0] and free.any():
            candidates = np.flatnonzero(free)
            dists = pairwise(
                predictions[view_id].geometry[i][None, ...], geom[candidates]
            )[0]
            best = int(np.argmin(dists))
            if dists[best] <= threshold:
                free[candidates[best]] = False
                matched = True
        tp[row] = matched
        fp[row] = not matched

    result = average_precision(tp, fp, scores, n_gt)
    return LabelEval(
        ap=result.ap,
        pr_points=result.pr_points,
        n_gt=n_gt,
        n_pred=len(entries),
        tp=int(tp.sum()),
        fp=int(fp.sum()),
        zero_gt=result.zero_gt,
    )


def sap(
    predictions: Mapping[str, ScoredSet],
    ground_truth: Mapping[str, TrueSet],
    beta: float,
    label: str | None,
) -> LabelEval:
    """Structural AP for line segments of one label at squared-distance
    threshold beta (label None evaluates all items as one class)."""
    return _ap_sweep(predictions, ground_truth, beta, label, _pairwise_segment_sq)


def jap(
    predictions: Mapping[str, ScoredSet],
    ground_truth: Mapping[str, TrueSet],
    theta: float,
    label: str | None,
) -> LabelEval:
    """Junction AP at Euclidean distance threshold theta."""
    return _ap_sweep(predictions, ground_truth, theta, label, _pairwise_point_dist)


@dataclass(frozen=True)
class APSummary:
    """Per-label / per-threshold APs with their two marginal means."""

    per_label: dict[str, dict[float, LabelEval]]
    per_threshold_mean: dict[float, float]  # mean over labels at fixed threshold
    per_label_mean: dict[str, float]  # mean over thresholds per label
    overall_mean: float


def summarize(per_label: dict[str, dict[float, LabelEval]]) -> APSummary:
    labels = list(per_label)
    thresholds = list(next(iter(per_label.values()))) if per_label else []
    per_threshold = {
        t: float(np.mean([per_label[l][t].ap for l in labels])) for t in thresholds
    }
    per_label_mean = {
        l: float(np.mean([per_label[l][t].ap for t in thresholds])) for l in labels
    }
    overall = float(np.mean(list(per_label_mean.values()))) if labels else 0.0
    return APSummary(per_label, per_threshold, per_label_mean, overall)


def msap(per_label: dict[str, dict[float, LabelEval]]) -> APSummary:
    """msAP per threshold, per-label mean over thresholds, and their mean."""
    return summarize(per_label)


@dataclass(frozen=True)
class EvalReport:
    lines: APSummary
    junctions: APSummary
    counts: dict[str, dict[str, int]]


def evaluate(
    line_predictions: Mapping[str, ScoredSet],
    line_truth: Mapping[str, TrueSet],
    junction_predictions: Mapping[str, ScoredSet],
    junction_truth: Mapping[str, TrueSet],
    betas: Sequence[float] = BETAS,
    thetas: Sequence[float] = THETAS,
    line_labels: Sequence[str] | None = LINE_EVAL_LABELS,
    junction_labels: Sequence[str] | None = JUNCTION_EVAL_LABELS,
) -> EvalReport:
    """Full evaluation across labels and thresholds.

    Passing line_labels/junction_labels as None runs the single-class
    (non-semantic) variant under the pseudo-label "valid".
    """
    line_label_list = list(line_labels) if line_labels is not None else [None]
    junction_label_list = list(junction_labels) if junction_labels is not None else [None]

    line_eval = {
        (label if label is not None else "valid"): {
            float(beta): sap(line_predictions, line_truth, float(beta), label)
            for beta in betas
        }
        for label in line_label_list
    }
    junction_eval = {
        (label if label is not None else "valid"): {
            float(theta): jap(junction_predictions, junction_truth, float(theta), label)
            for theta in thetas
        }
        for label in junction_label_list
    }
    lines_summary = summarize(line_eval)
    junctions_summary = summarize(junction_eval)

    def _counts(summary: APSummary) -> dict[str, int]:
        first_threshold = next(iter(summary.per_threshold_mean), None)
        tp = fp = n_pred = n_gt = 0
        if first_threshold is not None:
            for label_eval in (summary.per_label[l][first_threshold] for l in summary.per_label):
                tp += label_eval.tp
                fp += label_eval.fp
                n_pred += label_eval.n_pred
                n_gt += label_eval.n_gt
        return {"gt": n_gt, "predictions": n_pred, "tp": tp, "fp": fp}

    return EvalReport(
        lines=lines_summary,
        junctions=junctions_summary,
        counts={"lines": _counts(lines_summary), "junctions": _counts(junctions_summary)},
    )


def report_to_dict(report: EvalReport) -> dict:
    def _summary(summary: APSummary) -> dict:
        return {
            "per_label": {
                label: {
                    "ap": {str(t): entry.ap for t, entry in rows.items()},
                    "ap_mean": summary.per_label_mean[label],
                    "zero_gt": any(entry.zero_gt for entry in rows.values()),
                }
                for label, rows in summary.per_label.items()
            },
            "mean_per_threshold": {str(t): v for t, v in summary.per_threshold_mean.items()},
            "mean": summary.overall_mean,
        }

    return {
        "lines": _summary(report.lines),
        "junctions": _summary(report.junctions),
        "counts": report.counts,
    }


def write_pr_csvs(report: EvalReport, directory) -> None:
    """One score,recall,precision CSV per (label, threshold)."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for prefix, summary in (("sap", report.lines), ("jap", report.junctions)):
        for label, rows in summary.per_label.items():
            for threshold, entry in rows.items():
                name = f"{prefix}_{label}_{threshold:g}.csv"
                lines = ["score,recall,precision"]
                lines += [f"{s!r},{r!r},{p!r}" for s, r, p in entry.pr_points]
                (directory / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
