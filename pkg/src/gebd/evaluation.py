"""Boundary F1 / precision / recall under a relative-distance tolerance.

A prediction matches a ground-truth boundary when their distance is at most
``rel_dis * duration``. Counts are summed over the whole dataset before the
ratios are taken.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data_io import BoundaryAnnotation
from .inference import DetectionResult


@dataclass(frozen=True)
class EvalReport:
    rel_dis_threshold: float
    tp: int
    num_pred: int
    num_gt: int

    @property
    def precision(self) -> float:
        return self.tp / self.num_pred if self.num_pred else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.num_gt if self.num_gt else 0.0

    @property
    def f1(self) -> float:
        # 2PR/(P+R) with the common tp factored out
        return 2 * self.tp / (self.num_pred + self.num_gt) if self.tp else 0.0

    def line(self) -> str:
        return (f"{self.rel_dis_threshold!r} {self.tp} {self.num_pred} {self.num_gt} "
                f"{self.precision!r} {self.recall!r} {self.f1!r}")


REPORT_HEADER = "# rel_dis tp num_pred num_gt precision recall f1"


def match(pred_times, gt_times, duration_s: float, rel_dis: float, optimal: bool = False) -> int:
    """Number of one-to-one matches between predicted and true boundaries.

    Greedy by default: predictions in ascending time each take the earliest
    unmatched ground truth within tolerance. ``optimal=True`` solves the
    maximum bipartite matching instead.
    """
    if duration_s < 0:
        raise ValueError(f"negative duration {duration_s}")
    tol = rel_dis * duration_s
    pred = np.asarray(pred_times, dtype=np.float64)
    gt = np.asarray(gt_times, dtype=np.float64)
    if len(pred) == 0 or len(gt) == 0:
        return 0
    if optimal:
        feasible = np.abs(pred[:, None] - gt[None, :]) <= tol
        rows, cols = linear_sum_assignment(-feasible.astype(float))
        return int(feasible[rows, cols].sum())
    used = np.zeros(len(gt), dtype=bool)
    tp = 0
    for t in np.sort(pred):
        for j in range(len(gt)):
            if not used[j] and abs(t - gt[j]) <= tol:
                used[j] = True
                tp += 1
                break
    return tp


def evaluate(detections: list[DetectionResult], annotations: list[BoundaryAnnotation],
             rel_dis: float = 0.05, optimal: bool = False) -> EvalReport:
    by_id = {a.video_id: a for a in annotations}
    preds: dict[str, list[float]] = {}
    for d in detections:
        if d.video_id not in by_id:
            raise KeyError(f"detection for unknown video_id {d.video_id!r}")
        preds[d.video_id] = d.boundary_times_s
    tp = num_pred = num_gt = 0
    for ann in annotations:
        p = sorted(preds.get(ann.video_id, []))
        tp += match(p, ann.boundaries_s, ann.duration_s, rel_dis, optimal)
        num_pred += len(p)
        num_gt += len(ann.boundaries_s)
    return EvalReport(rel_dis, tp, num_pred, num_gt)


def format_reports(reports: list[EvalReport]) -> str:
    return REPORT_HEADER + "\n" + "".join(r.line() + "\n" for r in reports)
