"""Tracking accuracy and condensation metrics.

Cumulative precision through frame ``i`` is ``sum TP / sum (TP + FP)`` over
frames ``1..i``; recall divides the same true-positive sum by the annotation
count of the whole video. Average precision is their product at ``i = N``.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou, point_in_polygon

_SPLIT = re.compile(r"[,\s]+")
_FRAMES = re.compile(r"#\s*frames\s*[=:]?\s*(\d+)", re.IGNORECASE)


@dataclass
class AnnotationSet:
    """Per-frame ``(object_id, Box)`` lists; ``n_frames`` is the declared video length."""

    frames: dict[int, list[tuple[int, Box]]] = field(default_factory=dict)
    n_frames: int | None = None
    roi: list[tuple[float, float]] | None = None

    def add(self, frame_index: int, object_id: int, box: Box) -> None:
        self.frames.setdefault(frame_index, []).append((object_id, box))

    def get(self, frame_index: int) -> list[tuple[int, Box]]:
        return self.frames.get(frame_index, [])

    @property
    def max_frame(self) -> int:
        return max(self.frames, default=-1)

    def rows(self):
        for k in sorted(self.frames):
            for oid, box in sorted(self.frames[k], key=lambda r: (r[0], r[1])):
                yield (k, oid, *box)


def read_annotations(path) -> AnnotationSet:
    """Read ``frame_index, object_id, x, y, w, h`` rows (comma, tab or space separated)."""
    ann = AnnotationSet()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _FRAMES.match(line)
                if m:
                    ann.n_frames = int(m.group(1))
                continue
            parts = [p for p in _SPLIT.split(line) if p]
            if parts[0].lower() in ("frame", "frame_index"):
                continue
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}")
            k, oid, x, y, w, h = (int(float(p)) for p in parts)
            ann.add(k, oid, Box(x, y, w, h))
    return ann


def write_annotations(path, ann: AnnotationSet) -> None:
    with open(path, "w") as fh:
        if ann.n_frames is not None:
            fh.write(f"# frames {ann.n_frames}\n")
        for row in ann.rows():
            fh.write("\t".join(str(v) for v in row) + "\n")


def read_roi(path) -> list[tuple[float, float]]:
    pts = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            x, y = (float(p) for p in _SPLIT.split(line) if p)
            pts.append((x, y))
    if len(pts) < 3:
        raise ValueError(f"{path}: an ROI polygon needs at least 3 vertices")
    return pts


def _in_roi(box: Box, roi) -> bool:
    if roi is None:
        return True
    cx, cy = box.center
    return point_in_polygon(cx, cy, roi)


def match_frame(gt, pred, iou_threshold: float = 0.5, roi=None) -> tuple[int, int]:
    """Greedy one-to-one matching by descending IoU; returns ``(TP, FP)``.

    ``gt`` and ``pred`` are lists of ``(id, Box)``. Predictions whose centre is
    outside ``roi`` are ignored; unmatched predictions, including duplicates of
    an already matched object, are false positives.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must be in (0, 1)")
    gt_boxes = [b for _, b in gt if _in_roi(b, roi)]
    pred_boxes = [b for _, b in pred if _in_roi(b, roi)]
    pairs = []
    for pi, pb in enumerate(pred_boxes):
        for gi, gb in enumerate(gt_boxes):
            v = iou(pb, gb)
            if v >= iou_threshold:
                pairs.append((-v, pi, gi))
    pairs.sort()
    used_p: set[int] = set()
    used_g: set[int] = set()
    for _, pi, gi in pairs:
        if pi in used_p or gi in used_g:
            continue
        used_p.add(pi)
        used_g.add(gi)
    tp = len(used_p)
    return tp, len(pred_boxes) - tp


@dataclass
class EvalCounts:
    tp: np.ndarray
    fp: np.ndarray
    npos: np.ndarray

    @property
    def n_frames(self) -> int:
        return len(self.tp)

    def cumulative(self) -> tuple[np.ndarray, np.ndarray]:
        """Precision and recall series for ``i = 1..N``."""
        ctp = np.cumsum(self.tp, dtype=np.float64)
        cdet = ctp + np.cumsum(self.fp, dtype=np.float64)
        total = float(self.npos.sum())
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(cdet > 0, ctp / np.where(cdet > 0, cdet, 1), 1.0)
        recall = ctp / total if total > 0 else np.ones_like(ctp)
        return precision, recall


def evaluate(gt: AnnotationSet, pred: AnnotationSet, iou_threshold: float = 0.5, roi=None) -> EvalCounts:
    """Per-frame TP/FP/NP counts of ``pred`` against ``gt``."""
    if gt.n_frames is not None and pred.n_frames is not None and gt.n_frames != pred.n_frames:
        raise ValueError(
            f"video length mismatch: ground truth has {gt.n_frames} frames, "
            f"predictions {pred.n_frames}"
        )
    n = gt.n_frames if gt.n_frames is not None else pred.n_frames
    if n is None:
        n = max(gt.max_frame, pred.max_frame) + 1
    for name, ann in (("ground truth", gt), ("predictions", pred)):
        if ann.max_frame >= n or (ann.frames and min(ann.frames) < 0):
            raise ValueError(f"{name} reference frames outside the video range 0..{n - 1}")
    roi = roi if roi is not None else gt.roi
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    npos = np.zeros(n, dtype=np.int64)
    for k in range(n):
        g = gt.get(k)
        npos[k] = sum(1 for _, b in g if _in_roi(b, roi))
        tp[k], fp[k] = match_frame(g, pred.get(k), iou_threshold, roi)
    return EvalCounts(tp, fp, npos)


def precision_recall(counts: EvalCounts, i: int | None = None) -> tuple[float, float]:
    """Cumulative precision and recall through the first ``i`` frames (default all)."""
    n = counts.n_frames
    if i is None:
        i = n
    if not 1 <= i <= n:
        raise ValueError(f"i must be in 1..{n}, got {i}")
    precision, recall = counts.cumulative()
    return float(precision[i - 1]), float(recall[i - 1])


def average_precision(precision: float, recall: float) -> float:
    if not (0.0 <= precision <= 1.0 and 0.0 <= recall <= 1.0):
        raise ValueError("precision and recall must lie in [0, 1]")
    return precision * recall


def frame_reduction_rate(tsv: int, tov: int) -> float:
    """Synopsis length over original length; lower is stronger condensation."""
    if tov <= 0:
        raise ValueError("tov must be > 0")
    return tsv / tov


def throughput_fps(tov: int, elapsed_seconds: float) -> float:
    if not elapsed_seconds > 0:
        raise ValueError("elapsed_seconds must be > 0")
    return tov / elapsed_seconds


def pr_curve(counts: EvalCounts) -> list[tuple[float, float]]:
    """``(recall, precision)`` after each frame."""
    precision, recall = counts.cumulative()
    return list(zip(recall.tolist(), precision.tolist()))


def write_pr_curve(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["recall", "precision"])
        for r, p in curve:
            writer.writerow([f"{r:.6f}", f"{p:.6f}"])


def tracks_to_annotations(tubes_or_tracks, n_frames: int | None = None) -> AnnotationSet:
    """Annotation rows from confirmed tubes or tracks (anything with ``id`` and boxes)."""
    ann = AnnotationSet(n_frames=n_frames)
    for t in tubes_or_tracks:
        if hasattr(t, "frames"):
            for of in t.frames:
                ann.add(of.source_frame, t.id, of.box)
        else:
            for k, det in t.history:
                ann.add(k, t.id, det.box)
    return ann
