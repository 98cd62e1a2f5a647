"""Frame-level average precision and per-class reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .boxes import Box, iou
from .errors import UsageError
from .features import GroundTruthRecord

FrameKey = tuple[str, int]


@dataclass(frozen=True)
class DetectionRecord:
    video_id: str
    frame_idx: int
    box: Box
    label_name: str
    score: float

    @property
    def key(self) -> FrameKey:
        return (self.video_id, self.frame_idx)


def frame_ap(
    detections: Sequence[DetectionRecord],
    ground_truth: Sequence[tuple[FrameKey, Box]],
    iou_threshold: float = 0.5,
) -> float:
    """All-point interpolated AP for one class; NaN when there is no ground truth.

    Detections are ranked by score (stable for ties). Each one claims the
    unmatched GT box in its frame with the highest IoU >= ``iou_threshold``
    (lowest index on IoU ties); otherwise it is a false positive.
    """
    if not 0 < iou_threshold < 1:
        raise UsageError(f"IoU threshold {iou_threshold} must lie in (0, 1)")
    if not ground_truth:
        return math.nan
    gt_by_frame: dict[FrameKey, list[Box]] = {}
    for key, box in ground_truth:
        gt_by_frame.setdefault(key, []).append(box)
    matched = {key: [False] * len(boxes) for key, boxes in gt_by_frame.items()}

    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    hits = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = detections[i]
        boxes = gt_by_frame.get(det.key, [])
        best, best_iou = -1, -1.0
        for j, box in enumerate(boxes):
            if matched[det.key][j]:
                continue
            o = iou(det.box, box)
            if o >= iou_threshold and o > best_iou:
                best, best_iou = j, o
        if best >= 0:
            assert not matched[det.key][best]
            matched[det.key][best] = True
            hits[rank] = 1.0
    if not len(order):
        return 0.0

    tp = np.cumsum(hits)
    recall = tp / len(ground_truth)
    precision = tp / np.arange(1, len(order) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class EvalReport:
    per_class: dict[str, float | None]
    num_gt: dict[str, int]
    num_detections: dict[str, int]
    split_id: str = ""
    config_digest: str = ""
    iou_threshold: float = 0.5
    notes: list[str] = field(default_factory=list)

    @property
    def excluded(self) -> list[str]:
        return [name for name, ap in self.per_class.items() if ap is None]

    @property
    def mean_ap(self) -> float:
        aps = [ap for ap in self.per_class.values() if ap is not None]
        return float(np.mean(aps)) if aps else 0.0

    def to_dict(self) -> dict:
        return {
            "format": "iclip-report",
            "version": 1,
            "split_id": self.split_id,
            "config_digest": self.config_digest,
            "iou_threshold": self.iou_threshold,
            "ap_convention": "all-point interpolation; score = person confidence x class probability",
            "mAP": self.mean_ap,
            "classes": [
                {"label": name, "ap": ap, "num_gt": self.num_gt[name],
                 "num_detections": self.num_detections[name]}
                for name, ap in self.per_class.items()
            ],
            "excluded_no_gt": self.excluded,
            "notes": list(self.notes),
        }

    def table(self) -> str:
        lines = [f"{'class':<24}{'AP':>8}{'#GT':>7}{'#det':>7}"]
        for name, ap in self.per_class.items():
            shown = "   n/a" if ap is None else f"{100 * ap:8.2f}"
            lines.append(f"{name:<24}{shown:>8}{self.num_gt[name]:>7}{self.num_detections[name]:>7}")
        lines.append(f"{'frame mAP':<24}{100 * self.mean_ap:8.2f}")
        return "\n".join(lines)


def evaluate(
    detections: Iterable[DetectionRecord],
    ground_truth: Iterable[GroundTruthRecord],
    test_labels: Sequence[str],
    iou_threshold: float = 0.5,
) -> EvalReport:
    """Per-class frame AP over ``test_labels``; mAP averages classes that have GT."""
    labels = list(test_labels)
    known = set(labels)
    dets_by_class: dict[str, list[DetectionRecord]] = {n: [] for n in labels}
    for det in detections:
        if det.label_name not in known:
            raise UsageError(f"detection names label '{det.label_name}' outside the test set")
        dets_by_class[det.label_name].append(det)
    gt_by_class: dict[str, list[tuple[FrameKey, Box]]] = {n: [] for n in labels}
    for record in ground_truth:
        for box, name in record.boxes:
            if name in known:
                gt_by_class[name].append((record.key, box))
    per_class = {}
    for name in labels:
        ap = frame_ap(dets_by_class[name], gt_by_class[name], iou_threshold)
        per_class[name] = None if math.isnan(ap) else ap
    report = EvalReport(
        per_class,
        {n: len(gt_by_class[n]) for n in labels},
        {n: len(dets_by_class[n]) for n in labels},
        iou_threshold=iou_threshold,
    )
    if report.excluded:
        report.notes.append(f"classes without ground truth excluded from mAP: {report.excluded}")
    return report


def write_detections(path, detections: Sequence[DetectionRecord], digest: str = "") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"format": "iclip-detections", "version": 1, "config_digest": digest}) + "\n")
        for d in detections:
            fh.write(json.dumps({"video_id": d.video_id, "frame_idx": d.frame_idx, "box": list(d.box),
                                 "label_name": d.label_name, "score": d.score}) + "\n")


def load_detections(path) -> list[DetectionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        head = json.loads(fh.readline() or "{}")
        if head.get("format") != "iclip-detections":
            raise UsageError(f"{path}: not a detections file")
        for line_no, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(DetectionRecord(r["video_id"], int(r["frame_idx"]), tuple(r["box"]),
                                           r["label_name"], float(r["score"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise UsageError(f"{path}: line {line_no}: bad detection record ({exc})") from exc
    return out


def write_report(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
