"""Detection metrics: BEV / 2D IoU matching, class-agnostic AP, per-class accuracy."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import read_labels
from .errors import BehindCamera, ConfigInvalid
from .geometry import (
    AABB2,
    CameraIntrinsics,
    Obb3,
    RigidTransform,
    iou_2d,
    project,
    rotated_iou_bev,
)


@dataclass(frozen=True)
class Detection:
    """A predicted box with its confidence."""

    box: object
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("detection confidence must lie in [0, 1]")


def project_box_2d(box: Obb3, box_to_cam: RigidTransform, intrinsics: CameraIntrinsics) -> AABB2:
    """Tightest axis-aligned 2D box around the 8 projected vertices.

    All vertices must land in front of the camera; the result is clipped to
    the image bounds.
    """
    corners = box_to_cam.apply(box.corners())
    if np.any(corners[:, 2] <= 0):
        raise BehindCamera("box has vertices at non-positive camera depth")
    uv = project(corners, intrinsics)
    lo = np.clip(uv.min(axis=0), (0.0, 0.0), (intrinsics.width, intrinsics.height))
    hi = np.clip(uv.max(axis=0), (0.0, 0.0), (intrinsics.width, intrinsics.height))
    return AABB2(lo, hi)


def _confidence_order(detections) -> list[int]:
    # Stable sort keeps insertion order among equal confidences.
    return sorted(range(len(detections)), key=lambda i: -detections[i].confidence)


def _greedy_match(detections, gt_boxes, iou_fn, threshold):
    """True-positive flags in confidence order: each detection takes the
    unmatched ground-truth box it overlaps most, if that IoU meets the
    threshold."""
    matched = [False] * len(gt_boxes)
    flags = []
    for i in _confidence_order(detections):
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(gt_boxes):
            if matched[j]:
                continue
            iou = iou_fn(detections[i].box, gt)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= threshold:
            matched[best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return flags


def _ap_from_flags(flags, n_gt: int) -> float:
    """All-point interpolated average precision from ordered TP/FP flags."""
    tp = np.cumsum([1.0 if f else 0.0 for f in flags])
    ranks = np.arange(1, len(flags) + 1)
    precision = tp / ranks
    recall = tp / n_gt
    # Interpolated precision: running maximum from the right.
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_recall = 0.0
    for r, p in zip(recall, interp):
        if r > prev_recall:
            ap += (r - prev_recall) * p
            prev_recall = r
    return float(ap)


def average_precision(detections, gt_boxes, iou_fn, threshold: float) -> float:
    """Class-agnostic AP at one IoU threshold over a single pooled collection.

    No ground truth and no detections scores 1.0 by convention; spurious
    detections against an empty ground truth score 0.0.
    """
    if not gt_boxes:
        return 1.0 if not detections else 0.0
    if not detections:
        return 0.0
    flags = _greedy_match(detections, gt_boxes, iou_fn, threshold)
    return _ap_from_flags(flags, len(gt_boxes))


def average_precision_grouped(dets_by_frame: dict, gts_by_frame: dict, iou_fn, threshold: float) -> float:
    """AP pooled over frames; matching never crosses frame boundaries."""
    n_gt = sum(len(g) for g in gts_by_frame.values())
    all_dets = [
        (det.confidence, frame, i)
        for frame, dets in sorted(dets_by_frame.items())
        for i, det in enumerate(dets)
    ]
    if n_gt == 0:
        return 1.0 if not all_dets else 0.0
    if not all_dets:
        return 0.0
    order = sorted(range(len(all_dets)), key=lambda k: -all_dets[k][0])
    matched = {frame: [False] * len(gts) for frame, gts in gts_by_frame.items()}
    flags = []
    for k in order:
        _, frame, i = all_dets[k]
        det = dets_by_frame[frame][i]
        gts = gts_by_frame.get(frame, [])
        best_j, best_iou = -1, 0.0
        for j, gt in enumerate(gts):
            if matched[frame][j]:
                continue
            iou = iou_fn(det.box, gt)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= threshold:
            matched[frame][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return _ap_from_flags(flags, n_gt)


def per_class_accuracy(detections, labelled_gts, iou_fn, threshold: float) -> dict[str, float]:
    """Fraction of each class's ground-truth boxes found by greatest-IoU association.

    Each detection is associated with the ground-truth box it overlaps most
    (ties to the earlier box); a ground-truth box counts as detected when some
    detection associates with it at an IoU at or above the threshold. Classes
    without ground truth are omitted.
    """
    detected = [False] * len(labelled_gts)
    for det in detections:
        best_j, best_iou = -1, 0.0
        for j, (gt_box, _) in enumerate(labelled_gts):
            iou = iou_fn(det.box, gt_box)
            if iou > best_iou:
                best_j, best_iou = j, iou
        if best_j >= 0 and best_iou >= threshold:
            detected[best_j] = True
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for (gt_box, cls), flag in zip(labelled_gts, detected):
        totals[cls] = totals.get(cls, 0) + 1
        hits[cls] = hits.get(cls, 0) + (1 if flag else 0)
    return {cls: hits[cls] / totals[cls] for cls in totals}


@dataclass
class EvalReport:
    mode: str
    thresholds: list[float]
    mean_ap: dict[float, float] = field(default_factory=dict)
    class_accuracy: dict[float, dict[str, float]] = field(default_factory=dict)

    def classes(self) -> list[str]:
        names = set()
        for acc in self.class_accuracy.values():
            names.update(acc)
        return sorted(names)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "thresholds": self.thresholds,
            "mean_ap": {f"{t:g}": self.mean_ap[t] for t in self.thresholds},
            "class_accuracy": {
                f"{t:g}": self.class_accuracy[t] for t in self.thresholds
            },
        }

    def format_table(self) -> str:
        classes = self.classes()
        header = ["iou", "mAP"] + classes
        rows = [header]
        for t in self.thresholds:
            row = [f"{t:.2f}", f"{self.mean_ap[t]:.4f}"]
            for cls in classes:
                acc = self.class_accuracy[t].get(cls)
                row.append("-" if acc is None else f"{acc:.4f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = [f"mode: {self.mode}"]
        for r in rows:
            lines.append("  ".join(v.rjust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def _record_to_aabb2(record, intrinsics):
    if record.bbox2d.area() > 0:
        return record.bbox2d
    if intrinsics is None:
        raise ConfigInvalid("2D evaluation needs calibration to project 3D boxes")
    return project_box_2d(record.box, RigidTransform.identity(), intrinsics)


def evaluate_sequence(
    det_dir,
    gt_dir,
    mode: str = "bev",
    thresholds=None,
    intrinsics: CameraIntrinsics | None = None,
) -> EvalReport:
    """Score per-frame KITTI label files in `det_dir` against those in `gt_dir`.

    BEV mode compares the yaw-rotated ground-plane footprints; 2D mode
    compares axis-aligned image boxes (stored ones when present, otherwise
    projections via the intrinsics). Frames are paired by file name; a
    missing detection file means no detections for that frame.
    """
    if mode not in ("bev", "2d"):
        raise ConfigInvalid(f"unknown evaluation mode {mode!r}")
    thresholds = list(thresholds) if thresholds is not None else [round(0.1 * i, 1) for i in range(1, 8)]
    gt_dir = Path(gt_dir)
    det_dir = Path(det_dir)
    if not det_dir.is_dir():
        raise ConfigInvalid(f"{det_dir}: detection directory does not exist")
    frames = sorted(p.stem for p in gt_dir.glob("*.txt"))
    if not frames:
        raise ConfigInvalid(f"{gt_dir}: no ground-truth label files")

    if mode == "bev":
        iou_fn = rotated_iou_bev
        det_box = gt_box = lambda record: record.box
    else:
        iou_fn = iou_2d
        det_box = gt_box = lambda record: _record_to_aabb2(record, intrinsics)

    dets_by_frame = {}
    gts_by_frame = {}
    labelled_by_frame = {}
    for frame in frames:
        gt_records = read_labels(gt_dir / f"{frame}.txt")
        det_path = det_dir / f"{frame}.txt"
        det_records = read_labels(det_path) if det_path.exists() else []
        dets_by_frame[frame] = [
            Detection(det_box(r), r.score if r.score is not None else 1.0)
            for r in det_records
        ]
        gts_by_frame[frame] = [gt_box(r) for r in gt_records]
        labelled_by_frame[frame] = [(gt_box(r), r.cls) for r in gt_records]

    report = EvalReport(mode=mode, thresholds=thresholds)
    for threshold in thresholds:
        report.mean_ap[threshold] = average_precision_grouped(
            dets_by_frame, gts_by_frame, iou_fn, threshold
        )
        totals: dict[str, int] = {}
        hits: dict[str, int] = {}
        for frame in frames:
            detected = [False] * len(labelled_by_frame[frame])
            for det in dets_by_frame[frame]:
                best_j, best_iou = -1, 0.0
                for j, (gt_box_j, _) in enumerate(labelled_by_frame[frame]):
                    iou = iou_fn(det.box, gt_box_j)
                    if iou > best_iou:
                        best_j, best_iou = j, iou
                if best_j >= 0 and best_iou >= threshold:
                    detected[best_j] = True
            for (gt_box_j, cls), flag in zip(labelled_by_frame[frame], detected):
                totals[cls] = totals.get(cls, 0) + 1
                hits[cls] = hits.get(cls, 0) + (1 if flag else 0)
        report.class_accuracy[threshold] = {
            cls: hits[cls] / totals[cls] for cls in totals
        }
    return report
