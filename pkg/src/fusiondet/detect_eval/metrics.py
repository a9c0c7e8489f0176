"""NMS, 11-point interpolated AP and mAP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .boxes import CLASSES, IGNORE, BBox, iou_matrix
from .head import HeadOutput, decode


def nms(boxes: list[BBox], iou_threshold: float = 0.5) -> list[BBox]:
    """Greedy per-class suppression; input order breaks score ties."""
    if not boxes:
        return []
    order = np.argsort([-b.score for b in boxes], kind="stable")
    overlap = iou_matrix(np.array([b.as_array() for b in boxes]), np.array([b.as_array() for b in boxes]))
    cls = np.array([b.cls for b in boxes])
    suppressed = np.zeros(len(boxes), dtype=bool)
    kept: list[BBox] = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(boxes[i])
        suppressed |= (overlap[i] > iou_threshold) & (cls == cls[i])
    return kept


def decode_and_nms(pred: HeadOutput, image_hw, score_threshold: float = 0.05,
                   iou_threshold: float = 0.5, **kw) -> list[list[BBox]]:
    return [nms(c, iou_threshold) for c in decode(pred, image_hw, score_threshold, **kw)]


def _as_frames(items):
    """Accept a flat box list (one frame) or a list of per-frame lists."""
    items = list(items)
    if items and isinstance(items[0], BBox):
        return [items]
    if not items:
        return [[]]
    return [list(x) for x in items]


def precision_recall(dets, gts, cls: int, iou_threshold: float = 0.5):
    det_frames, gt_frames = _as_frames(dets), _as_frames(gts)
    if len(det_frames) != len(gt_frames):
        if det_frames == [[]]:
            det_frames = [[] for _ in gt_frames]
        else:
            raise ValueError("detections and ground truth cover different frame counts")
    gt_boxes = [np.array([g.as_array() for g in f if g.cls == cls]).reshape(-1, 4) for f in gt_frames]
    n_gt = sum(len(g) for g in gt_boxes)
    cand = [(d.score, f, j, d) for f, frame in enumerate(det_frames)
            for j, d in enumerate(frame) if d.cls == cls]
    cand.sort(key=lambda t: (-t[0], t[1], t[2]))
    matched = [np.zeros(len(g), dtype=bool) for g in gt_boxes]
    tp = np.zeros(len(cand))
    for i, (_, f, _, d) in enumerate(cand):
        if not len(gt_boxes[f]):
            continue
        ov = iou_matrix(d.as_array(), gt_boxes[f])[0]
        ov[matched[f]] = -1.0
        best = int(ov.argmax())
        if ov[best] >= iou_threshold:
            matched[f][best] = True
            tp[i] = 1.0
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(cand) + 1) if len(cand) else np.zeros(0)
    recall = ctp / n_gt if n_gt else np.zeros(len(cand))
    return precision, recall, n_gt


def eleven_point_ap(precision, recall) -> float:
    ap = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        sel = precision[recall >= t - 1e-12]
        ap += (sel.max() if sel.size else 0.0) / 11.0
    return float(ap)


def average_precision(dets, gts, iou_threshold: float = 0.5, cls: int = 0) -> float:
    """11-point interpolated AP for one class; 0 when the class has no GT."""
    precision, recall, n_gt = precision_recall(dets, gts, cls, iou_threshold)
    if n_gt == 0:
        return 0.0
    return eleven_point_ap(precision, recall)


def mean_ap(per_class) -> float:
    per_class = list(per_class)
    if not per_class:
        raise ValueError("no class APs to average")
    return float(np.mean(per_class))


@dataclass
class EvalReport:
    classes: tuple
    ap: list
    empty_classes: list = field(default_factory=list)

    @property
    def map(self) -> float:
        return mean_ap(self.ap)

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "ap": {c: a for c, a in zip(self.classes, self.ap)},
            "mAP": self.map,
            "empty_classes": [self.classes[i] for i in self.empty_classes],
        }

    def csv(self) -> str:
        header = ",".join([*self.classes, "mAP"])
        row = ",".join(f"{v:.4f}" for v in [*self.ap, self.map])
        return header + "\n" + row + "\n"


def evaluate(det_frames, gt_frames, classes=CLASSES, iou_threshold: float = 0.5) -> EvalReport:
    aps, empty = [], []
    gt_frames = [[g for g in f if g.cls != IGNORE] for f in gt_frames]
    for k in range(len(classes)):
        if not any(g.cls == k for f in gt_frames for g in f):
            empty.append(k)
        aps.append(average_precision(det_frames, gt_frames, iou_threshold, k))
    return EvalReport(tuple(classes), aps, empty)
