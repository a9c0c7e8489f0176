"""Dense single-anchor detection head on the 16x feature grid.

Each cell predicts one objectness logit, K class logits and a box encoded
as ``(dx, dy, log w, log h)`` relative to the cell centre and the anchor.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeMismatch
from ..tensor_nn import ops
from .boxes import IGNORE, BBox

STRIDE = 16
DEFAULT_ANCHOR = (32.0, 32.0)
HEAD_W = "head.weight"
HEAD_B = "head.bias"


@dataclass
class HeadOutput:
    raw: np.ndarray  # (N, 1 + K + 4, Hf, Wf)
    num_classes: int

    @property
    def objectness(self):
        return self.raw[:, 0]

    @property
    def class_logits(self):
        return self.raw[:, 1:1 + self.num_classes]

    @property
    def box_deltas(self):
        return self.raw[:, 1 + self.num_classes:]


def head_channels(num_classes: int) -> int:
    return 1 + num_classes + 4


def head_param_shapes(in_channels: int, num_classes: int):
    c = head_channels(num_classes)
    return {HEAD_W: (c, in_channels, 1, 1), HEAD_B: (c,)}


def head_forward(featmap, params, num_classes: int) -> HeadOutput:
    w = params[HEAD_W]
    if w.shape[0] != head_channels(num_classes):
        raise ShapeMismatch(f"head has {w.shape[0]} outputs, expected {head_channels(num_classes)}")
    return HeadOutput(ops.conv2d_forward(featmap, w, params[HEAD_B]), num_classes)


def head_backward(grad_raw, featmap, params, grads):
    gx, gw, gb = ops.conv2d_backward(grad_raw, featmap, params[HEAD_W])
    grads[HEAD_W] = grads.get(HEAD_W, 0) + gw
    grads[HEAD_B] = grads.get(HEAD_B, 0) + gb
    return gx


def cell_centers(hf: int, wf: int, stride: int = STRIDE):
    cy = (np.arange(hf) + 0.5) * stride
    cx = (np.arange(wf) + 0.5) * stride
    return np.meshgrid(cx, cy)  # each (hf, wf)


def encode_box(box: BBox, cx, cy, anchor=DEFAULT_ANCHOR):
    aw, ah = anchor
    bw, bh = box.x2 - box.x1, box.y2 - box.y1
    parts = np.broadcast_arrays(
        ((box.x1 + box.x2) / 2 - np.asarray(cx)) / aw,
        ((box.y1 + box.y2) / 2 - np.asarray(cy)) / ah,
        np.log(bw / aw),
        np.log(bh / ah),
    )
    return np.stack(parts)


@dataclass
class Targets:
    positive: np.ndarray  # (Hf, Wf) bool
    ignore: np.ndarray  # (Hf, Wf) bool
    cls: np.ndarray  # (Hf, Wf) int
    box: np.ndarray  # (4, Hf, Wf)


def build_targets(gts, hf: int, wf: int, stride: int = STRIDE, anchor=DEFAULT_ANCHOR) -> Targets:
    """A cell is positive when its centre lies inside a GT box (smallest box wins)."""
    cx, cy = cell_centers(hf, wf, stride)
    positive = np.zeros((hf, wf), dtype=bool)
    ignore = np.zeros((hf, wf), dtype=bool)
    cls = np.zeros((hf, wf), dtype=np.int64)
    box = np.zeros((4, hf, wf))
    best_area = np.full((hf, wf), np.inf)
    for gt in gts:
        inside = (cx >= gt.x1) & (cx < gt.x2) & (cy >= gt.y1) & (cy < gt.y2)
        if gt.cls == IGNORE:
            ignore |= inside
            continue
        take = inside & (gt.area < best_area)
        if not take.any():
            continue
        best_area[take] = gt.area
        positive[take] = True
        cls[take] = gt.cls
        enc = encode_box(gt, cx, cy, anchor)
        box[:, take] = enc[:, take]
    ignore &= ~positive
    return Targets(positive, ignore, cls, box)


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def _softmax(x, axis):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def detection_loss(pred: HeadOutput, batch_gts, stride: int = STRIDE, anchor=DEFAULT_ANCHOR):
    """Objectness BCE + class CE + smooth-L1 box loss, equally weighted.

    BCE is averaged over non-ignored cells; the class and box terms over
    positive cells. Returns ``(loss, grad_raw, parts)``.
    """
    raw = pred.raw.astype(np.float64)
    n, _, hf, wf = raw.shape
    k = pred.num_classes
    if len(batch_gts) != n:
        raise ShapeMismatch(f"{len(batch_gts)} ground-truth lists for a batch of {n}")
    targets = [build_targets(g, hf, wf, stride, anchor) for g in batch_gts]
    pos = np.stack([t.positive for t in targets])
    valid = ~np.stack([t.ignore for t in targets])
    cls_t = np.stack([t.cls for t in targets])
    box_t = np.stack([t.box for t in targets])  # N, 4, Hf, Wf

    grad = np.zeros_like(raw)
    obj = raw[:, 0]
    y = pos.astype(np.float64)
    n_valid = max(int(valid.sum()), 1)
    bce = -(y * _log_sigmoid(obj) + (1 - y) * _log_sigmoid(-obj))
    obj_loss = float((bce * valid).sum() / n_valid)
    grad[:, 0] = (_sigmoid(obj) - y) * valid / n_valid

    n_pos = int(pos.sum())
    cls_loss = box_loss = 0.0
    if n_pos:
        logits = raw[:, 1:1 + k]
        prob = _softmax(logits, axis=1)
        onehot = np.zeros_like(logits)
        np.put_along_axis(onehot, cls_t[:, None], 1.0, axis=1)
        logp = logits - logits.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        cls_loss = float(-(onehot * logp).sum(axis=1)[pos].sum() / n_pos)
        grad[:, 1:1 + k] = (prob - onehot) * pos[:, None] / n_pos

        diff = raw[:, 1 + k:] - box_t
        ad = np.abs(diff)
        sl1 = np.where(ad < 1.0, 0.5 * diff ** 2, ad - 0.5)
        box_loss = float(sl1.sum(axis=1)[pos].sum() / n_pos)
        grad[:, 1 + k:] = np.where(ad < 1.0, diff, np.sign(diff)) * pos[:, None] / n_pos

    total = obj_loss + cls_loss + box_loss
    parts = {"objectness": obj_loss, "class": cls_loss, "box": box_loss}
    return total, grad.astype(pred.raw.dtype), parts


def decode(pred: HeadOutput, image_hw, score_threshold: float = 0.05,
           stride: int = STRIDE, anchor=DEFAULT_ANCHOR):
    """Per image: list of candidate boxes in cell row-major order (pre-NMS)."""
    raw = pred.raw.astype(np.float64)
    n, _, hf, wf = raw.shape
    k = pred.num_classes
    h, w = image_hw
    aw, ah = anchor
    cx, cy = cell_centers(hf, wf, stride)
    out = []
    for i in range(n):
        obj = _sigmoid(raw[i, 0])
        prob = _softmax(raw[i, 1:1 + k], axis=0)
        cls = prob.argmax(axis=0)
        score = obj * prob.max(axis=0)
        d = raw[i, 1 + k:]
        bx = cx + d[0] * aw
        by = cy + d[1] * ah
        bw = aw * np.exp(np.clip(d[2], -10, 10))
        bh = ah * np.exp(np.clip(d[3], -10, 10))
        x1 = np.clip(bx - bw / 2, 0, w)
        x2 = np.clip(bx + bw / 2, 0, w)
        y1 = np.clip(by - bh / 2, 0, h)
        y2 = np.clip(by + bh / 2, 0, h)
        keep = (score >= score_threshold) & (x2 > x1) & (y2 > y1)
        cols = [a[keep].tolist() for a in (x1, y1, x2, y2, cls, score)]
        out.append([BBox(a, b, c, d, int(k), s) for a, b, c, d, k, s in zip(*cols)])
    return out
