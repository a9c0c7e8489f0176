"""Mini-batch SGD training and evaluation of a :class:`Detector` on in-memory frames."""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from .detect_eval.boxes import BBox
from .detect_eval.metrics import EvalReport, evaluate
from .fusion_net import Preprocessor
from .model import Detector
from .tensor_nn.optim import BASE_LR, DESK_LR_STEP, SGDMomentum, lr_schedule


@dataclass
class TrainConfig:
    iters: int = 2000
    batch_size: int = 4
    momentum: float = 0.9
    base_lr: float = BASE_LR
    lr_step: int = DESK_LR_STEP
    seed: int = 0
    log_every: int = 10
    early_stop_ratio: float | None = None  # abort when val loss > ratio * train loss
    val_every: int = 200
    clip_norm: float | None = 50.0  # rescale gradients whose global L2 norm exceeds this

    def validate(self):
        if self.iters < 0 or self.batch_size < 1 or self.lr_step < 1:
            raise ValueError("iters >= 0, batch_size >= 1 and lr_step >= 1 required")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")

    def to_dict(self):
        return asdict(self)


@dataclass
class Batchable:
    """Frames preprocessed once into network-ready arrays."""

    rgb: np.ndarray
    depth: np.ndarray
    boxes: list

    def __len__(self):
        return len(self.rgb)


def _scale_box(b: BBox, s: float) -> BBox:
    return BBox(b.x1 * s, b.y1 * s, b.x2 * s, b.y2 * s, b.cls, b.score)


def prepare(frames, pre: Preprocessor) -> Batchable:
    rgbs, depths, boxes = [], [], []
    for f in frames:
        h, w = f.rgb.shape[:2]
        rgb, depth = pre(f.rgb, f.depth)
        s = 1.0 if (h, w) == tuple(pre.target) else pre.scale_for(h, w)
        rgbs.append(rgb)
        depths.append(depth)
        boxes.append([_scale_box(b, s) for b in f.boxes] if s != 1.0 else list(f.boxes))
    return Batchable(np.stack(rgbs), np.stack(depths), boxes)


def dataset_mean(frames) -> tuple:
    acc = np.zeros(3)
    n = 0
    for f in frames:
        acc += f.rgb.reshape(-1, 3).sum(0)
        n += f.rgb.shape[0] * f.rgb.shape[1]
    return tuple(float(v) for v in np.round(acc / max(n, 1), 3))


def clip_gradients(grads: dict, max_norm: float | None) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``; returns the original norm."""
    norm = float(np.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * np.asarray(scale, dtype=grads[k].dtype)
    return norm


def batch_loss(det: Detector, data: Batchable, batch_size: int = 16) -> float:
    total, count = 0.0, 0
    for i in range(0, len(data), batch_size):
        sl = slice(i, i + batch_size)
        from .detect_eval.head import detection_loss
        pred = det.forward(data.rgb[sl], data.depth[sl])
        loss, _, _ = detection_loss(pred, data.boxes[sl])
        n = len(data.boxes[sl])
        total += loss * n
        count += n
    return total / max(count, 1)


def train(det: Detector, data: Batchable, cfg: TrainConfig, log=None, val: Batchable | None = None):
    """Run SGD with momentum; ``log`` receives one dict per logged iteration."""
    cfg.validate()
    if not det.params:
        det.init(cfg.seed)
    opt = SGDMomentum(cfg.momentum)
    rng = np.random.default_rng(cfg.seed + 1)
    order = np.array([], dtype=np.int64)
    history = []
    for it in range(cfg.iters):
        if len(order) < cfg.batch_size:
            order = np.concatenate([order, rng.permutation(len(data))])
        idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
        lr = lr_schedule(it, cfg.lr_step, cfg.base_lr)
        loss, grads, parts = det.loss_and_grads(data.rgb[idx], data.depth[idx], [data.boxes[i] for i in idx])
        if not np.isfinite(loss) or not all(np.isfinite(g).all() for g in grads.values()):
            raise FloatingPointError(f"non-finite loss or gradient at iteration {it}")
        clip_gradients(grads, cfg.clip_norm)
        opt.step(det.params, grads, lr)
        record = None
        if it % cfg.log_every == 0 or it == cfg.iters - 1:
            record = {"iteration": it, "loss": loss, "lr": lr, **{f"loss_{k}": v for k, v in parts.items()}}
        if val is not None and cfg.early_stop_ratio and (it + 1) % cfg.val_every == 0:
            vloss = batch_loss(det, val)
            record = record or {"iteration": it, "loss": loss, "lr": lr}
            record["val_loss"] = vloss
            if vloss > cfg.early_stop_ratio * max(loss, 1e-12):
                record["stopped"] = True
                history.append(record)
                if log:
                    log(record)
                break
        if record is not None:
            history.append(record)
            if log:
                log(record)
    return history


def detect_all(det: Detector, data: Batchable, batch_size: int = 16, score_threshold=0.05, iou_threshold=0.5):
    dets = []
    for i in range(0, len(data), batch_size):
        dets.extend(det.detect(data.rgb[i:i + batch_size], data.depth[i:i + batch_size],
                               score_threshold, iou_threshold))
    return dets


def evaluate_detector(det: Detector, data: Batchable, iou_threshold: float = 0.5) -> EvalReport:
    return evaluate(detect_all(det, data), data.boxes, det.classes, iou_threshold)


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t
