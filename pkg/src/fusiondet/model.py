"""Encoder graph plus detection head, with one flat parameter dict."""
from __future__ import annotations

import numpy as np

from .detect_eval.boxes import CLASSES
from .detect_eval.head import (
    HEAD_B,
    HEAD_W,
    STRIDE,
    HeadOutput,
    detection_loss,
    head_backward,
    head_forward,
    head_param_shapes,
)
from .detect_eval.metrics import decode_and_nms
from .fusion_net import (
    ArchitectureConfig,
    EncoderConfig,
    FusionArch,
    build_encoder,
    init_parameters,
    stream_inputs,
)
from .tensor_nn.layers import count_parameters

HEAD_INIT_STD = 0.01


class Detector:
    def __init__(self, arch: FusionArch, cfg: EncoderConfig, classes=CLASSES):
        self.arch = arch
        self.cfg = cfg
        self.classes = tuple(classes)
        self.graph = build_encoder(arch, cfg)
        self.params: dict[str, np.ndarray] = {}
        self._feat = None

    @classmethod
    def from_config(cls, conf: ArchitectureConfig, classes=CLASSES) -> "Detector":
        return cls(conf.arch, conf.encoder_config, classes)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def param_shapes(self):
        shapes = self.graph.param_shapes()
        shapes.update(head_param_shapes(self.graph.out_channels, self.num_classes))
        return shapes

    def num_parameters(self) -> int:
        return count_parameters(self.param_shapes())

    def init(self, seed: int, dtype=np.float32):
        rng = np.random.default_rng(seed)
        params = init_parameters(self.graph, rng, dtype=dtype)
        shapes = head_param_shapes(self.graph.out_channels, self.num_classes)
        params[HEAD_W] = (rng.standard_normal(shapes[HEAD_W]) * HEAD_INIT_STD).astype(dtype)
        params[HEAD_B] = np.zeros(shapes[HEAD_B], dtype=dtype)
        self.params = params
        return params

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return self

    def forward(self, rgb_batch, depth_batch) -> HeadOutput:
        inputs = stream_inputs(self.arch, rgb_batch, depth_batch)
        self._feat = self.graph.forward(inputs, self.params)
        return head_forward(self._feat, self.params, self.num_classes)

    def backward(self, grad_raw):
        grads: dict[str, np.ndarray] = {}
        g = head_backward(grad_raw, self._feat, self.params, grads)
        self.graph.backward(g, self.params, grads)
        return grads

    def loss_and_grads(self, rgb_batch, depth_batch, batch_gts):
        pred = self.forward(rgb_batch, depth_batch)
        loss, grad_raw, parts = detection_loss(pred, batch_gts)
        return loss, self.backward(grad_raw), parts

    def detect(self, rgb_batch, depth_batch, score_threshold=0.05, iou_threshold=0.5):
        pred = self.forward(rgb_batch, depth_batch)
        hw = (pred.raw.shape[2] * STRIDE, pred.raw.shape[3] * STRIDE)
        return decode_and_nms(pred, hw, score_threshold, iou_threshold)
