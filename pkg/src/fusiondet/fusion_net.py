"""Encoder families and the None/Early/Middle/Late fusion topologies.

Every topology maps a camera-sized input to a feature map 16x smaller.
Streams that are merged with unequal spatial size (range images) are
resampled with nearest neighbour to the camera stream's grid first.
"""
from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass

import numpy as np
from PIL import Image

from .errors import IncompatibleCombination, ShapeMismatch
from .tensor_nn import ops
from .tensor_nn.layers import Conv2d, LayerSpec, MaxPool2d, ReLU, Sequential

DOWNSAMPLE = 16

EARLY_RANGE_REASON = (
    "the range image is not suitable for early fusion: its size differs from the camera image size"
)
MIDDLE_RANGE_REASON = (
    "the range image is not suitable for middle fusion with VGG16: the block-3 feature maps "
    "cannot be concatenated due to different output size"
)


class Fusion(str, enum.Enum):
    NONE = "none"
    EARLY = "early"
    MIDDLE = "middle"
    LATE = "late"


class Representation(str, enum.Enum):
    RANGE = "range"
    SPARSE = "sparse"
    DENSE = "dense"


def _conv(k, c, s):
    return LayerSpec("conv", kernel=k, out_channels=c, stride=s, pad=k // 2)


POOL = LayerSpec("maxpool", kernel=2, stride=2)

# (kernel, channels, stride) per conv, then whether the block ends in a pool.
FAMILIES = {
    "vgg16m": [
        ([(7, 96, 2)], True),
        ([(5, 256, 2)], True),
        ([(3, 516, 1)], False),
        ([(3, 516, 1)], False),
        ([(3, 516, 1)], False),
    ],
    "vgg16": [
        ([(3, 64, 1)] * 2, True),
        ([(3, 128, 1)] * 2, True),
        ([(3, 256, 1)] * 3, True),
        ([(3, 516, 1)] * 3, True),
        ([(3, 516, 1)] * 3, False),
    ],
}

ENCODER_ALIASES = {
    "vgg16m": ("vgg16m", 1),
    "vgg16": ("vgg16", 1),
    "vgg16m-mu": ("vgg16m", 8),
    "vgg16-mu": ("vgg16", 8),
}


@dataclass(frozen=True)
class EncoderConfig:
    family: str = "vgg16m"
    scale: int = 8

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown encoder family {self.family!r}")
        if self.scale < 1:
            raise ValueError("scale must be >= 1")
        factor = 1
        for convs, pool in FAMILIES[self.family]:
            for _, _, s in convs:
                factor *= s
            factor *= 2 if pool else 1
        if factor != DOWNSAMPLE:
            raise ValueError(f"encoder downsamples by {factor}, expected {DOWNSAMPLE}")

    @classmethod
    def named(cls, name: str) -> "EncoderConfig":
        try:
            family, scale = ENCODER_ALIASES[name]
        except KeyError:
            raise ValueError(f"unknown encoder {name!r}; choose from {sorted(ENCODER_ALIASES)}") from None
        return cls(family, scale)

    def blocks(self):
        out = []
        for convs, pool in FAMILIES[self.family]:
            specs = [_conv(k, max(1, c // self.scale), s) for k, c, s in convs]
            out.append((specs, pool))
        return out

    @property
    def out_channels(self) -> int:
        return self.blocks()[-1][0][-1].out_channels


@dataclass(frozen=True)
class FusionArch:
    fusion: Fusion = Fusion.NONE
    representation: Representation = Representation.DENSE

    def __post_init__(self):
        object.__setattr__(self, "fusion", Fusion(self.fusion))
        object.__setattr__(self, "representation", Representation(self.representation))


def check_combination(arch: FusionArch, cfg: EncoderConfig):
    if arch.representation is Representation.RANGE:
        if arch.fusion is Fusion.EARLY:
            raise IncompatibleCombination(EARLY_RANGE_REASON)
        if arch.fusion is Fusion.MIDDLE and cfg.family == "vgg16":
            raise IncompatibleCombination(MIDDLE_RANGE_REASON)


def make_stream(cfg: EncoderConfig, in_channels: int, blocks, prefix: str, input_grad: bool = False) -> Sequential:
    layers = []
    c = in_channels
    all_blocks = cfg.blocks()
    for b in blocks:
        convs, pool = all_blocks[b]
        for i, spec in enumerate(convs):
            layers.append(Conv2d(f"{prefix}.conv{b + 1}_{i + 1}", c, spec))
            if len(layers) == 1:
                # stream inputs are data, not activations
                layers[0].input_grad = input_grad
            layers.append(ReLU(f"{prefix}.relu{b + 1}_{i + 1}"))
            c = spec.out_channels
        if pool:
            layers.append(MaxPool2d(f"{prefix}.pool{b + 1}", POOL))
    return Sequential(layers)


class EncoderGraph:
    """One or two input streams, an optional merge, and shared trailing layers.

    ``merge`` is ``None`` (single stream), ``"input"`` (channels stacked
    before the first layer), ``"block3"`` or ``"block5"``.
    """

    def __init__(self, arch: FusionArch, cfg: EncoderConfig, streams, merge, shared: Sequential):
        self.arch = arch
        self.cfg = cfg
        self.streams = list(streams)
        self.merge = merge
        self.shared = shared
        self._merge_cache = None

    @property
    def arity(self) -> int:
        return len(self.streams)

    @property
    def concat_count(self) -> int:
        return 1 if self.merge in ("block3", "block5") else 0

    def first_convs(self):
        return [next(l for l in s if isinstance(l, Conv2d)) for s in self.streams]

    def convs(self):
        for seq in [*self.streams, self.shared]:
            for layer in seq:
                if isinstance(layer, Conv2d):
                    yield layer

    def activation_pattern(self):
        """ReLU masks and max-pool argmax maps of the last forward pass."""
        out = []
        for seq in [*self.streams, self.shared]:
            for layer in seq:
                if isinstance(layer, ReLU) and layer._x is not None:
                    out.append(layer._x > 0)
                elif isinstance(layer, MaxPool2d) and layer._cache is not None:
                    out.append(layer._cache[0])
        return out

    def param_shapes(self):
        shapes = {}
        for seq in [*self.streams, self.shared]:
            shapes.update(seq.param_shapes())
        return shapes

    @property
    def out_channels(self) -> int:
        if self.merge == "block5":
            return sum(self._last_conv(s).out_channels for s in self.streams)
        return self._last_conv(self.shared if len(self.shared) else self.streams[0]).out_channels

    @staticmethod
    def _last_conv(seq):
        return [l for l in seq if isinstance(l, Conv2d)][-1]

    def output_hw(self, h: int, w: int):
        """Spatial size of the feature map for a camera-stream input of ``h x w``."""
        h, w = self.streams[0].out_hw(h, w)
        return self.shared.out_hw(h, w)

    def _check_inputs(self, inputs):
        if len(inputs) != self.arity:
            raise ShapeMismatch(f"graph expects {self.arity} input streams, got {len(inputs)}")
        for x, seq in zip(inputs, self.streams):
            if x.ndim != 4:
                raise ShapeMismatch(f"expected an (N, C, H, W) batch, got shape {x.shape}")
            c_in = next(l for l in seq if isinstance(l, Conv2d)).in_channels
            if x.shape[1] != c_in:
                raise ShapeMismatch(f"stream expects {c_in} channels, got {x.shape[1]}")
            if min(x.shape[2:]) < DOWNSAMPLE:
                raise ShapeMismatch(f"input {x.shape[2]}x{x.shape[3]} is smaller than {DOWNSAMPLE} pixels")

    def forward(self, inputs, params):
        self._check_inputs(inputs)
        outs = [s.forward(x, params) for s, x in zip(self.streams, inputs)]
        if len(outs) == 1:
            self._merge_cache = None
            merged = outs[0]
        else:
            a, b = outs
            resample = None
            if b.shape[2:] != a.shape[2:]:
                b_shape = b.shape
                b, rows, cols = ops.resize_nearest(b, *a.shape[2:])
                resample = (rows, cols, b_shape)
            merged = ops.concat_channels_forward(a, b)
            self._merge_cache = (a.shape[1], resample)
        self.stream_outputs = outs
        return self.shared.forward(merged, params)

    def backward(self, grad, params, grads):
        g = self.shared.backward(grad, params, grads)
        if self._merge_cache is None:
            return [self.streams[0].backward(g, params, grads)]
        ca, resample = self._merge_cache
        ga, gb = ops.concat_channels_backward(g, ca)
        if resample is not None:
            rows, cols, shape = resample
            gb = ops.resize_nearest_backward(gb, rows, cols, shape)
        return [self.streams[0].backward(ga, params, grads), self.streams[1].backward(gb, params, grads)]


def build_encoder(arch: FusionArch, cfg: EncoderConfig) -> EncoderGraph:
    check_combination(arch, cfg)
    empty = Sequential([])
    if arch.fusion is Fusion.NONE:
        return EncoderGraph(arch, cfg, [make_stream(cfg, 3, range(5), "rgb")], None, empty)
    if arch.fusion is Fusion.EARLY:
        return EncoderGraph(arch, cfg, [make_stream(cfg, 4, range(5), "fused")], "input", empty)
    if arch.fusion is Fusion.MIDDLE:
        rgb = make_stream(cfg, 3, range(3), "rgb")
        lidar = make_stream(cfg, 1, range(3), "lidar")
        c3 = EncoderGraph._last_conv(rgb).out_channels + EncoderGraph._last_conv(lidar).out_channels
        return EncoderGraph(arch, cfg, [rgb, lidar], "block3", make_stream(cfg, c3, range(3, 5), "shared", input_grad=True))
    rgb = make_stream(cfg, 3, range(5), "rgb")
    lidar = make_stream(cfg, 1, range(5), "lidar")
    return EncoderGraph(arch, cfg, [rgb, lidar], "block5", empty)


def init_parameters(graph: EncoderGraph, rng: np.random.Generator, first_std: float = 0.01, dtype=np.float32):
    """First conv of each stream ~ N(0, 0.01^2); the rest fan-in scaled (He)."""
    first = {c.name for c in graph.first_convs()}
    params = {}
    for conv in graph.convs():
        shapes = conv.param_shapes()
        std = first_std if conv.name in first else np.sqrt(2.0 / conv.fan_in)
        params[conv.w_name] = (rng.standard_normal(shapes[conv.w_name]) * std).astype(dtype)
        params[conv.b_name] = np.zeros(shapes[conv.b_name], dtype=dtype)
    return params


# ---------------------------------------------------------------- preprocessing

DEFAULT_RGB_MEAN = (123.0, 117.0, 104.0)
DEFAULT_DEPTH_SCALE = 5.0
DEFAULT_RGB_SCALE = 1.0
# keeps the depth stream well below the rgb stream's magnitude; at 255 the
# first lidar convolutions dominate early updates and the stream dies
DEFAULT_DEPTH_GAIN = 64.0


@dataclass
class Preprocessor:
    """Turns raw frames into network input streams.

    RGB: aspect-preserving resize to fit ``target``, mean subtraction,
    multiplication by ``rgb_scale``, zero padding at the bottom/right.
    Depth: ``depth_gain * clip(depth_scale / d, 0, 1)``, so missing
    returns become 0.
    """

    target: tuple = (64, 192)
    rgb_mean: tuple = DEFAULT_RGB_MEAN
    depth_scale: float = DEFAULT_DEPTH_SCALE
    rgb_scale: float = DEFAULT_RGB_SCALE
    depth_gain: float = DEFAULT_DEPTH_GAIN

    def scale_for(self, h: int, w: int) -> float:
        th, tw = self.target
        return min(th / h, tw / w)

    def resized_hw(self, h: int, w: int):
        th, tw = self.target
        if (h, w) == (th, tw):
            return h, w
        s = self.scale_for(h, w)
        return min(th, max(1, round(h * s))), min(tw, max(1, round(w * s)))

    def rgb(self, rgb: np.ndarray) -> np.ndarray:
        h, w = rgb.shape[:2]
        nh, nw = self.resized_hw(h, w)
        if (nh, nw) != (h, w):
            rgb = np.asarray(Image.fromarray(rgb).resize((nw, nh), Image.BILINEAR))
        x = (rgb.astype(np.float32) - np.asarray(self.rgb_mean, dtype=np.float32)) * np.float32(self.rgb_scale)
        out = np.zeros((3, *self.target), dtype=np.float32)
        out[:, :nh, :nw] = x.transpose(2, 0, 1)
        return out

    def encode_depth(self, depth: np.ndarray) -> np.ndarray:
        d = np.asarray(depth, dtype=np.float32)
        with np.errstate(divide="ignore"):
            enc = np.where(np.isfinite(d) & (d > 0), self.depth_scale / np.maximum(d, 1e-6), 0.0)
        return (np.clip(enc, 0.0, 1.0) * self.depth_gain).astype(np.float32)

    def depth(self, depth: np.ndarray, camera_shape=None) -> np.ndarray:
        """Camera-sized depth follows the RGB resize (nearest); range images pass through."""
        enc = self.encode_depth(depth)
        if camera_shape is None or tuple(depth.shape) != tuple(camera_shape):
            return enc[None]
        h, w = depth.shape
        nh, nw = self.resized_hw(h, w)
        if (nh, nw) != (h, w):
            rows = np.minimum((np.arange(nh) * h) // nh, h - 1)
            cols = np.minimum((np.arange(nw) * w) // nw, w - 1)
            enc = enc[rows][:, cols]
        out = np.zeros((1, *self.target), dtype=np.float32)
        out[0, :nh, :nw] = enc
        return out

    def __call__(self, rgb, depth):
        return self.rgb(rgb), self.depth(depth, rgb.shape[:2])


def preprocess_frame(rgb, depth_repr, target=(64, 192), rgb_mean=DEFAULT_RGB_MEAN):
    return Preprocessor(tuple(target), tuple(rgb_mean))(rgb, depth_repr)


def stream_inputs(arch: FusionArch, rgb_batch: np.ndarray, depth_batch: np.ndarray):
    """Arrange preprocessed ``(N, 3, H, W)`` / ``(N, 1, h, w)`` batches per topology."""
    if arch.fusion is Fusion.NONE:
        return [rgb_batch]
    if arch.fusion is Fusion.EARLY:
        if depth_batch.shape[2:] != rgb_batch.shape[2:]:
            raise IncompatibleCombination(EARLY_RANGE_REASON)
        return [np.concatenate([rgb_batch, depth_batch], axis=1)]
    return [rgb_batch, depth_batch]


def forward_features(graph: EncoderGraph, params, rgb_batch, depth_batch):
    return graph.forward(stream_inputs(graph.arch, rgb_batch, depth_batch), params)


# ---------------------------------------------------------------- config files

@dataclass
class ArchitectureConfig:
    encoder: str = "vgg16m-mu"
    fusion: str = "late"
    representation: str = "dense"
    input_size: tuple = (64, 192)

    @classmethod
    def from_json(cls, text: str) -> "ArchitectureConfig":
        raw = json.loads(text)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown architecture config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        cfg.input_size = tuple(cfg.input_size)
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        d = asdict(self)
        d["input_size"] = list(self.input_size)
        return json.dumps(d, sort_keys=True)

    def validate(self):
        EncoderConfig.named(self.encoder)
        Fusion(self.fusion)
        Representation(self.representation)
        h, w = self.input_size
        if min(h, w) < DOWNSAMPLE:
            raise ValueError(f"input size {h}x{w} is smaller than {DOWNSAMPLE} pixels")

    @property
    def arch(self) -> FusionArch:
        return FusionArch(Fusion(self.fusion), Representation(self.representation))

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig.named(self.encoder)


__all__ = [
    "Fusion", "Representation", "EncoderConfig", "FusionArch", "EncoderGraph",
    "build_encoder", "init_parameters", "Preprocessor", "preprocess_frame", "forward_features",
    "stream_inputs", "ArchitectureConfig", "check_combination",
]
