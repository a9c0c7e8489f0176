from .layers import Conv2d, LayerSpec, MaxPool2d, ReLU, Sequential, count_parameters
from .ops import (
    concat_channels_backward,
    concat_channels_forward,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
)
from .optim import SGDMomentum, lr_schedule, sgd_momentum_step

__all__ = [
    "Conv2d", "LayerSpec", "MaxPool2d", "ReLU", "Sequential", "count_parameters",
    "concat_channels_backward", "concat_channels_forward", "conv2d_backward",
    "conv2d_forward", "conv_output_size", "maxpool_backward", "maxpool_forward",
    "relu_backward", "relu_forward", "SGDMomentum", "lr_schedule", "sgd_momentum_step",
]
