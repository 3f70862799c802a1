"""Miniature tensor engine: autodiff, conv/norm/pool kernels, Adam."""

from .conv import ConvSpec, conv2d
from .norm import BatchNormState, batchnorm2d, bn_relu_dropout, dropout
from .optim import AdamState, PolySchedule, adam_step, poly_lr
from .tensor import (DEFAULT_DTYPE, Tensor, concat_channels,
                     global_avg_pool_broadcast, maxpool2, relu, sigmoid,
                     upsample_nearest2)

__all__ = [
    "Tensor", "DEFAULT_DTYPE", "relu", "sigmoid", "concat_channels",
    "global_avg_pool_broadcast", "maxpool2", "upsample_nearest2",
    "ConvSpec", "conv2d", "BatchNormState", "batchnorm2d", "dropout",
    "AdamState", "adam_step", "PolySchedule", "poly_lr",
]
