"""Dense real/complex arrays with a reverse-mode tape."""

from .core import Node, Tape, Tensor, as_tensor, backward, grad_enabled, no_grad
from .ops import (abs2, add, complex_view, concat, crop, div, elementwise, exp, exp_i,
                  leaky_relu, lower_median, max_value, mean, mul, pad, real, rectify_max0,
                  relu, reshape, roll, scale, select_flat, sqrt, square, stack, sub, channel_bias)
from .ops import sum as tsum
from .spectral import (fft2, fftshift2, ifft2, ifftshift2, pad_crop_spatial, spectral_crop,
                       spectral_mix)
from .nn import (conv_direct, gaussian_blur2d, instance_norm, max_pool, nearest_upsample,
                 pool_resample, sum_pool)

__all__ = [
    "Node", "Tape", "Tensor", "as_tensor", "backward", "grad_enabled", "no_grad",
    "abs2", "add", "complex_view", "concat", "crop", "div", "elementwise", "exp", "exp_i",
    "leaky_relu", "lower_median", "max_value", "mean", "mul", "pad", "real", "rectify_max0",
    "relu", "reshape", "roll", "scale", "select_flat", "sqrt", "square", "stack", "sub",
    "channel_bias", "tsum", "fft2", "fftshift2", "ifft2", "ifftshift2", "pad_crop_spatial",
    "spectral_crop", "spectral_mix", "conv_direct", "gaussian_blur2d", "instance_norm",
    "max_pool", "nearest_upsample", "pool_resample", "sum_pool",
]
