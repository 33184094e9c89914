"""Minimal dense tensor engine with reverse-mode differentiation."""

from . import ops
from .gradcheck import analytic_grad, grad_check, numeric_grad, relative_error
from .ops import (add, avg_pool2d, bce_with_logits, bilinear_sample, clip, concat, conv2d, div, elementwise, exp, getitem,
                  layer_norm, log, log1mexp, log_softmax, matmul, max, mean, mul, relu, reshape,
                  resize_bilinear, sigmoid, softmax, softplus, stack, stop_gradient, sub, sum, transpose,
                  upsample_bilinear)
from .tensor import Tape, Tensor, as_tensor, backward, default_dtype, no_record, precision
