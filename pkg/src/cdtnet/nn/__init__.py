"""Framework-free network kernels (float64 numpy)."""

from .checkpoint import dump_params, load_params
from .functional import (
    NonFiniteError,
    conv1d_backward,
    conv1d_forward,
    dense_backward,
    dense_forward,
    dropout,
    maxpool1d_backward,
    maxpool1d_forward,
    relu,
    relu_backward,
    softmax,
    softmax_cross_entropy,
)
from .gradcheck import grad_check, numerical_gradient, relative_error
from .layers import Conv1D, Dense, Dropout, Layer, MaxPool1D, ReLU, Reshape, Sequential, Transpose
from .optim import AdamState, adam_step, fans, glorot_init

# names matching the cross-data-type reading of the conv kernels
cdt_conv1d_forward = conv1d_forward
cdt_conv1d_backward = conv1d_backward
maxpool1d = maxpool1d_forward
