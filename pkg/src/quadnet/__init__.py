"""Quadratic-neuron networks: tensor ops, quadratic layers, the quadratic
autoencoder, training, metrics and polynomial-network construction."""

__version__ = "0.1.0"


def _tune_allocator():
    # Training reallocates ~100MB of im2col scratch every step; raising the
    # malloc mmap/trim thresholds keeps those buffers on the heap instead of
    # fresh mmaps the kernel must re-zero (roughly 2x step throughput here).
    import ctypes
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


_tune_allocator()

from .tensor import PadMode, ShapeError, conv2d, conv2d_transpose, relu
from .neuron import (
    Activation,
    IDENTITY,
    RELU,
    QuadraticParams,
    quad_forward,
    quad_conv_forward,
    quad_backward,
)
from .model import QAEConfig, QAEModel, build_qae, count_params
