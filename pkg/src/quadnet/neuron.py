"""The quadratic neuron: forward evaluation and analytic gradients.

A quadratic neuron computes

    h(x) = (w_r.x + b_r)(w_g.x + b_g) + w_b.x^2 + c,    y = act(h)

where x^2 is elementwise.  The convolutional form replaces the three dot
products by three convolutions (or transposed convolutions) with kernel
banks W_r, W_g, W_b and per-output-channel scalars b_r, b_g, c.  All three
share one im2col of the input; the columns of x^2 are the squared columns
of x because padding zeros square to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    PadMode,
    ShapeError,
    linop_apply,
    linop_input_grad,
    linop_prepare,
    linop_weight_grad_cols,
)


@dataclass(frozen=True)
class Activation:
    kind: str            # relu | identity | quadratic | rectified_quadratic
    alpha: float = 1.0   # coefficient of the quadratic variants

    def __post_init__(self):
        if self.kind not in ("relu", "identity", "quadratic", "rectified_quadratic"):
            raise ValueError(f"unknown activation kind {self.kind!r}")


RELU = Activation("relu")
IDENTITY = Activation("identity")


def quadratic_activation(alpha=0.4):
    return Activation("quadratic", alpha)


def rectified_quadratic_activation(alpha=0.4):
    return Activation("rectified_quadratic", alpha)


def apply_activation(act: Activation, x):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if act.kind == "identity":
        return x
    if act.kind == "relu":
        return np.maximum(x, x.dtype.type(0))
    alpha = x.dtype.type(act.alpha)
    if act.kind == "quadratic":
        return alpha * x * x
    # rectified quadratic: alpha*x^2 for x > 0, else 0
    return np.where(x > 0.0, alpha * x * x, x.dtype.type(0))


def activation_gradient(act: Activation, x):
    """Local derivative at preactivation x (kink points defined as 0)."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    if act.kind == "identity":
        return np.ones_like(x)
    if act.kind == "relu":
        return (x > 0.0).astype(x.dtype)
    coef = x.dtype.type(2.0 * act.alpha)
    if act.kind == "quadratic":
        return coef * x
    return np.where(x > 0.0, coef * x, x.dtype.type(0))


@dataclass
class QuadraticParams:
    """The six parameter groups of a quadratic neuron or layer.

    Vector neuron: w_r/w_g/w_b are length-n vectors and b_r/b_g/c scalars.
    Convolutional layer: w_r/w_g/w_b are (O,C,k,k) banks and b_r/b_g/c
    length-O vectors.
    """

    w_r: np.ndarray
    w_g: np.ndarray
    w_b: np.ndarray
    b_r: np.ndarray | float
    b_g: np.ndarray | float
    c: np.ndarray | float

    def __post_init__(self):
        if not (np.shape(self.w_r) == np.shape(self.w_g) == np.shape(self.w_b)):
            raise ShapeError("w_r, w_g, w_b must share one shape")

    def count(self) -> int:
        return 3 * int(np.size(self.w_r)) + 3 * max(1, int(np.size(self.b_r)))


def quad_forward(x, p: QuadraticParams, act: Activation = IDENTITY) -> float:
    """Evaluate a vector quadratic neuron on input x."""
    x = np.asarray(x, dtype=np.float64).ravel()
    w_r = np.asarray(p.w_r, dtype=np.float64).ravel()
    if x.shape != w_r.shape:
        raise ShapeError(f"input length {x.size} does not match weights {w_r.size}")
    w_g = np.asarray(p.w_g, dtype=np.float64).ravel()
    w_b = np.asarray(p.w_b, dtype=np.float64).ravel()
    h = (w_r @ x + p.b_r) * (w_g @ x + p.b_g) + w_b @ (x * x) + p.c
    return float(apply_activation(act, h))


def _scalars(v, n, dtype=np.float64):
    return np.asarray(v, dtype=dtype).reshape(-1) * np.ones(n, dtype=dtype)


def quad_linear_forward(xb, p: QuadraticParams, pad: PadMode, transpose: bool):
    """Batched preactivation of a quadratic conv/deconv layer, with cache."""
    xb = np.asarray(xb)
    n_out = p.w_r.shape[0]
    lin = linop_prepare(xb, p.w_r, pad, transpose, square=True)
    dtype = lin["cols"].dtype
    # u and v share one pass over the columns via a stacked kernel bank
    w_rg = np.concatenate([np.asarray(p.w_r, dtype=dtype),
                           np.asarray(p.w_g, dtype=dtype)], axis=0)
    b_rg = np.concatenate([_scalars(p.b_r, n_out, dtype),
                           _scalars(p.b_g, n_out, dtype)])
    uv = linop_apply(lin, w_rg, b_rg)
    u, v = uv[:, :n_out], uv[:, n_out:]
    q = linop_apply(lin, p.w_b, None, cols=lin["cols2"])
    h = u * v + q + _scalars(p.c, n_out, dtype).reshape(1, -1, 1, 1)
    cache = {"x": np.asarray(xb, dtype=dtype), "u": u, "v": v, "lin": lin}
    return h, cache


def quad_linear_backward(cache, p: QuadraticParams, gh):
    """Gradients of the preactivation h given dLoss/dh, from a forward cache."""
    x, u, v, lin = cache["x"], cache["u"], cache["v"], cache["lin"]
    dtype = lin["cols"].dtype
    gh = np.asarray(gh, dtype=dtype)
    du = gh * v
    dv = gh * u
    dudv = np.concatenate([du, dv], axis=1)
    n_out = gh.shape[1]
    # the w_r and w_g routes share one pass over the columns and one scatter
    g_rg = linop_weight_grad_cols(lin, dudv)
    grads = {
        "w_r": g_rg[:n_out],
        "w_g": g_rg[n_out:],
        "w_b": linop_weight_grad_cols(lin, gh, cols=lin["cols2"]),
        "b_r": du.sum(axis=(0, 2, 3)),
        "b_g": dv.sum(axis=(0, 2, 3)),
        "c": gh.sum(axis=(0, 2, 3)),
    }
    w_rg = np.concatenate([np.asarray(p.w_r, dtype=dtype),
                           np.asarray(p.w_g, dtype=dtype)], axis=0)
    gx = linop_input_grad(lin, w_rg, dudv)
    gx += 2.0 * x * linop_input_grad(lin, p.w_b, gh)
    return grads, gx


def quad_conv_forward(x, p: QuadraticParams, pad: PadMode = PadMode.SAME,
                      act: Activation = RELU, transpose: bool = False):
    """Feature map of a quadratic convolutional (or deconvolutional) layer."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"expected a (C,H,W) tensor, got shape {x.shape}")
    h, _ = quad_linear_forward(x[None], p, pad, transpose)
    return apply_activation(act, h[0])


def quad_backward(x, p: QuadraticParams, upstream, pad: PadMode = PadMode.SAME,
                  act: Activation = RELU, transpose: bool = False):
    """Exact gradients of a quadratic layer; activation gradient is fused.

    ``upstream`` is dLoss/d(activation output).  Returns a dict with keys
    w_r, w_g, w_b, b_r, b_g, c, x.
    """
    x = np.asarray(x, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    h, cache = quad_linear_forward(x[None], p, pad, transpose)
    gh = upstream[None] * activation_gradient(act, h)
    grads, gx = quad_linear_backward(cache, p, gh)
    grads["x"] = gx[0]
    return grads
