"""Dense rank-3 tensors and the spatial operators everything else builds on.

A tensor is a plain numpy array of shape (channels, height, width).  All
operators accumulate in float64 so the adjoint/linearity identities hold to
1e-12 regardless of the storage dtype of the inputs.  Convolution is the
cross-correlation orientation (no kernel flip), stride 1 everywhere.

Every linear map used here (conv same/valid, transposed conv same/valid)
reduces to one canonical form: zero-pad the input by P, then valid
cross-correlate with an effective kernel bank.  That gives a single
im2col/GEMM code path for forward, weight gradient, and adjoint; the
adjoint of the padding is cropping, the adjoint of the valid correlation
is a col2im scatter-add.
"""

from __future__ import annotations

import enum

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent."""


class PadMode(enum.Enum):
    SAME = "same"    # zero-pad by (k-1)/2 per border, spatial size preserved
    VALID = "valid"  # no padding; conv shrinks by k-1, transpose grows by k-1


def _as3d(x, name="input"):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"{name} must be rank-3 (C,H,W), got shape {x.shape}")
    return x


def _compute_dtype(*arrays):
    """float32 only when every operand already is; float64 otherwise."""
    if all(np.asarray(a).dtype == np.float32 for a in arrays):
        return np.float32
    return np.float64


def _check_kernels(kernels, dtype=np.float64):
    k = np.asarray(kernels, dtype=dtype)
    if k.ndim != 4:
        raise ShapeError(f"kernel bank must be rank-4 (O,C,k,k), got shape {k.shape}")
    if k.shape[2] != k.shape[3] or k.shape[2] % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {k.shape[2:]}")
    return k


def _pad_batch(xb, p):
    if p == 0:
        return xb
    return np.pad(xb, ((0, 0), (0, 0), (p, p), (p, p)))


def _effective(kernels, pad, transpose):
    """Padding amount and effective bank of the canonical pad+valid form."""
    k = kernels.shape[2]
    if transpose:
        k_eff = kernels[:, :, ::-1, ::-1]
        p = (k - 1) // 2 if pad == PadMode.SAME else k - 1
    else:
        k_eff = kernels
        p = (k - 1) // 2 if pad == PadMode.SAME else 0
    return k_eff, p


def im2col(xp, k, square=False):
    """Columns of all kxk windows of a padded batch (N,C,Hp,Wp).

    Returns (cols, (Ho, Wo)) with cols of shape (N, C*k*k, Ho*Wo).  With
    ``square=True`` additionally returns the columns of the elementwise
    square, computed during the same pass (padding zeros square to zero).
    """
    n, c, hp, wp = xp.shape
    if hp < k or wp < k:
        raise ShapeError(f"spatial size {hp}x{wp} smaller than kernel {k}x{k}")
    ho, wo = hp - k + 1, wp - k + 1
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    cols2 = np.empty_like(cols) if square else None
    for u in range(k):
        for v in range(k):
            cols[:, :, u, v] = xp[:, :, u:u + ho, v:v + wo]
            if square:
                np.multiply(cols[:, :, u, v], cols[:, :, u, v],
                            out=cols2[:, :, u, v])
    cols = cols.reshape(n, c * k * k, ho * wo)
    if square:
        return cols, cols2.reshape(n, c * k * k, ho * wo), (ho, wo)
    return cols, (ho, wo)


def col2im(dcols, c, k, hp, wp):
    """Adjoint of im2col: scatter-add columns back to a (N,C,Hp,Wp) batch."""
    n = dcols.shape[0]
    ho, wo = hp - k + 1, wp - k + 1
    dcols = dcols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=dcols.dtype)
    for u in range(k):
        for v in range(k):
            out[:, :, u:u + ho, v:v + wo] += dcols[:, :, u, v]
    return out


def linop_prepare(xb, kernels, pad, transpose, square=False):
    """im2col cache of the canonical form; shared by forward and gradients."""
    dtype = _compute_dtype(xb, kernels)
    xb = np.asarray(xb, dtype=dtype)
    if xb.ndim != 4:
        raise ShapeError(f"expected a (N,C,H,W) batch, got shape {xb.shape}")
    kernels = _check_kernels(kernels, dtype)
    if xb.shape[1] != kernels.shape[1]:
        raise ShapeError(
            f"input has {xb.shape[1]} channels but kernels expect {kernels.shape[1]}"
        )
    k = kernels.shape[2]
    _, p = _effective(kernels, pad, transpose)
    xp = _pad_batch(xb, p)
    if square:
        cols, cols2, (ho, wo) = im2col(xp, k, square=True)
    else:
        cols2 = None
        cols, (ho, wo) = im2col(xp, k)
    return {
        "cols": cols,
        "cols2": cols2,
        "out_hw": (ho, wo),
        "in_shape": xb.shape,
        "pad_shape": xp.shape,
        "p": p,
        "k": k,
        "pad": pad,
        "transpose": transpose,
    }


def linop_apply(cache, kernels, bias=None, cols=None):
    """Forward of the linear map on prepared columns: GEMM per batch item."""
    cols = cache["cols"] if cols is None else cols
    kernels = np.asarray(kernels, dtype=cols.dtype)
    k_eff, _ = _effective(kernels, cache["pad"], cache["transpose"])
    n_out = kernels.shape[0]
    out = np.matmul(np.ascontiguousarray(k_eff.reshape(n_out, -1)), cols)
    ho, wo = cache["out_hw"]
    out = out.reshape(cols.shape[0], n_out, ho, wo)
    if bias is not None:
        out = out + np.asarray(bias, dtype=cols.dtype).reshape(1, -1, 1, 1)
    return out


def linop_weight_grad_cols(cache, gyb, cols=None):
    """Gradient w.r.t. the kernel bank given the output gradient."""
    cols = cache["cols"] if cols is None else cols
    n, _, _ = cols.shape
    n_out = gyb.shape[1]
    gy = np.ascontiguousarray(gyb.reshape(n, n_out, -1))
    g = np.matmul(gy, cols.transpose(0, 2, 1)).sum(axis=0)
    k = cache["k"]
    c_in = cache["in_shape"][1]
    g = g.reshape(n_out, c_in, k, k)
    if cache["transpose"]:
        g = g[:, :, ::-1, ::-1]
    return np.ascontiguousarray(g)


def linop_input_grad(cache, kernels, gyb):
    """Gradient w.r.t. the linop input: GEMM, col2im scatter, then crop."""
    kernels = np.asarray(kernels, dtype=cache["cols"].dtype)
    gyb = np.asarray(gyb, dtype=cache["cols"].dtype)
    k_eff, _ = _effective(kernels, cache["pad"], cache["transpose"])
    n, c, hp, wp = cache["pad_shape"]
    n_out = kernels.shape[0]
    gy = np.ascontiguousarray(gyb.reshape(n, n_out, -1))
    kmat = np.ascontiguousarray(k_eff.reshape(n_out, -1).T)
    dcols = np.matmul(kmat, gy)
    dxp = col2im(dcols, c, cache["k"], hp, wp)
    p = cache["p"]
    if p == 0:
        return dxp
    return dxp[:, :, p:-p, p:-p]


def conv2d_batch(xb, kernels, bias, pad):
    """Batched conv: (N,C,H,W) x (O,C,k,k) -> (N,O,H',W'), float64."""
    cache = linop_prepare(xb, kernels, pad, transpose=False)
    return linop_apply(cache, kernels, bias)


def conv2d_transpose_batch(yb, kernels, bias, pad):
    """Exact linear adjoint of conv2d_batch.

    ``kernels`` has shape (O, C, k, k) with C the channel count of ``yb``;
    the result of ``conv2d_transpose_batch(y, K, ...)`` is the adjoint of
    ``x -> conv2d_batch(x, K.transpose(1,0,2,3), ...)``.
    """
    cache = linop_prepare(yb, kernels, pad, transpose=True)
    return linop_apply(cache, kernels, bias)


def conv2d(x, kernels, bias=None, pad=PadMode.VALID):
    """2-D cross-correlation of a (C,H,W) tensor with an (O,C,k,k) bank."""
    x = _as3d(x)
    return conv2d_batch(x[None], kernels, bias, pad)[0]


def conv2d_transpose(y, kernels, bias=None, pad=PadMode.VALID):
    """Transposed convolution: the adjoint of conv2d (see batched form)."""
    y = _as3d(y)
    return conv2d_transpose_batch(y[None], kernels, bias, pad)[0]


def relu(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0)


def _binary(a, b, op):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return op(a, b)


def add(a, b):
    return _binary(a, b, np.add)


def sub(a, b):
    return _binary(a, b, np.subtract)


def mul(a, b):
    return _binary(a, b, np.multiply)


def square(a):
    a = np.asarray(a, dtype=np.float64)
    return a * a
