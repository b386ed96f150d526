"""The 10-layer quadratic autoencoder: 5 conv + 5 deconv layers, three
residual shortcuts, ReLU after every layer (and after each shortcut sum).

Padding layout: conv1-conv4 same, conv5 (bottleneck) valid, deconv1 valid,
deconv2-deconv5 same.  Shortcuts: post-activation conv4 -> deconv1 sum,
post-activation conv2 -> deconv3 sum, input image -> deconv5 sum.

Parameters are stored as float32 (the checkpoint precision) and the network
computes in the parameter dtype; promote a model with ``copy(dtype)`` when
float64 accuracy is needed (e.g. gradient checking).  A conventional twin
with the same topology is available for baselines and weight transfer.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .neuron import (
    Activation,
    RELU,
    QuadraticParams,
    activation_gradient,
    apply_activation,
    quad_linear_backward,
    quad_linear_forward,
)
from .qimg import FormatError
from .rng import stream, truncated_normal
from .tensor import (
    PadMode,
    ShapeError,
    linop_apply,
    linop_input_grad,
    linop_prepare,
    linop_weight_grad_cols,
)

QUADRATIC = "quadratic"
CONVENTIONAL = "conventional"

CHECKPOINT_MAGIC = b"QAE1"
CHECKPOINT_VERSION = 1

# (source activation index, destination layer number), 1-based layers;
# activation 0 is the input image
SHORTCUTS = ((4, 6), (2, 8), (0, 10))


@dataclass(frozen=True)
class QAEConfig:
    channels: int = 15
    kernel: int = 3
    neuron: str = QUADRATIC
    activation: Activation = RELU

    def __post_init__(self):
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel size must be odd")
        if self.neuron not in (QUADRATIC, CONVENTIONAL):
            raise ValueError(f"unknown neuron kind {self.neuron!r}")


class QuadraticLayer:
    PARAM_NAMES = ("w_r", "w_g", "w_b", "b_r", "b_g", "c")

    def __init__(self, n_in, n_out, kernel, pad, transpose):
        self.pad = pad
        self.transpose = transpose
        bank = (n_out, n_in, kernel, kernel)
        self.w_r = np.zeros(bank, dtype=np.float32)
        self.w_g = np.zeros(bank, dtype=np.float32)
        self.w_b = np.zeros(bank, dtype=np.float32)
        self.b_r = np.zeros(n_out, dtype=np.float32)
        self.b_g = np.zeros(n_out, dtype=np.float32)
        self.c = np.zeros(n_out, dtype=np.float32)

    def quad_params(self) -> QuadraticParams:
        return QuadraticParams(self.w_r, self.w_g, self.w_b, self.b_r, self.b_g, self.c)

    def count(self) -> int:
        # C_out * (3 * C_in * k^2 + 3)
        return 3 * self.w_r.size + 3 * self.b_r.size

    def preact(self, xb):
        return quad_linear_forward(xb, self.quad_params(), self.pad, self.transpose)

    def backward(self, cache, gh):
        return quad_linear_backward(cache, self.quad_params(), gh)


class ConventionalLayer:
    PARAM_NAMES = ("w", "b")

    def __init__(self, n_in, n_out, kernel, pad, transpose):
        self.pad = pad
        self.transpose = transpose
        self.w = np.zeros((n_out, n_in, kernel, kernel), dtype=np.float32)
        self.b = np.zeros(n_out, dtype=np.float32)

    def count(self) -> int:
        return self.w.size + self.b.size

    def preact(self, xb):
        lin = linop_prepare(xb, self.w, self.pad, self.transpose)
        h = linop_apply(lin, self.w, self.b)
        return h, {"lin": lin}

    def backward(self, cache, gh):
        lin = cache["lin"]
        grads = {
            "w": linop_weight_grad_cols(lin, gh),
            "b": gh.sum(axis=(0, 2, 3)),
        }
        gx = linop_input_grad(lin, self.w, gh)
        return grads, gx


def _layer_plan(cfg: QAEConfig):
    """(name, n_in, n_out, pad, transpose) for the 10 layers in order."""
    C = cfg.channels
    plan = []
    for i in range(5):
        n_in = 1 if i == 0 else C
        pad = PadMode.VALID if i == 4 else PadMode.SAME
        plan.append((f"conv{i + 1}", n_in, C, pad, False))
    for i in range(5):
        n_out = 1 if i == 4 else C
        pad = PadMode.VALID if i == 0 else PadMode.SAME
        plan.append((f"deconv{i + 1}", C, n_out, pad, True))
    return plan


class QAEModel:
    def __init__(self, cfg: QAEConfig):
        self.cfg = cfg
        cls = QuadraticLayer if cfg.neuron == QUADRATIC else ConventionalLayer
        self.layer_names = []
        self.layers = []
        for name, n_in, n_out, pad, transpose in _layer_plan(cfg):
            self.layer_names.append(name)
            self.layers.append(cls(n_in, n_out, cfg.kernel, pad, transpose))
        # destination layer index (0-based) -> source activation index
        self.shortcuts = {dest - 1: src for src, dest in SHORTCUTS}

    # --- parameter access -------------------------------------------------

    def named_params(self):
        out = {}
        for name, layer in zip(self.layer_names, self.layers):
            for p in layer.PARAM_NAMES:
                out[f"{name}.{p}"] = getattr(layer, p)
        return out

    def set_param(self, key, value):
        lname, pname = key.split(".")
        layer = self.layers[self.layer_names.index(lname)]
        old = getattr(layer, pname)
        setattr(layer, pname, np.asarray(value, dtype=old.dtype).reshape(old.shape))

    def copy(self, dtype=None):
        m = QAEModel(self.cfg)
        for key, val in self.named_params().items():
            lname, pname = key.split(".")
            layer = m.layers[m.layer_names.index(lname)]
            setattr(layer, pname, val.astype(dtype) if dtype else val.copy())
        return m

    # --- forward / backward ----------------------------------------------

    @property
    def dtype(self):
        return getattr(self.layers[0], self.layers[0].PARAM_NAMES[0]).dtype

    def forward_batch(self, xb, want_cache=False):
        xb = np.asarray(xb, dtype=self.dtype)
        if xb.ndim != 4 or xb.shape[1] != 1:
            raise ShapeError(f"expected a (N,1,H,W) batch, got shape {xb.shape}")
        act = self.cfg.activation
        a = [xb]
        caches = []
        for i, layer in enumerate(self.layers):
            try:
                h, cache = layer.preact(a[-1])
            except ShapeError as e:
                raise ShapeError(f"layer {self.layer_names[i]}: {e}") from None
            if i in self.shortcuts:
                h = h + a[self.shortcuts[i]]
            a.append(apply_activation(act, h))
            if want_cache:
                caches.append((cache, h))
        if want_cache:
            return a[-1], (a, caches)
        return a[-1]

    def backward_batch(self, cache, gy):
        """Per-layer gradients and the input gradient for dLoss/d(output)."""
        a, caches = cache
        act = self.cfg.activation
        g_act = [None] * (len(self.layers) + 1)
        g_act[-1] = np.asarray(gy, dtype=self.dtype)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            layer_cache, h = caches[i]
            gh = g_act[i + 1] * activation_gradient(act, h)
            grads[i], gx = self.layers[i].backward(layer_cache, gh)
            g_act[i] = gx if g_act[i] is None else g_act[i] + gx
            if i in self.shortcuts:
                src = self.shortcuts[i]
                g_act[src] = gh if g_act[src] is None else g_act[src] + gh
        return grads, g_act[0]

    def named_grads(self, grads):
        out = {}
        for name, layer, g in zip(self.layer_names, self.layers, grads):
            for p in layer.PARAM_NAMES:
                out[f"{name}.{p}"] = g[p]
        return out


def forward(model: QAEModel, image):
    """Run one (1,H,W) image through the model; output shape equals input."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    return model.forward_batch(image[None])[0]


def count_params(model: QAEModel) -> int:
    return sum(layer.count() for layer in model.layers)


def count_qae_params(channels, kernel=3, neuron=QUADRATIC) -> int:
    """Closed-form trainable-parameter count of the 10-layer architecture."""
    m = QAEModel(QAEConfig(channels=channels, kernel=kernel, neuron=neuron))
    return count_params(m)


# --- initialization -------------------------------------------------------

def init_scratch(model: QAEModel, w_b_const=0.0, seed=0):
    """Scratch initialization that inhibits the quadratic terms.

    Quadratic layers: w_r ~ truncated normal(0, 0.01, +-2 sigma), w_g = 0,
    b_g = 1, b_r = 0, c = 0, w_b = w_b_const.  Conventional layers draw w
    from the same stream so a quadratic model and its twin start identical.
    """
    rng = stream(seed, "init")
    for layer in model.layers:
        if isinstance(layer, QuadraticLayer):
            layer.w_r = truncated_normal(rng, layer.w_r.shape).astype(np.float32)
            layer.w_g = np.zeros_like(layer.w_g)
            layer.w_b = np.full_like(layer.w_b, w_b_const)
            layer.b_r = np.zeros_like(layer.b_r)
            layer.b_g = np.ones_like(layer.b_g)
            layer.c = np.zeros_like(layer.c)
        else:
            layer.w = truncated_normal(rng, layer.w.shape).astype(np.float32)
            layer.b = np.zeros_like(layer.b)
    return model


def init_transfer(model: QAEModel, trained_conventional: QAEModel,
                  w_b_init=0.0, literal=False):
    """Initialize a quadratic model from a trained conventional one.

    w_r <- w, b_r <- b, w_g <- 0, b_g <- 1, c <- 0, w_b <- w_b_init.
    ``literal=True`` sets w_g <- 1 instead (the published formula), which
    does not preserve the source model's function.
    """
    if model.cfg.neuron != QUADRATIC:
        raise ShapeError("transfer target must be a quadratic model")
    if trained_conventional.cfg.neuron != CONVENTIONAL:
        raise ShapeError("transfer source must be a conventional model")
    src_cfg = trained_conventional.cfg
    if (model.cfg.channels, model.cfg.kernel) != (src_cfg.channels, src_cfg.kernel):
        raise ShapeError(
            f"topology mismatch: {model.cfg.channels}x{model.cfg.kernel} vs "
            f"{src_cfg.channels}x{src_cfg.kernel}"
        )
    for layer, src in zip(model.layers, trained_conventional.layers):
        layer.w_r = src.w.copy()
        layer.b_r = src.b.copy()
        layer.w_g = np.full_like(layer.w_g, 1.0 if literal else 0.0)
        layer.b_g = np.ones_like(layer.b_g)
        layer.w_b = np.full_like(layer.w_b, w_b_init)
        layer.c = np.zeros_like(layer.c)
    return model


def build_qae(cfg: QAEConfig, seed=0, init="scratch", w_b_const=0.0) -> QAEModel:
    """Construct the 10-layer model; init is 'scratch' or 'zero'."""
    model = QAEModel(cfg)
    if init == "scratch":
        init_scratch(model, w_b_const=w_b_const, seed=seed)
    elif init != "zero":
        raise ValueError(f"unknown init {init!r}")
    return model


# --- checkpoint serialization (format QAE1) -------------------------------

def serialize(model: QAEModel) -> bytes:
    kind = 1 if model.cfg.neuron == QUADRATIC else 0
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<BB", CHECKPOINT_VERSION, kind),
        struct.pack("<II", model.cfg.channels, model.cfg.kernel),
    ]
    for layer in model.layers:
        for p in layer.PARAM_NAMES:
            parts.append(np.ascontiguousarray(getattr(layer, p), dtype="<f4").tobytes())
    return b"".join(parts)


def deserialize(data: bytes, activation: Activation = RELU) -> QAEModel:
    if len(data) < 14 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError("not a QAE1 checkpoint (bad magic)")
    version, kind = struct.unpack("<BB", data[4:6])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if kind not in (0, 1):
        raise FormatError(f"unknown neuron-kind byte {kind}")
    channels, kernel = struct.unpack("<II", data[6:14])
    cfg = QAEConfig(channels=channels, kernel=kernel,
                    neuron=QUADRATIC if kind else CONVENTIONAL,
                    activation=activation)
    model = QAEModel(cfg)
    offset = 14
    for layer in model.layers:
        for p in layer.PARAM_NAMES:
            arr = getattr(layer, p)
            nbytes = 4 * arr.size
            if offset + nbytes > len(data):
                raise FormatError("checkpoint truncated")
            vals = np.frombuffer(data[offset:offset + nbytes], dtype="<f4")
            setattr(layer, p, vals.reshape(arr.shape).astype(np.float32))
            offset += nbytes
    if offset != len(data):
        raise FormatError(f"{len(data) - offset} trailing bytes in checkpoint")
    return model


def save(model: QAEModel, path):
    with open(path, "wb") as f:
        f.write(serialize(model))


def load(path, activation: Activation = RELU) -> QAEModel:
    with open(path, "rb") as f:
        return deserialize(f.read(), activation=activation)
