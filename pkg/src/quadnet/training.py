"""MSE objective, Adam, the minibatch training loop, and gradient checking."""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from . import model as qmodel
from .rng import stream
from .tensor import ShapeError


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; message names the epoch and batch."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    epochs: int = 30
    # (first epoch, last epoch, rate), 1-based inclusive ranges
    lr_schedule: tuple = ((1, 10, 4e-4), (11, 30, 2e-4))
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    # parameter-name suffixes excluded from updates, e.g. ("w_g", "b_g", "w_b")
    freeze: tuple = ()

    def __post_init__(self):
        covered = set()
        for lo, hi, rate in self.lr_schedule:
            if rate <= 0:
                raise ValueError("learning rates must be > 0")
            span = set(range(lo, hi + 1))
            if covered & span:
                raise ValueError("overlapping epoch ranges in lr_schedule")
            covered |= span
        if not set(range(1, self.epochs + 1)) <= covered:
            raise ValueError("lr_schedule does not cover every epoch")

    def rate_for_epoch(self, epoch: int) -> float:
        for lo, hi, rate in self.lr_schedule:
            if lo <= epoch <= hi:
                return rate
        raise ValueError(f"epoch {epoch} outside lr_schedule")


def mse_loss(pred, target):
    """Mean squared error over all elements and its gradient w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.mean(diff * diff)), 2.0 * diff / n


class AdamState:
    """Per-parameter first/second moment accumulators and step counter."""

    def __init__(self, params: dict):
        self.m = {k: np.zeros(v.shape) for k, v in params.items()}
        self.v = {k: np.zeros(v.shape) for k, v in params.items()}
        self.t = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr,
              beta1=0.9, beta2=0.999, eps=1e-8, freeze=()):
    """Bias-corrected Adam update in float64; returns updated param dict."""
    state.t += 1
    t = state.t
    out = {}
    for key, p in params.items():
        if any(key.endswith(suffix) for suffix in freeze):
            out[key] = p
            continue
        g = np.asarray(grads[key], dtype=np.float64)
        state.m[key] = beta1 * state.m[key] + (1 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1 - beta2) * g * g
        m_hat = state.m[key] / (1 - beta1 ** t)
        v_hat = state.v[key] / (1 - beta2 ** t)
        step = lr * m_hat / (np.sqrt(v_hat) + eps)
        out[key] = (p.astype(np.float64) - step).astype(p.dtype)
    return out


@dataclass
class TrainResult:
    history: list                 # (epoch, train_loss, val_loss)
    best_checkpoint: bytes        # serialized model with minimum val loss
    best_epoch: int

    def history_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,train_loss,val_loss\n")
        for epoch, tr, vl in self.history:
            buf.write(f"{epoch},{tr:.8g},{vl:.8g}\n")
        return buf.getvalue()


def _as_batch_arrays(pairs):
    """Stack a list of (noisy, clean) (1,H,W) pairs into two (N,1,H,W) arrays."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and hasattr(pairs[0], "ndim"):
        noisy, clean = pairs
    else:
        noisy = np.stack([p[0] for p in pairs])
        clean = np.stack([p[1] for p in pairs])
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape or noisy.ndim != 4:
        raise ShapeError(f"patch arrays must share shape (N,1,H,W), got "
                         f"{noisy.shape} vs {clean.shape}")
    return noisy, clean


def evaluate_loss(model, pairs, batch_size=50) -> float:
    noisy, clean = _as_batch_arrays(pairs)
    total = 0.0
    for i in range(0, len(noisy), batch_size):
        xb, yb = noisy[i:i + batch_size], clean[i:i + batch_size]
        pred = model.forward_batch(xb)
        total += np.sum((pred - yb) ** 2)
    return float(total / noisy.size)


def train(model, train_pairs, val_pairs, cfg: TrainConfig) -> TrainResult:
    """Train in place; returns loss history and the best-val checkpoint."""
    train_x, train_y = _as_batch_arrays(train_pairs)
    if len(train_x) == 0:
        raise ValueError("training set is empty")
    shuffle_rng = stream(cfg.seed, "shuffle")
    state = AdamState(model.named_params())
    history = []
    best = (np.inf, None, -1)
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.rate_for_epoch(epoch)
        order = (shuffle_rng.permutation(len(train_x)) if cfg.shuffle
                 else np.arange(len(train_x)))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = train_x[idx], train_y[idx]
            pred, cache = model.forward_batch(xb, want_cache=True)
            loss, gy = mse_loss(pred, yb)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss is not finite at epoch {epoch}, batch {n_batches + 1}"
                )
            grads, _ = model.backward_batch(cache, gy)
            params = model.named_params()
            updated = adam_step(params, model.named_grads(grads), state, lr,
                                cfg.beta1, cfg.beta2, cfg.eps, cfg.freeze)
            for key, val in updated.items():
                model.set_param(key, val)
            epoch_loss += loss
            n_batches += 1
        train_loss = epoch_loss / n_batches
        val_loss = evaluate_loss(model, val_pairs, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"validation loss is not finite at epoch {epoch}")
        history.append((epoch, train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, qmodel.serialize(model), epoch)
    return TrainResult(history=history, best_checkpoint=best[1], best_epoch=best[2])


def grad_check(model, probe_image, target=None, step=1e-5, sample=40, seed=0):
    """Max relative error between analytic and central-difference gradients.

    The loss is the MSE between the model output on ``probe_image`` and
    ``target``.  By default the target is the model output plus a small
    seeded perturbation: a small residual keeps the float64 cancellation
    noise of the central differences well below the gradients they are
    compared against.  Parameters are sampled uniformly across all layers;
    the model is promoted to float64 so the step is not quantized away.
    """
    m = model.copy(dtype=np.float64)
    probe = np.asarray(probe_image, dtype=np.float64)
    if probe.ndim == 2:
        probe = probe[None]
    xb = probe[None]
    if target is None:
        out = m.forward_batch(xb)
        noise = stream(seed, "grad-check-target").normal(0.0, 0.01, size=out.shape)
        target = out + noise
    else:
        target = np.asarray(target, dtype=np.float64).reshape(xb.shape)

    def loss_of():
        pred = m.forward_batch(xb)
        return mse_loss(pred, target)

    pred, cache = m.forward_batch(xb, want_cache=True)
    _, gy = mse_loss(pred, target)
    grads, _ = m.backward_batch(cache, gy)
    analytic = m.named_grads(grads)

    rng = stream(seed, "grad-check")
    params = m.named_params()
    # gradients far below the dominant scale are compared absolutely, so
    # float64 cancellation noise in the finite differences cannot register
    gmax = max(float(np.max(np.abs(g))) for g in analytic.values())
    floor = max(1e-3 * gmax, 1e-12)
    worst = 0.0
    for key in sorted(params):
        arr = params[key]
        n_probe = min(sample, arr.size)
        flat_idx = rng.choice(arr.size, size=n_probe, replace=False)
        for fi in flat_idx:
            idx = np.unravel_index(fi, arr.shape)
            orig = arr[idx]
            arr[idx] = orig + step
            lo_plus, _ = loss_of()
            arr[idx] = orig - step
            lo_minus, _ = loss_of()
            arr[idx] = orig
            numeric = (lo_plus - lo_minus) / (2 * step)
            exact = analytic[key][idx]
            denom = max(abs(exact), abs(numeric), floor)
            worst = max(worst, abs(exact - numeric) / denom)
    return worst
