"""Matplotlib figures rendered alongside the study CSVs.

All rendering uses the Agg backend so the CLI works headless.  Figures are
companions to the CSV artifacts, not data sources: every number in a figure
comes from the same records that produced the CSV.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

KIND_STYLE = {
    "quadratic": ("tab:blue", "o"),
    "conventional": ("tab:orange", "s"),
    "quadratic_activation": ("tab:green", "^"),
    "rectified_quadratic_activation": ("tab:red", "v"),
}


def _style(kind):
    return KIND_STYLE.get(kind, ("tab:gray", "x"))


def plot_efficiency(records, path):
    """Parameter count (log10 x-axis) vs held-out PSNR, one line per kind."""
    fig, ax = plt.subplots(figsize=(6, 4))
    by_kind = {}
    for r in records:
        if r.diverged:
            continue
        by_kind.setdefault(r.kind, []).append((r.params, r.psnr))
    for kind in sorted(by_kind):
        pts = sorted(by_kind[kind])
        xs = [math.log10(p) for p, _ in pts]
        ys = [v for _, v in pts]
        color, marker = _style(kind)
        ax.plot(xs, ys, color=color, marker=marker, label=kind)
    ax.set_xlabel("log10(trainable parameters)")
    ax.set_ylabel("held-out PSNR (dB)")
    ax.set_title("Denoising quality vs model size")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_curves(records, path, title="Validation loss"):
    """Epoch vs validation loss, one line per (kind, width, seed)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for r in sorted(records, key=lambda r: (r.kind, r.width, r.seed)):
        if r.diverged or not r.curve:
            continue
        xs = [e for e, _ in r.curve]
        ys = [v for _, v in r.curve]
        color, marker = _style(r.kind)
        ax.plot(xs, ys, color=color, marker=marker, alpha=0.8,
                label=f"{r.kind} w={r.width} s={r.seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss (MSE)")
    ax.set_title(title)
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_init_robustness(rows, path):
    """One loss trajectory per (w_b constant, repeat)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = {}
    palette = ["tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple"]
    series = {}
    for w_b, rep, epoch, val in rows:
        if isinstance(val, str):
            continue
        series.setdefault((w_b, rep), []).append((epoch, val))
    for (w_b, rep) in sorted(series):
        if w_b not in colors:
            colors[w_b] = palette[len(colors) % len(palette)]
        pts = sorted(series[(w_b, rep)])
        ax.plot([e for e, _ in pts], [v for _, v in pts],
                color=colors[w_b], alpha=0.6,
                label=f"w_b={w_b}" if rep == 0 else None)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation loss (MSE)")
    ax.set_title("Scratch-initialization robustness")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path, title="Training history"):
    """Train/validation loss per epoch from one training run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [e for e, _, _ in history]
    ax.plot(epochs, [t for _, t, _ in history], marker="o", label="train")
    ax.plot(epochs, [v for _, _, v in history], marker="s", label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (MSE)")
    ax.set_title(title)
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
