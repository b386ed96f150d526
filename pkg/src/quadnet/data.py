"""CT-style image plumbing: HU normalization, display windowing, patch
extraction, and a synthetic phantom corpus with controllable noise.

Images are Hounsfield-unit valued (1,H,W) tensors.  Training normalizes the
[-300, 300] HU window to [0,1]; display rendering uses [-160, 240] HU by
default.
"""

from __future__ import annotations

import numpy as np

from .rng import stream

HU_LO, HU_HI = -300.0, 300.0
DISPLAY_WINDOW = (-160.0, 240.0)


def normalize_hu(img):
    """Map HU values to [0,1] over the [-300, 300] window, clamping."""
    img = np.asarray(img, dtype=np.float64)
    return np.clip((img - HU_LO) / (HU_HI - HU_LO), 0.0, 1.0)


def denormalize_hu(img):
    img = np.asarray(img, dtype=np.float64)
    return img * (HU_HI - HU_LO) + HU_LO


def render_window(img, lo=DISPLAY_WINDOW[0], hi=DISPLAY_WINDOW[1]):
    """Linear map of [lo, hi] HU to 16-bit gray [0, 65535], round half up."""
    if lo >= hi:
        raise ValueError(f"window lo must be below hi, got [{lo}, {hi}]")
    img = np.asarray(img, dtype=np.float64)
    scaled = np.clip((img - lo) / (hi - lo), 0.0, 1.0) * 65535.0
    return np.floor(scaled + 0.5).astype(np.uint16)


def extract_patches(noisy, clean, size=64, count=100, seed=0):
    """Aligned random (noisy, clean) patch pairs from one image pair."""
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.ndim == 2:
        noisy, clean = noisy[None], clean[None]
    _, h, w = noisy.shape
    if h < size or w < size:
        raise ValueError(f"image {h}x{w} is smaller than patch size {size}")
    rng = stream(seed, "patches")
    pairs = []
    for _ in range(count):
        i = int(rng.integers(0, h - size + 1))
        j = int(rng.integers(0, w - size + 1))
        pairs.append((noisy[:, i:i + size, j:j + size].copy(),
                      clean[:, i:i + size, j:j + size].copy()))
    return pairs


def synth_phantom(seed=0, size=128, n_shapes=12):
    """Piecewise-constant phantom: ellipses and rectangles of HU in
    [-200, 250] over a -50 HU background, plus fine low-contrast texture."""
    if size < 64:
        raise ValueError("phantom size must be >= 64")
    rng = stream(seed, "phantom")
    img = np.full((size, size), -50.0)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for _ in range(n_shapes):
        hu = rng.uniform(-200.0, 250.0)
        cx, cy = rng.uniform(0.1 * size, 0.9 * size, size=2)
        if rng.random() < 0.6:
            rx = rng.uniform(0.05 * size, 0.3 * size)
            ry = rng.uniform(0.05 * size, 0.3 * size)
            theta = rng.uniform(0, np.pi)
            dx, dy = xx - cx, yy - cy
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            mask = (u / rx) ** 2 + (v / ry) ** 2 <= 1.0
        else:
            hw = rng.uniform(0.04 * size, 0.25 * size)
            hh = rng.uniform(0.04 * size, 0.25 * size)
            mask = (np.abs(xx - cx) <= hw) & (np.abs(yy - cy) <= hh)
        img[mask] = hu
    # fine low-contrast texture: smoothed noise field, a few HU in amplitude
    field = rng.normal(0.0, 1.0, size=(size, size))
    kernel = np.ones(5) / 5.0
    field = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 1, field)
    field = np.apply_along_axis(lambda r: np.convolve(r, kernel, mode="same"), 0, field)
    img += 4.0 * field
    return img[None]


def add_noise(img, sigma_gauss=25.0, dose_factor=4.0, seed=0):
    """Additive zero-mean Gaussian noise (HU) plus a signal-dependent
    component scaled by 1/sqrt(dose_factor)."""
    img = np.asarray(img, dtype=np.float64)
    rng = stream(seed, "noise")
    noisy = img + rng.normal(0.0, sigma_gauss, size=img.shape)
    if np.isfinite(dose_factor):
        amplitude = np.sqrt(np.clip(img - HU_LO, 0.0, None)) / np.sqrt(dose_factor)
        noisy = noisy + amplitude * rng.normal(0.0, 1.0, size=img.shape)
    return noisy


def make_corpus(n_images=10, size=128, seed=0, sigma_gauss=25.0, dose_factor=4.0):
    """List of (noisy, clean) HU image pairs from distinct phantom seeds."""
    pairs = []
    for i in range(n_images):
        clean = synth_phantom(seed=seed * 100003 + i, size=size)
        noisy = add_noise(clean, sigma_gauss, dose_factor, seed=seed * 100003 + i)
        pairs.append((noisy, clean))
    return pairs


def patch_dataset(image_pairs, patch=64, per_image=200, seed=0, normalized=True):
    """Stacked (noisy, clean) patch arrays of shape (N,1,patch,patch)."""
    noisy_all, clean_all = [], []
    for i, (noisy, clean) in enumerate(image_pairs):
        for pn, pc in extract_patches(noisy, clean, patch, per_image, seed=seed + i):
            noisy_all.append(pn)
            clean_all.append(pc)
    noisy_arr = np.stack(noisy_all)
    clean_arr = np.stack(clean_all)
    if normalized:
        noisy_arr = normalize_hu(noisy_arr)
        clean_arr = normalize_hu(clean_arr)
    return noisy_arr, clean_arr
