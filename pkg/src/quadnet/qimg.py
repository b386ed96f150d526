"""QIMG raw image files and 16-bit grayscale PNG for human viewing.

QIMG layout: 4-byte magic ``QIMG``, three unsigned 32-bit little-endian
integers (channels, height, width), then channels*height*width IEEE-754
32-bit little-endian values in channel-major row-major order.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

MAGIC = b"QIMG"


class FormatError(ValueError):
    """Raised on a malformed or truncated file."""


def encode_qimg(img) -> bytes:
    img = np.asarray(img)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3:
        raise FormatError(f"QIMG stores rank-3 images, got shape {img.shape}")
    c, h, w = img.shape
    header = MAGIC + struct.pack("<III", c, h, w)
    return header + np.ascontiguousarray(img, dtype="<f4").tobytes()


def decode_qimg(data: bytes):
    if len(data) < 16 or data[:4] != MAGIC:
        raise FormatError("not a QIMG file (bad magic)")
    c, h, w = struct.unpack("<III", data[4:16])
    n = c * h * w
    body = data[16:]
    if len(body) != 4 * n:
        raise FormatError(f"QIMG payload truncated: expected {4*n} bytes, got {len(body)}")
    arr = np.frombuffer(body, dtype="<f4", count=n)
    return arr.astype(np.float64).reshape(c, h, w)


def write_qimg(path, img):
    with open(path, "wb") as f:
        f.write(encode_qimg(img))


def read_qimg(path):
    with open(path, "rb") as f:
        return decode_qimg(f.read())


def write_png16(path, img):
    """Write a 2-D array of uint16-range values as 16-bit grayscale PNG."""
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise FormatError(f"PNG output expects a single-channel image, got {arr.shape}")
    arr = np.clip(np.rint(arr), 0, 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_png16(path):
    arr = np.array(Image.open(path))
    return arr.astype(np.float64)
