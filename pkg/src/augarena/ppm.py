"""Binary portable pixmap (P6, maxval 255) reading and writing."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ValueError(f"{path}: truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = fields
    if magic != b"P6":
        raise ValueError(f"{path}: not a binary PPM (magic {magic!r})")
    width, height, maxval = int(width), int(height), int(maxval)
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pixels = data[pos + 1:]
    expected = width * height * 3
    if len(pixels) != expected:
        raise ValueError(f"{path}: expected {expected} raster bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())
