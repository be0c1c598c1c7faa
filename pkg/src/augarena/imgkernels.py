"""The 15 augmentation kernels and their magnitude tables.

Images are ``uint8`` arrays of shape ``(height, width, 3)`` (row-major,
channel-interleaved). Every kernel has a batched form working on
``(n, height, width, 3)`` stacks, which is what the training loop and the
loss-table evaluation use; the single-image functions are thin wrappers.

Conventions shared by the geometric kernels:

* pixel centres sit on integer coordinates; shear and rotation act about the
  image centre ``((h - 1) / 2, (w - 1) / 2)``;
* sampling is bilinear, with everything outside the frame treated as the
  fill value 128;
* results are quantized with round-half-up, ``floor(v + 0.5)`` after
  snapping to 1e-6 (so float noise cannot break ties), then clipped.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

__all__ = [
    "OpKind",
    "N_LEVELS",
    "FILL",
    "StochasticParams",
    "magnitude_value",
    "draw_stochastic",
    "validate_image",
    "apply_op",
    "apply_op_batch",
    "apply_policy",
    "apply_policy_batch",
    "apply_ops_grouped",
]

N_LEVELS = 5
FILL = 128
MIN_SIDE = 8


class OpKind(enum.IntEnum):
    ShearX = 0
    ShearY = 1
    TranslateX = 2
    TranslateY = 3
    Rotate = 4
    AutoContrast = 5
    Invert = 6
    Equalize = 7
    Solarize = 8
    Posterize = 9
    Contrast = 10
    Color = 11
    Brightness = 12
    Sharpness = 13
    Cutout = 14


# Value reached at the strongest level; level 0 is always the identity.
_MAX_MAGNITUDE = {
    OpKind.ShearX: 0.3,
    OpKind.ShearY: 0.3,
    OpKind.TranslateX: 0.33,
    OpKind.TranslateY: 0.33,
    OpKind.Rotate: 30.0,
    OpKind.Contrast: 0.9,
    OpKind.Color: 0.9,
    OpKind.Brightness: 0.9,
    OpKind.Sharpness: 0.9,
    OpKind.Cutout: 0.5,
}
_PARAMETERLESS = (OpKind.AutoContrast, OpKind.Invert, OpKind.Equalize)
_SIGNED = (
    OpKind.ShearX,
    OpKind.ShearY,
    OpKind.TranslateX,
    OpKind.TranslateY,
    OpKind.Rotate,
    OpKind.Contrast,
    OpKind.Color,
    OpKind.Brightness,
    OpKind.Sharpness,
)


def _check_level(level: int) -> int:
    level = int(level)
    if not 0 <= level < N_LEVELS:
        raise ValueError(f"magnitude level must be in [0, {N_LEVELS - 1}], got {level}")
    return level


def magnitude_value(kind: OpKind, level: int) -> Optional[float]:
    """Physical parameter of ``kind`` at ``level``.

    Units: shear factor; translation as a fraction of the axis length;
    rotation in degrees; solarize threshold (256 down to 0); posterize bits
    kept (8 down to 4); enhancement deviation from factor 1; cutout side as a
    fraction of the shorter image side. Parameterless kinds return ``None``.
    """
    kind = OpKind(kind)
    level = _check_level(level)
    if kind in _PARAMETERLESS:
        return None
    if kind == OpKind.Solarize:
        return 256 - 64 * level
    if kind == OpKind.Posterize:
        return 8 - level
    return _MAX_MAGNITUDE[kind] * level / (N_LEVELS - 1)


@dataclass(frozen=True)
class StochasticParams:
    """Random draws consumed by a single kernel application.

    ``sign`` flips signed magnitudes; ``center`` is the cutout centre as
    fractions of (height, width) in ``[0, 1)``. Kernels without internal
    randomness ignore both.
    """

    sign: int = 1
    center: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be +1 or -1")
        if not all(0.0 <= c < 1.0 for c in self.center):
            raise ValueError("center fractions must lie in [0, 1)")

    @classmethod
    def draw(cls, rng: np.random.Generator) -> "StochasticParams":
        signs, centers = draw_stochastic(rng, 1)
        return cls(int(signs[0]), (float(centers[0, 0]), float(centers[0, 1])))


def draw_stochastic(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` signs and ``n`` cutout centres, in that order."""
    signs = np.where(rng.random(n) < 0.5, -1, 1).astype(np.int64)
    centers = rng.random((n, 2))
    return signs, centers


def validate_image(img: np.ndarray, batched: bool = False) -> np.ndarray:
    img = np.asarray(img)
    ndim = 4 if batched else 3
    if img.dtype != np.uint8:
        raise ValueError(f"images must be uint8, got {img.dtype}")
    if img.ndim != ndim or img.shape[-1] != 3:
        want = "(n, h, w, 3)" if batched else "(h, w, 3)"
        raise ValueError(f"expected shape {want}, got {img.shape}")
    if img.shape[-3] < MIN_SIDE or img.shape[-2] < MIN_SIDE:
        raise ValueError(f"images must be at least {MIN_SIDE}x{MIN_SIDE}, got {img.shape}")
    return img


def _quantize(v: np.ndarray) -> np.ndarray:
    # Snap to 1e-6 first so exact halves round up regardless of float noise.
    return np.clip(np.floor(np.round(v, 6) + 0.5), 0, 255).astype(np.uint8)


# -- geometric -------------------------------------------------------------


def _bilinear(images: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    """Sample ``images`` at per-image source coordinates ``sy``/``sx`` (n, h, w)."""
    n, h, w, _ = images.shape
    padded = np.pad(images, ((0, 0), (1, 1), (1, 1), (0, 0)), constant_values=FILL)
    padded = padded.astype(np.float64)
    y0 = np.floor(sy)
    x0 = np.floor(sx)
    wy = (sy - y0)[..., None]
    wx = (sx - x0)[..., None]
    # +1 for the padding; anything further out lands on a padding row/column.
    iy0 = np.clip(y0.astype(np.int64) + 1, 0, h + 1)
    iy1 = np.clip(y0.astype(np.int64) + 2, 0, h + 1)
    ix0 = np.clip(x0.astype(np.int64) + 1, 0, w + 1)
    ix1 = np.clip(x0.astype(np.int64) + 2, 0, w + 1)
    b = np.arange(n)[:, None, None]
    out = (
        (1 - wy) * (1 - wx) * padded[b, iy0, ix0]
        + (1 - wy) * wx * padded[b, iy0, ix1]
        + wy * (1 - wx) * padded[b, iy1, ix0]
        + wy * wx * padded[b, iy1, ix1]
    )
    return _quantize(out)


def _grid(n: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return np.broadcast_to(yy, (n, h, w)), np.broadcast_to(xx, (n, h, w))


def _shear(images, factors, axis):
    n, h, w, _ = images.shape
    yy, xx = _grid(n, h, w)
    f = factors[:, None, None]
    if axis == "x":
        return _bilinear(images, yy, xx + f * (yy - (h - 1) / 2))
    return _bilinear(images, yy + f * (xx - (w - 1) / 2), xx)


def _rotate(images, degrees):
    # Positive angles turn the content counter-clockwise as displayed.
    n, h, w, _ = images.shape
    yy, xx = _grid(n, h, w)
    theta = np.deg2rad(degrees)[:, None, None]
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    dy, dx = yy - cy, xx - cx
    return _bilinear(images, cy + sin * dx + cos * dy, cx + cos * dx - sin * dy)


def _translate(images, shifts, axis):
    # Content moves by +shift pixels (right for x, down for y).
    out = np.full_like(images, FILL)
    size = images.shape[2] if axis == "x" else images.shape[1]
    for s in np.unique(shifts):
        idx = np.flatnonzero(shifts == s)
        s = int(s)
        if abs(s) >= size:
            continue
        src = slice(max(0, -s), size - max(0, s))
        dst = slice(max(0, s), size - max(0, -s))
        if axis == "x":
            out[idx, :, dst] = images[idx, :, src]
        else:
            out[idx, dst] = images[idx, src]
    return out


# -- colour ----------------------------------------------------------------


def _autocontrast(images):
    lo = images.min(axis=(1, 2), keepdims=True).astype(np.float64)
    hi = images.max(axis=(1, 2), keepdims=True).astype(np.float64)
    span = hi - lo
    stretched = (images - lo) * 255.0 / np.where(span > 0, span, 1.0)
    return np.where(span > 0, _quantize(stretched), images)


def _equalize(images):
    # Cumulative-histogram remap, one lookup table per image and channel.
    out = images.copy()
    n = images.shape[0]
    for i in range(n):
        for c in range(3):
            band = images[i, :, :, c]
            hist = np.bincount(band.ravel(), minlength=256)
            nonzero = np.flatnonzero(hist)
            if len(nonzero) <= 1:
                continue
            step = (hist.sum() - hist[nonzero[-1]]) // 255
            if step == 0:
                continue
            before = np.concatenate(([0], np.cumsum(hist)[:-1]))
            lut = np.minimum((step // 2 + before) // step, 255).astype(np.uint8)
            out[i, :, :, c] = lut[band]
    return out


def _solarize(images, threshold):
    return np.where(images >= threshold, 255 - images, images).astype(np.uint8)


def _posterize(images, bits):
    mask = np.uint8((0xFF << (8 - bits)) & 0xFF)
    return images & mask


def _gray(images):
    f = images.astype(np.float64)
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


def _smooth(images):
    # 3x3 smoothing with weights [[1,1,1],[1,5,1],[1,1,1]] / 13; the one-pixel
    # border keeps its original values.
    f = images.astype(np.float64)
    out = f.copy()
    h, w = images.shape[1:3]
    acc = np.zeros_like(f[:, 1:-1, 1:-1])
    for dy in range(3):
        for dx in range(3):
            acc += f[:, dy:dy + h - 2, dx:dx + w - 2] * (5.0 if dy == dx == 1 else 1.0)
    out[:, 1:-1, 1:-1] = acc / 13.0
    return out


def _blend(images, degenerate, factors):
    f = factors[:, None, None, None]
    return _quantize(images.astype(np.float64) * f + degenerate * (1.0 - f))


def _enhance(images, kind, factors):
    n = images.shape[0]
    if kind == OpKind.Brightness:
        degenerate = np.zeros((n, 1, 1, 1))
    elif kind == OpKind.Color:
        degenerate = _gray(images)[..., None]
    elif kind == OpKind.Contrast:
        degenerate = _gray(images).mean(axis=(1, 2))[:, None, None, None]
    else:
        degenerate = _smooth(images)
    return _blend(images, degenerate, factors)


def _cutout(images, fraction, centers):
    n, h, w, _ = images.shape
    side = int(np.floor(fraction * min(h, w) + 0.5))
    out = images.copy()
    if side == 0:
        return out
    cy = np.floor(centers[:, 0] * h).astype(np.int64)
    cx = np.floor(centers[:, 1] * w).astype(np.int64)
    for i in range(n):
        top, left = cy[i] - side // 2, cx[i] - side // 2
        out[i, max(top, 0):max(top + side, 0), max(left, 0):max(left + side, 0)] = FILL
    return out


# -- dispatch --------------------------------------------------------------


def apply_op_batch(
    images: np.ndarray,
    kind: OpKind,
    level: int,
    signs: Optional[np.ndarray] = None,
    centers: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Apply one kernel to every image of an ``(n, h, w, 3)`` stack.

    ``signs`` has shape ``(n,)`` with entries in {-1, +1}; ``centers`` has shape
    ``(n, 2)``. Missing draws default to sign +1 and the image centre.
    """
    images = validate_image(images, batched=True)
    kind = OpKind(kind)
    level = _check_level(level)
    n = images.shape[0]
    signs = np.ones(n, dtype=np.int64) if signs is None else np.asarray(signs).reshape(n)
    centers = np.full((n, 2), 0.5) if centers is None else np.asarray(centers, dtype=np.float64).reshape(n, 2)
    mag = magnitude_value(kind, level)

    if kind in _SIGNED and level == 0:
        return images.copy()
    if kind == OpKind.ShearX:
        return _shear(images, signs * mag, "x")
    if kind == OpKind.ShearY:
        return _shear(images, signs * mag, "y")
    if kind in (OpKind.TranslateX, OpKind.TranslateY):
        size = images.shape[2] if kind == OpKind.TranslateX else images.shape[1]
        pixels = int(np.floor(mag * size + 0.5))
        return _translate(images, signs * pixels, "x" if kind == OpKind.TranslateX else "y")
    if kind == OpKind.Rotate:
        return _rotate(images, signs * mag)
    if kind == OpKind.AutoContrast:
        return _autocontrast(images)
    if kind == OpKind.Invert:
        return 255 - images
    if kind == OpKind.Equalize:
        return _equalize(images)
    if kind == OpKind.Solarize:
        return _solarize(images, mag)
    if kind == OpKind.Posterize:
        return _posterize(images, mag)
    if kind == OpKind.Cutout:
        return _cutout(images, mag, centers)
    return _enhance(images, kind, 1.0 + signs * mag)


def apply_op(img: np.ndarray, kind: OpKind, level: int, sp: Optional[StochasticParams] = None) -> np.ndarray:
    img = validate_image(img)
    sp = sp or StochasticParams()
    out = apply_op_batch(img[None], kind, level, np.array([sp.sign]), np.array([sp.center]))
    return out[0]


PolicyParams = Union[StochasticParams, Sequence[StochasticParams], None]


def apply_policy(img: np.ndarray, policy, sp: PolicyParams = None) -> np.ndarray:
    """Apply ``policy.first`` then ``policy.second``.

    ``sp`` is either one :class:`StochasticParams` shared by both operations or
    a pair, one per operation.
    """
    if sp is None or isinstance(sp, StochasticParams):
        sp = (sp, sp)
    out = apply_op(img, policy.first.kind, policy.first.level, sp[0])
    return apply_op(out, policy.second.kind, policy.second.level, sp[1])


def apply_policy_batch(images: np.ndarray, policy, signs: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Batched :func:`apply_policy`; ``signs`` is ``(n, 2)``, ``centers`` ``(n, 2, 2)``."""
    out = apply_op_batch(images, policy.first.kind, policy.first.level, signs[:, 0], centers[:, 0])
    return apply_op_batch(out, policy.second.kind, policy.second.level, signs[:, 1], centers[:, 1])


def apply_ops_grouped(
    images: np.ndarray,
    kinds: np.ndarray,
    levels: np.ndarray,
    signs: np.ndarray,
    centers: np.ndarray,
) -> np.ndarray:
    """Apply a possibly different operation to each image of a stack.

    Images sharing a (kind, level) pair go through the kernel together, so a
    stack covering many policies costs one call per distinct operation.
    """
    out = np.empty_like(images)
    key = np.asarray(kinds) * N_LEVELS + np.asarray(levels)
    for k in np.unique(key):
        idx = np.flatnonzero(key == k)
        out[idx] = apply_op_batch(images[idx], int(k) // N_LEVELS, int(k) % N_LEVELS, signs[idx], centers[idx])
    return out
