"""
A tour of the 15 augmentation kernels
=====================================

Every kernel at every magnitude level, laid out as one contact sheet:
rows are operations, columns are levels 0-4. Writes ``kernel_tour.ppm``.
"""
import sys

import numpy as np

from augarena.harness import gen_synthetic
from augarena.imgkernels import N_LEVELS, OpKind, StochasticParams, apply_op, magnitude_value
from augarena.ppm import write_ppm

out_path = sys.argv[1] if len(sys.argv) > 1 else "kernel_tour.ppm"

# One training image from the default synthetic set, upscaled 4x so the
# 16x16 source is visible in an image viewer.
img = gen_synthetic().train_images[5]
sp = StochasticParams(sign=1, center=(0.3, 0.6))

tiles = []
for kind in OpKind:
    row = [apply_op(img, kind, level, sp) for level in range(N_LEVELS)]
    tiles.append(np.concatenate([np.pad(t, ((1, 1), (1, 1), (0, 0))) for t in row], axis=1))
    values = [magnitude_value(kind, level) for level in range(N_LEVELS)]
    print(f"{kind.name:<13}", "  ".join("-" if v is None else f"{v:g}" for v in values))

sheet = np.concatenate(tiles, axis=0).repeat(4, axis=0).repeat(4, axis=1)
write_ppm(out_path, sheet)
print(f"wrote {out_path} ({sheet.shape[1]}x{sheet.shape[0]})")

# Level 0 leaves the image alone for every kind that has a magnitude.
# AutoContrast, Invert and Equalize ignore the level entirely.
same = [k.name for k in OpKind if np.array_equal(apply_op(img, k, 0, sp), img)]
print("identity at level 0:", ", ".join(same))
