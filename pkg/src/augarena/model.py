"""Small convnet classifier with hand-written backpropagation.

Architecture: conv3x3(16) - ReLU - maxpool2 - conv3x3(32) - ReLU - maxpool2 -
dense -> logits. Convolutions use zero "same" padding and stride 1. Inputs
are NHWC float64. Everything is float64 so finite-difference checks can be
held to 1e-6.

Convolution weights are stored im2col-style with shape
``(9 * cin, cout)``; row ``(3 * dy + dx) * cin + c`` multiplies input
channel ``c`` at kernel offset ``(dy, dx)``.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import as_strided

PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


class DivergenceError(FloatingPointError):
    """Raised when a loss or parameter update stops being finite."""


@dataclass(frozen=True)
class Arch:
    side: int = 16
    channels: tuple[int, int] = (16, 32)
    n_classes: int = 4

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.side % 4:
            raise ValueError(f"image side must be divisible by 4, got {self.side}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        c1, c2 = self.channels
        flat = (self.side // 4) ** 2 * c2
        return {
            "w1": (9 * 3, c1),
            "b1": (c1,),
            "w2": (9 * c1, c2),
            "b2": (c2,),
            "w3": (flat, self.n_classes),
            "b3": (self.n_classes,),
        }


@dataclass
class Hyperparams:
    base_lr: float = 0.1
    decay_factor: float = 0.2
    decay_milestones: tuple[float, ...] = (0.25, 0.5, 0.7)
    nesterov_momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup_epochs_fraction: float = 0.05
    total_epochs: int = 200
    batch_size: int = 128

    def __post_init__(self):
        self.decay_milestones = tuple(float(m) for m in self.decay_milestones)
        ms = self.decay_milestones
        if any(not 0 < m < 1 for m in ms) or any(a >= b for a, b in zip(ms, ms[1:])):
            raise ValueError(f"milestones must be strictly increasing in (0, 1), got {ms}")
        if min(self.base_lr, self.decay_factor, self.weight_decay, self.batch_size, self.total_epochs) <= 0:
            raise ValueError("rates, batch size and epoch count must be positive")
        if not 0 <= self.warmup_epochs_fraction < 1:
            raise ValueError("warm-up fraction must lie in [0, 1)")


@dataclass
class ModelParams:
    arch: Arch
    weights: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, shape in self.arch.shapes().items():
            if self.weights[name].shape != shape:
                raise ValueError(f"{name} has shape {self.weights[name].shape}, expected {shape}")
            self.velocity.setdefault(name, np.zeros(shape))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights[n].ravel() for n in PARAM_NAMES])

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.arch,
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.velocity.items()},
        )


@dataclass
class Normalizer:
    """Per-channel mean/std used to turn uint8 images into model inputs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, images: np.ndarray) -> "Normalizer":
        f = images.reshape(-1, 3).astype(np.float64) / 255.0
        std = f.std(axis=0)
        return cls(f.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, images: np.ndarray) -> np.ndarray:
        return (images.astype(np.float64) / 255.0 - self.mean) / self.std

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class Batch:
    x: np.ndarray  # (n, h, w, 3) float64, normalized
    y: np.ndarray  # (n,) int labels

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if len(self.x) == 0 or self.x.ndim != 4 or len(self.x) != len(self.y):
            raise ValueError(f"bad batch: images {self.x.shape}, labels {self.y.shape}")


@dataclass
class LossStats:
    per_sample_losses: np.ndarray
    mean_loss: float
    correct_count: int


def init_params(arch: Arch, rng: np.random.Generator) -> ModelParams:
    """He-style uniform init scaled by fan-in; biases start at zero."""
    weights = {}
    for name, shape in arch.shapes().items():
        if name.startswith("w"):
            bound = math.sqrt(6.0 / shape[0])
            weights[name] = rng.uniform(-bound, bound, size=shape)
        else:
            weights[name] = np.zeros(shape)
    return ModelParams(arch, weights)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)], axis=3)
    return cols.reshape(n * h * w, 9 * c)


def _conv_infer(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Same result as _im2col(x) @ w without materializing the columns.
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    s = xp.strides
    win = as_strided(xp, (n, h, wd, 3, 3, c), (s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False)
    return np.einsum("nhwijc,ijcf->nhwf", win, w.reshape(3, 3, c, -1), optimize=True)


def _col2im(cols: np.ndarray, shape) -> np.ndarray:
    n, h, w, c = shape
    cols = cols.reshape(n, h, w, 9, c)
    dxp = np.zeros((n, h + 2, w + 2, c))
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += cols[:, :, :, 3 * dy + dx, :]
    return dxp[:, 1:-1, 1:-1, :]


def _pool(a: np.ndarray, keep: bool = False):
    # Window slot order: (0,0), (0,1), (1,0), (1,1); ties go to the first slot.
    slots = (a[:, 0::2, 0::2], a[:, 0::2, 1::2], a[:, 1::2, 0::2], a[:, 1::2, 1::2])
    out = np.maximum(np.maximum(slots[0], slots[1]), np.maximum(slots[2], slots[3]))
    if not keep:
        return out, None
    arg = np.full(out.shape, 3, dtype=np.int8)
    for k in (2, 1, 0):
        arg[slots[k] == out] = k
    return out, arg


def _unpool(d: np.ndarray, arg: np.ndarray) -> np.ndarray:
    n, h2, w2, c = d.shape
    out = np.zeros((n, 2 * h2, 2 * w2, c))
    for k, (dy, dx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        out[:, dy::2, dx::2] = np.where(arg == k, d, 0.0)
    return out


def _forward(params: ModelParams, x: np.ndarray, keep: bool = False):
    p = params.weights
    n, h, w, _ = x.shape
    c1, c2 = params.arch.channels
    if not keep:
        z1 = _conv_infer(x, p["w1"]) + p["b1"]
    else:
        cols1 = _im2col(x)
        z1 = (cols1 @ p["w1"] + p["b1"]).reshape(n, h, w, c1)
    a1 = np.maximum(z1, 0.0)
    q1, arg1 = _pool(a1, keep)
    if not keep:
        z2 = _conv_infer(q1, p["w2"]) + p["b2"]
    else:
        cols2 = _im2col(q1)
        z2 = (cols2 @ p["w2"] + p["b2"]).reshape(n, h // 2, w // 2, c2)
    a2 = np.maximum(z2, 0.0)
    q2, arg2 = _pool(a2, keep)
    flat = q2.reshape(n, -1)
    logits = flat @ p["w3"] + p["b3"]
    if not keep:
        return logits, None
    cache = dict(cols1=cols1, z1=z1, arg1=arg1, q1=q1, cols2=cols2, z2=z2, arg2=arg2, flat=flat)
    return logits, cache


def _softmax_xent(logits: np.ndarray, y: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(len(y)), y]
    return losses, shifted, lse


def _stats(logits, y) -> LossStats:
    losses, _, _ = _softmax_xent(logits, y)
    if not np.all(np.isfinite(losses)):
        raise DivergenceError("non-finite loss")
    correct = int(np.sum(logits.argmax(axis=1) == y))
    return LossStats(losses, float(losses.mean()), correct)


def _check_batch(params: ModelParams, batch: Batch):
    side = params.arch.side
    if batch.x.shape[1:] != (side, side, 3):
        raise ValueError(f"batch images {batch.x.shape[1:]} do not match architecture side {side}")
    if batch.y.min() < 0 or batch.y.max() >= params.arch.n_classes:
        raise ValueError("labels out of range for the architecture")


def logits(params: ModelParams, x: np.ndarray) -> np.ndarray:
    return _forward(params, np.asarray(x, dtype=np.float64))[0]


def forward_loss(params: ModelParams, batch: Batch) -> LossStats:
    """Per-sample softmax cross-entropy (natural log); parameters untouched."""
    _check_batch(params, batch)
    return _stats(logits(params, batch.x), batch.y)


def loss_and_grad(params: ModelParams, batch: Batch, weight_decay: float = 0.0):
    """Loss statistics plus the gradient of ``mean loss + wd/2 * ||w||^2``.

    Weight decay covers every parameter, biases included.
    """
    _check_batch(params, batch)
    p = params.weights
    x, y = batch.x, batch.y
    n = len(y)
    out, c = _forward(params, x, keep=True)
    stats = _stats(out, y)

    _, shifted, lse = _softmax_xent(out, y)
    dlogits = np.exp(shifted - lse[:, None])
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    g = {}
    g["w3"] = c["flat"].T @ dlogits
    g["b3"] = dlogits.sum(axis=0)
    dq2 = (dlogits @ p["w3"].T).reshape(c["z2"].shape[0], c["z2"].shape[1] // 2, c["z2"].shape[2] // 2, -1)
    dz2 = _unpool(dq2, c["arg2"]) * (c["z2"] > 0)
    dz2f = dz2.reshape(-1, dz2.shape[-1])
    g["w2"] = c["cols2"].T @ dz2f
    g["b2"] = dz2f.sum(axis=0)
    dq1 = _col2im(dz2f @ p["w2"].T, c["q1"].shape)
    dz1 = _unpool(dq1, c["arg1"]) * (c["z1"] > 0)
    dz1f = dz1.reshape(-1, dz1.shape[-1])
    g["w1"] = c["cols1"].T @ dz1f
    g["b1"] = dz1f.sum(axis=0)

    if weight_decay:
        for name in PARAM_NAMES:
            g[name] = g[name] + weight_decay * p[name]
    return stats, g


def backward(params: ModelParams, batch: Batch, weight_decay: float = 0.0) -> dict[str, np.ndarray]:
    return loss_and_grad(params, batch, weight_decay)[1]


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float, momentum: float = 0.9) -> ModelParams:
    """One Nesterov step: ``v <- mu*v - lr*g``; ``w <- w + mu*v - lr*g`` (new ``v``)."""
    weights, velocity = {}, {}
    for name in PARAM_NAMES:
        g = grads[name]
        v = momentum * params.velocity[name] - lr * g
        w = params.weights[name] + momentum * v - lr * g
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise DivergenceError(f"non-finite values in {name} after update")
        weights[name], velocity[name] = w, v
    return ModelParams(params.arch, weights, velocity)


def epoch_boundary(fraction: float, total_epochs: int) -> int:
    """First epoch at or after ``fraction`` of the run: ``ceil(fraction * total)``."""
    # round() guards against products like 0.7 * 200 = 140.00000000000003
    return math.ceil(round(fraction * total_epochs, 9))


def warmup_epochs(hp: Hyperparams) -> int:
    return epoch_boundary(hp.warmup_epochs_fraction, hp.total_epochs)


def lr_at(hp: Hyperparams, epoch: int) -> float:
    if not 0 <= epoch < hp.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {hp.total_epochs})")
    passed = sum(epoch >= epoch_boundary(m, hp.total_epochs) for m in hp.decay_milestones)
    return hp.base_lr * hp.decay_factor**passed


def accuracy(params: ModelParams, x: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    correct = 0
    for i in range(0, len(y), chunk):
        correct += int(np.sum(logits(params, x[i:i + chunk]).argmax(axis=1) == y[i:i + chunk]))
    return correct / len(y)


# -- gradient checking -------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: int
    n_checked: int
    n_skipped: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(
    params: ModelParams,
    batch: Batch,
    h: float = 1e-5,
    tol: float = 1e-6,
    weight_decay: float = 0.0,
    floor: float = 1e-6,
    fd_dtype=np.longdouble,
) -> GradCheckReport:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    Relative error is ``|a - fd| / max(|a|, |fd|, floor)``. A coordinate whose
    +-h probe flips a ReLU gate or a max-pool winner straddles a kink where
    the loss is not differentiable; such coordinates are skipped and counted.

    The analytic gradient is the float64 one under test. The finite-difference
    side is evaluated in ``fd_dtype`` (extended precision by default): in
    float64 the cancellation in ``f(w+h) - f(w-h)`` alone costs about 1e-11
    absolute at h=1e-5, more than 1e-6 relative for small gradients.
    """
    _, grads = loss_and_grad(params, batch, weight_decay)
    x = batch.x.astype(fd_dtype)
    idx = np.arange(len(batch.y))

    def objective(pp):
        out, c = _forward(pp, x, keep=True)
        shifted = out - out.max(axis=1, keepdims=True)
        losses = np.log(np.exp(shifted).sum(axis=1)) - shifted[idx, batch.y]
        reg = 0.5 * weight_decay * sum(np.sum(pp.weights[n] ** 2) for n in PARAM_NAMES)
        return losses.mean() + reg, (c["z1"] > 0, c["arg1"], c["z2"] > 0, c["arg2"])

    probe = ModelParams(params.arch, {k: v.astype(fd_dtype) for k, v in params.weights.items()})
    _, base_pattern = objective(probe)
    worst = (0.0, PARAM_NAMES[0], 0)
    checked = skipped = 0
    for name in PARAM_NAMES:
        w = probe.weights[name].reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(w.size):
            orig = w[i]
            w[i] = orig + fd_dtype(h)
            plus, pat_plus = objective(probe)
            w[i] = orig - fd_dtype(h)
            minus, pat_minus = objective(probe)
            w[i] = orig
            if not (_same_pattern(base_pattern, pat_plus) and _same_pattern(base_pattern, pat_minus)):
                skipped += 1
                continue
            fd = float((plus - minus) / (2 * fd_dtype(h)))
            rel = abs(g[i] - fd) / max(abs(g[i]), abs(fd), floor)
            checked += 1
            if rel > worst[0]:
                worst = (rel, name, i)
    return GradCheckReport(worst[0], worst[1], worst[2], checked, skipped, tol)


# -- checkpoints -------------------------------------------------------------

CHECKPOINT_MAGIC = b"AUGCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, normalizer: Normalizer | None = None) -> None:
    """Write ``magic | u32 header length (LE) | JSON header | float64 data``.

    The data block is the concatenation of w1, b1, w2, b2, w3, b3 in C order;
    its byte order is recorded in the header.
    """
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": asdict(params.arch),
        "byte_order": "little",
        "params": [[n, list(params.weights[n].shape)] for n in PARAM_NAMES],
        "normalizer": normalizer.to_dict() if normalizer is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    data = params.flat().astype("<f8").tobytes()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(blob)) + blob + data)


def load_checkpoint(path) -> tuple[ModelParams, Normalizer | None]:
    raw = Path(path).read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<I", raw[off:off + 4])
    header = json.loads(raw[off + 4:off + 4 + hlen])
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    dtype = "<f8" if header["byte_order"] == "little" else ">f8"
    flat = np.frombuffer(raw[off + 4 + hlen:], dtype=dtype).astype(np.float64)
    arch = Arch(**header["arch"])
    weights, pos = {}, 0
    for name, shape in header["params"]:
        size = int(np.prod(shape))
        weights[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    if pos != flat.size:
        raise ValueError(f"{path}: data block holds {flat.size} values, header describes {pos}")
    norm = header.get("normalizer")
    return ModelParams(arch, weights), (Normalizer.from_dict(norm) if norm else None)
