"""Datasets, the training loop, and multi-seed experiments.

Randomness: every run derives independent generators from its master seed
with :func:`substream` -- ``default_rng([seed, stream_id, *counters])`` --
so each source (init, shuffling, augmentation draws, subset sampling,
controller) can be replayed on its own from ``(seed, epoch, batch)``.
"""
from __future__ import annotations

import colorsys
import csv
import dataclasses
import hashlib
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import imgkernels as K
from . import policyspace as ps
from .model import (
    Arch,
    Batch,
    DivergenceError,
    Hyperparams,
    Normalizer,
    accuracy,
    init_params,
    loss_and_grad,
    lr_at,
    save_checkpoint,
    sgd_step,
    warmup_epochs,
)
from .selector import (
    ControllerState,
    LossTable,
    StrategyKind,
    controller_sample,
    controller_update,
    curriculum_policies,
    eval_loss_table,
    hard_policies,
    schedule_for,
)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

STREAMS = {
    "init": 1,
    "shuffle": 2,
    "augment": 3,
    "subset": 4,
    "controller": 5,
    "easy": 6,
    "table-sample": 7,
    "random": 8,
    "synthetic": 9,
}


def substream(seed: int, name: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAMS[name], *(int(c) for c in counters)])


def worker_count(requested: Optional[int] = None) -> int:
    """Resolve a worker cap; ``AUGARENA_THREADS`` applies when none is given (0 = all cores)."""
    if requested is None:
        requested = int(os.environ.get("AUGARENA_THREADS", "1") or 1)
    return requested if requested > 0 else (os.cpu_count() or 1)


# -- datasets ----------------------------------------------------------------


@dataclass
class Dataset:
    train_images: np.ndarray
    train_labels: np.ndarray
    test_images: np.ndarray
    test_labels: np.ndarray
    n_classes: int
    provenance: str

    def __post_init__(self):
        for name in ("train", "test"):
            x, y = getattr(self, f"{name}_images"), getattr(self, f"{name}_labels")
            K.validate_image(x, batched=True)
            if len(x) == 0 or len(x) != len(y):
                raise ValueError(f"{name} split must be nonempty with one label per image")
            if y.min() < 0 or y.max() >= self.n_classes:
                raise ValueError(f"{name} labels must lie in [0, {self.n_classes - 1}]")

    @property
    def side(self) -> int:
        return self.train_images.shape[1]


@dataclass
class SyntheticSpec:
    """Oriented-stripe classes with nearby hues and per-image nuisance.

    Class ``c`` has base hue ``hue_step * c`` (fraction of the colour wheel)
    and stripes at ``180 * c / n_classes`` degrees with period
    ``stripe_period`` pixels. Per image, independently: stripe phase uniform in
    ``[0, 2 pi)``; hue offset uniform in ``+-hue_jitter``; stripe angle offset
    uniform in ``+-angle_jitter`` degrees; brightness uniform in
    ``value_range``; stripe contrast uniform in ``contrast_range``. Pixel noise
    is i.i.d. Gaussian with standard deviation ``noise`` (full scale = 1).

    Classes are separable by construction as long as ``angle_jitter`` stays
    below half the orientation spacing. With every jitter and the noise at
    zero, images of one class differ only by stripe phase.
    """

    side: int = 16
    n_classes: int = 4
    train_per_class: int = 256
    test_per_class: int = 128
    seed: int = 0
    hue_step: float = 0.08
    hue_jitter: float = 0.05
    stripe_period: float = 5.0
    angle_jitter: float = 10.0
    contrast_range: tuple[float, float] = (0.2, 0.5)
    saturation: float = 0.6
    value_range: tuple[float, float] = (0.45, 0.95)
    noise: float = 0.2

    def __post_init__(self):
        self.contrast_range = tuple(self.contrast_range)
        self.value_range = tuple(self.value_range)

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _synthetic_split(spec: SyntheticSpec, per_class: int, split: int):
    rng = substream(spec.seed, "synthetic", split)
    n = spec.n_classes * per_class
    labels = np.repeat(np.arange(spec.n_classes), per_class)
    hues = (spec.hue_step * labels + rng.uniform(-spec.hue_jitter, spec.hue_jitter, n)) % 1.0
    values = rng.uniform(*spec.value_range, n)
    base = np.array([colorsys.hsv_to_rgb(h, spec.saturation, v) for h, v in zip(hues, values)])
    theta = np.pi * labels / spec.n_classes + np.deg2rad(rng.uniform(-spec.angle_jitter, spec.angle_jitter, n))
    phase = rng.uniform(0, 2 * np.pi, n)
    contrast = rng.uniform(*spec.contrast_range, n)
    yy, xx = np.meshgrid(np.arange(spec.side), np.arange(spec.side), indexing="ij")
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    wave = np.cos(2 * np.pi * proj / spec.stripe_period + phase[:, None, None])
    img = base[:, None, None, :] * (1.0 + contrast[:, None, None, None] * wave[..., None])
    img = img + spec.noise * rng.standard_normal(img.shape)
    return np.clip(np.floor(img * 255 + 0.5), 0, 255).astype(np.uint8), labels


def gen_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> Dataset:
    train_x, train_y = _synthetic_split(spec, spec.train_per_class, 0)
    test_x, test_y = _synthetic_split(spec, spec.test_per_class, 1)
    return Dataset(train_x, train_y, test_x, test_y, spec.n_classes, f"synthetic({spec.digest()})")


CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


def _read_cifar_file(path: Path, records: int):
    if not path.is_file():
        raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    expected = records * CIFAR_RECORD
    if raw.size != expected:
        raise ValueError(f"{path}: expected {expected} bytes ({records} records of {CIFAR_RECORD}), found {raw.size}")
    rec = raw.reshape(records, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= 10:
        raise ValueError(f"{path}: label byte {labels.max()} out of range (must be < 10)")
    # planar R, G, B 32x32 planes -> (n, 32, 32, 3)
    images = rec[:, 1:].reshape(records, 3, 32, 32).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def _first_per_class(labels: np.ndarray, n: int, n_classes: int) -> np.ndarray:
    keep = []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)[:n]
        if len(idx) < n:
            raise ValueError(f"subset of {n} per class requested but class {c} has only {len(idx)} images")
        keep.append(idx)
    return np.sort(np.concatenate(keep))


def load_cifar10(path, subset: Optional[int] = None, records_per_file: int = 10000) -> Dataset:
    """Read the CIFAR-10 binary release (``data_batch_1..5.bin``, ``test_batch.bin``).

    ``subset`` keeps the first ``subset`` training images of each class (in
    file order); the test split is kept whole.
    """
    root = Path(path)
    parts = [_read_cifar_file(root / name, records_per_file) for name in CIFAR_TRAIN_FILES]
    train_x = np.concatenate([p[0] for p in parts])
    train_y = np.concatenate([p[1] for p in parts])
    test_x, test_y = _read_cifar_file(root / CIFAR_TEST_FILE, records_per_file)
    if subset is not None:
        keep = _first_per_class(train_y, subset, 10)
        train_x, train_y = train_x[keep], train_y[keep]
    return Dataset(train_x, train_y, test_x, test_y, 10, "cifar10")


# -- configuration -------------------------------------------------------------


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    path: Optional[str] = None
    subset: Optional[int] = None

    def build(self) -> Dataset:
        if self.kind == "synthetic":
            return gen_synthetic(self.synthetic)
        if self.kind == "cifar10":
            if not self.path:
                raise ValueError("cifar10 dataset needs a path")
            return load_cifar10(self.path, self.subset)
        raise ValueError(f"unknown dataset kind {self.kind!r}")


@dataclass
class LossTableConfig:
    """Which sample and which policies a loss table covers.

    ``samples=None`` uses the whole training split, ``policies=None`` the whole
    space; ``full`` mode is both. ``resample_subset`` draws a fresh policy
    subset every epoch instead of fixing one per run.
    """

    samples: Optional[int] = 16
    policies: Optional[int] = 500
    resample_subset: bool = True

    @classmethod
    def full(cls) -> "LossTableConfig":
        return cls(None, None)

    @classmethod
    def subsampled(cls, samples: int = 128, policies: int = 500) -> "LossTableConfig":
        return cls(samples, policies)


def desk_hyperparams(**overrides) -> Hyperparams:
    """Desk-scale schedule: 16 epochs, batch 32, base rate 0.01.

    The small convnet has no batch normalization and diverges at the 0.1
    base rate used for wide residual networks; every other setting keeps
    the reference values.
    """
    settings = dict(base_lr=0.01, total_epochs=16, batch_size=32)
    settings.update(overrides)
    return Hyperparams(**settings)


@dataclass
class ExperimentConfig:
    strategy: str = "Random"
    multiplicity: int = 1
    hyperparams: Hyperparams = field(default_factory=desk_hyperparams)
    channels: tuple[int, int] = (16, 32)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    loss_table: LossTableConfig = field(default_factory=LossTableConfig)
    baseline_cutout_level: int = 2
    controller_step_size: float = 0.05
    controller_baseline_decay: float = 0.95
    max_table_evals: int = 2_000_000

    def __post_init__(self):
        self.kind = StrategyKind.parse(self.strategy)
        self.strategy = self.kind.value
        self.channels = tuple(self.channels)
        if self.multiplicity not in (1, 2):
            raise ValueError(f"multiplicity must be 1 or 2, got {self.multiplicity}")
        if not self.seeds:
            raise ValueError("need at least one seed")
        if self.kind.is_curriculum:
            schedule_for(self.kind, self.multiplicity)

    def check_table_budget(self, n_train: int) -> None:
        if not self.kind.needs_table:
            return
        n = self.loss_table.samples or n_train
        k = self.loss_table.policies or ps.N_POLICIES
        if n * k > self.max_table_evals:
            raise ValueError(
                f"loss table of {k} policies x {n} samples = {n * k} forward passes per epoch "
                f"exceeds max_table_evals={self.max_table_evals}; use a subsampled table or raise the budget"
            )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hyperparams"]["decay_milestones"] = list(self.hyperparams.decay_milestones)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        _reject_unknown(cls, d, "config")
        if "hyperparams" in d:
            _reject_unknown(Hyperparams, d["hyperparams"], "hyperparams")
            d["hyperparams"] = Hyperparams(**d["hyperparams"])
        if "dataset" in d:
            ds = dict(d["dataset"])
            _reject_unknown(DatasetConfig, ds, "dataset")
            if "synthetic" in ds:
                _reject_unknown(SyntheticSpec, ds["synthetic"], "dataset.synthetic")
                ds["synthetic"] = SyntheticSpec(**ds["synthetic"])
            d["dataset"] = DatasetConfig(**ds)
        if "loss_table" in d:
            _reject_unknown(LossTableConfig, d["loss_table"], "loss_table")
            d["loss_table"] = LossTableConfig(**d["loss_table"])
        return cls(**d)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("seeds")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _reject_unknown(cls, d: dict, where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {where} field(s): {sorted(unknown)}")


def load_config(path) -> ExperimentConfig:
    with open(path) as f:
        return ExperimentConfig.from_dict(json.load(f))


# -- results -------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    test_acc: float
    lr: float
    augmented: bool
    policies: list[list[int]] = field(default_factory=list)  # per batch, one id per slot


@dataclass
class RunResult:
    config_hash: str
    seed: int
    strategy: str
    multiplicity: int
    epochs: list[EpochRecord] = field(default_factory=list)
    usage: list[list[int]] = field(default_factory=lambda: np.zeros((len(K.OpKind), K.N_LEVELS), int).tolist())
    applications: int = 0
    ops_per_application: int = 2
    best_test_acc: float = 0.0
    best_epoch: int = -1
    normalizer: dict = field(default_factory=dict)
    checkpoint: Optional[str] = None
    status: str = "ok"
    diagnostic: str = ""
    schema_version: int = SCHEMA_VERSION

    @property
    def test_acc(self) -> list[float]:
        return [e.test_acc for e in self.epochs]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        d = dict(d)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported run-result schema version {d.get('schema_version')}")
        d["epochs"] = [EpochRecord(**e) for e in d["epochs"]]
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunResult":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def write_epochs_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "train_loss", "test_acc", "lr"])
            for e in self.epochs:
                w.writerow([e.epoch, repr(e.train_loss), repr(e.test_acc), repr(e.lr)])


@dataclass
class RunSet:
    config_hash: str
    strategy: str
    multiplicity: int
    results: list[RunResult]
    complete: bool = True
    schema_version: int = SCHEMA_VERSION

    @property
    def best_accs(self) -> list[float]:
        return [r.best_test_acc for r in self.results if r.status == "ok"]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.best_accs)

    @property
    def std(self) -> float:
        """Sample standard deviation (n - 1); 0 for a single run."""
        accs = self.best_accs
        return statistics.stdev(accs) if len(accs) > 1 else 0.0

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["mean_best_test_acc"] = self.mean if self.best_accs else None
        d["std_best_test_acc"] = self.std if self.best_accs else None
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path) -> "RunSet":
        with open(path) as f:
            d = json.load(f)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"{path}: unsupported run-set schema version {d.get('schema_version')}")
        d.pop("mean_best_test_acc", None)
        d.pop("std_best_test_acc", None)
        d["results"] = [RunResult.from_dict(r) for r in d["results"]]
        return cls(**d)


# -- training ------------------------------------------------------------------


class _Selector:
    """Per-run policy source: which policies each batch of an epoch gets."""

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.kind = config.kind
        self.m = config.multiplicity
        self.seed = seed
        self.table: Optional[LossTable] = None
        self.schedule = schedule_for(self.kind, self.m) if self.kind.is_curriculum else None
        self.controller = None
        if self.kind is StrategyKind.CONTROLLER:
            self.controller = ControllerState(
                ps.enumerate_all(), step_size=config.controller_step_size, baseline_decay=config.controller_baseline_decay
            )

    def policies(self, epoch: int, batch: int) -> list[int]:
        kind, m, seed = self.kind, self.m, self.seed
        if kind is StrategyKind.RANDOM:
            return [int(p) for p in ps.sample_uniform(substream(seed, "random", epoch, batch), m)]
        if kind is StrategyKind.TRUEADV:
            if self.table is None:
                raise ValueError(f"TrueAdv: no loss table available at epoch {epoch}")
            return hard_policies(self.table, m)
        if kind is StrategyKind.CONTROLLER:
            rng = substream(seed, "controller", epoch, batch)
            return [controller_sample(self.controller, rng) for _ in range(m)]
        total = self.config.hyperparams.total_epochs
        slots = curriculum_policies(self.schedule, epoch, total, self.table, substream(seed, "easy", epoch, batch))
        return [pid for _, pid in slots]

    def observe(self, policy_ids: list[int], losses: list[float]) -> None:
        if self.controller is not None:
            for pid, loss in zip(policy_ids, losses):
                self.controller = controller_update(self.controller, pid, loss)

    def refresh_table(self, params, data: Dataset, normalizer: Normalizer, epoch: int, threads: int) -> None:
        tc = self.config.loss_table
        n_train = len(data.train_labels)
        if tc.samples is None or tc.samples >= n_train:
            idx = np.arange(n_train)
        else:
            idx = np.sort(substream(self.seed, "table-sample", epoch).choice(n_train, tc.samples, replace=False))
        if tc.policies is None:
            policies = ps.enumerate_all()
        else:
            counter = (epoch,) if tc.resample_subset else ()
            policies = ps.sample_subset(substream(self.seed, "subset", *counter), tc.policies)
        self.table = eval_loss_table(
            params, data.train_images[idx], data.train_labels[idx], policies, normalizer,
            seed=self.seed, epoch=epoch, threads=threads,
        )


def _augment(images, policy_ids, seed, epoch, batch, cutout_level=None):
    """Augmented copies of ``images``, one per policy, stacked in slot order."""
    rng = substream(seed, "augment", epoch, batch)
    n = len(images)
    copies = []
    for _ in range(len(policy_ids) if cutout_level is None else 1):
        signs, centers = K.draw_stochastic(rng, 2 * n)
        copies.append((signs.reshape(2, n).T, centers.reshape(2, n, 2).transpose(1, 0, 2)))
    if cutout_level is not None:
        signs, centers = copies[0]
        return [K.apply_op_batch(images, K.OpKind.Cutout, cutout_level, signs[:, 0], centers[:, 0])]
    return [
        K.apply_policy_batch(images, ps.decode(pid), signs, centers)
        for pid, (signs, centers) in zip(policy_ids, copies)
    ]


def train_run(
    config: ExperimentConfig,
    seed: int,
    dataset: Optional[Dataset] = None,
    out_dir=None,
    threads: Optional[int] = None,
) -> RunResult:
    """Train one model and record its trajectory.

    Epochs before the warm-up boundary see plain batches. Afterwards each batch
    is augmented once per selected policy (M copies, concatenated) and one
    optimizer step is taken on the combined mean loss. Test accuracy is taken
    after every epoch; table-driven strategies rebuild their loss table at
    the end of every epoch from the warm-up boundary on.
    """
    threads = worker_count(threads)
    data = dataset if dataset is not None else config.dataset.build()
    config.check_table_budget(len(data.train_labels))
    normalizer = Normalizer.fit(data.train_images)
    test_x = normalizer(data.test_images)
    arch = Arch(data.side, config.channels, data.n_classes)
    params = init_params(arch, substream(seed, "init"))
    selector = _Selector(config, seed)
    baseline = config.kind is StrategyKind.BASELINE

    result = RunResult(
        config.digest(), seed, config.strategy, config.multiplicity,
        ops_per_application=1 if baseline else 2, normalizer=normalizer.to_dict(),
    )
    usage = np.zeros((len(K.OpKind), K.N_LEVELS), dtype=np.int64)
    # overflow on the way to a non-finite loss is expected; DivergenceError reports it
    with np.errstate(over="ignore", invalid="ignore"):
        params = _train_epochs(config, seed, data, params, normalizer, test_x, selector, result, usage, threads)
    return _finish(result, usage, params, normalizer, out_dir)


def _train_epochs(config, seed, data, params, normalizer, test_x, selector, result, usage, threads):
    hp = config.hyperparams
    total, warm = hp.total_epochs, warmup_epochs(hp)
    baseline = config.kind is StrategyKind.BASELINE
    n_train = len(data.train_labels)
    try:
        for epoch in range(total):
            lr = lr_at(hp, epoch)
            order = substream(seed, "shuffle", epoch).permutation(n_train)
            augmented = epoch >= warm
            loss_sum, count, chosen = 0.0, 0, []
            for b, start in enumerate(range(0, n_train, hp.batch_size)):
                idx = order[start:start + hp.batch_size]
                images, labels = data.train_images[idx], data.train_labels[idx]
                pids = []
                if not augmented:
                    copies = [images]
                elif baseline:
                    copies = _augment(images, [], seed, epoch, b, cutout_level=config.baseline_cutout_level)
                    usage[K.OpKind.Cutout, config.baseline_cutout_level] += 1
                    result.applications += 1
                else:
                    pids = selector.policies(epoch, b)
                    copies = _augment(images, pids, seed, epoch, b)
                    for k1, m1, k2, m2 in zip(*ps.components(pids)):
                        usage[k1, m1] += 1
                        usage[k2, m2] += 1
                    result.applications += len(pids)
                    chosen.append(pids)
                batch = Batch(normalizer(np.concatenate(copies)), np.tile(labels, len(copies)))
                stats, grads = loss_and_grad(params, batch, hp.weight_decay)
                if pids:
                    per_copy = stats.per_sample_losses.reshape(len(copies), -1).mean(axis=1)
                    selector.observe(pids, [float(v) for v in per_copy])
                params = sgd_step(params, grads, lr, hp.nesterov_momentum)
                loss_sum += float(stats.per_sample_losses.sum())
                count += len(batch.y)
            acc = accuracy(params, test_x, data.test_labels)
            result.epochs.append(EpochRecord(epoch, loss_sum / count, acc, lr, augmented, chosen))
            log.info("seed %d epoch %d: loss %.4f test acc %.4f", seed, epoch, loss_sum / count, acc)
            if config.kind.needs_table and warm <= epoch + 1 < total:
                selector.refresh_table(params, data, normalizer, epoch, threads)
    except DivergenceError as exc:
        result.status = "diverged"
        result.diagnostic = f"epoch {len(result.epochs)}: {exc}"
        log.warning("seed %d diverged: %s", seed, exc)
    return params


def _finish(result, usage, params, normalizer, out_dir):
    result.usage = usage.tolist()
    if result.epochs:
        accs = result.test_acc
        result.best_test_acc = max(accs)
        result.best_epoch = int(np.argmax(accs))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.ckpt", params, normalizer)
        result.checkpoint = "checkpoint.ckpt"
        (out / "run_result.json").write_text(result.to_json())
        result.write_epochs_csv(out / "epochs.csv")
    return result


def _run_one(args):
    config_dict, seed, out_dir = args
    return train_run(ExperimentConfig.from_dict(config_dict), seed, out_dir=out_dir, threads=1)


def run_experiment(config: ExperimentConfig, out_dir=None, threads: Optional[int] = None) -> RunSet:
    """Train every seed of ``config`` and aggregate best test accuracies.

    Seeds run in separate processes when more than one worker is allowed;
    each run depends only on (config, seed), so the outcome is the same.
    """
    threads = worker_count(threads)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1))
    jobs = [(config.to_dict(), s, str(out / f"seed_{s}") if out else None) for s in config.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(threads, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        data = config.dataset.build()
        results = [train_run(config, s, data, d, threads) for _, s, d in jobs]
    runset = RunSet(
        config.digest(), config.strategy, config.multiplicity, results,
        complete=all(r.status == "ok" for r in results),
    )
    if out is not None:
        (out / "runset.json").write_text(runset.to_json())
    return runset
