"""Augmentation selection: loss tables, adversarial ranking, curricula, controller."""
from __future__ import annotations

import csv
import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import imgkernels as K
from . import policyspace as ps
from .model import Batch, DivergenceError, ModelParams, Normalizer, epoch_boundary, forward_loss

# -- loss tables -------------------------------------------------------------


@dataclass
class LossTable:
    policy_ids: np.ndarray
    mean_losses: np.ndarray
    n_samples: int
    epoch: int = 0

    def __post_init__(self):
        self.policy_ids = np.asarray(self.policy_ids, dtype=np.int64)
        self.mean_losses = np.asarray(self.mean_losses, dtype=np.float64)
        if self.policy_ids.shape != self.mean_losses.shape or self.policy_ids.ndim != 1:
            raise ValueError("need exactly one loss per policy id")
        if len(np.unique(self.policy_ids)) != len(self.policy_ids):
            raise ValueError("duplicate policy ids in loss table")
        if not np.all(np.isfinite(self.mean_losses)) or np.any(self.mean_losses < 0):
            raise ValueError("loss table entries must be finite and nonnegative")

    def __len__(self):
        return len(self.policy_ids)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["epoch", "policy_id", "policy_text", "mean_loss", "n_samples"])
            for pid, loss in zip(self.policy_ids, self.mean_losses):
                w.writerow([self.epoch, int(pid), ps.policy_text(pid), repr(float(loss)), self.n_samples])

    @classmethod
    def from_csv(cls, path) -> "LossTable":
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
        if not rows:
            raise ValueError(f"{path}: empty loss table")
        return cls(
            [int(r["policy_id"]) for r in rows],
            [float(r["mean_loss"]) for r in rows],
            int(rows[0]["n_samples"]),
            int(rows[0]["epoch"]),
        )


def table_draws(seed: int, epoch: int, policy_id: int, n: int):
    """Kernel randomness for one table entry, fixed by (seed, epoch, policy)."""
    if epoch < 0:
        raise ValueError(f"epoch must be nonnegative, got {epoch}")
    rng = np.random.default_rng([seed, 0x7AB1E, epoch, policy_id])
    signs, centers = K.draw_stochastic(rng, 2 * n)
    return signs.reshape(2, n).T, centers.reshape(2, n, 2).transpose(1, 0, 2)


def _eval_chunk(params, images, labels, normalizer, ids, seed, epoch):
    n = len(labels)
    k1, m1, k2, m2 = ps.components(ids)
    signs = np.empty((len(ids), n, 2), dtype=np.int64)
    centers = np.empty((len(ids), n, 2, 2))
    for j, pid in enumerate(ids):
        signs[j], centers[j] = table_draws(seed, epoch, int(pid), n)
    stack = np.broadcast_to(images, (len(ids),) + images.shape).reshape((-1,) + images.shape[1:])
    signs, centers = signs.reshape(-1, 2), centers.reshape(-1, 2, 2)
    aug = K.apply_ops_grouped(stack, np.repeat(k1, n), np.repeat(m1, n), signs[:, 0], centers[:, 0])
    aug = K.apply_ops_grouped(aug, np.repeat(k2, n), np.repeat(m2, n), signs[:, 1], centers[:, 1])
    x = normalizer(aug)
    y = np.tile(labels, len(ids))
    losses = np.empty(len(y))
    step = 128
    for i in range(0, len(y), step):
        losses[i:i + step] = forward_loss(params, Batch(x[i:i + step], y[i:i + step])).per_sample_losses
    return losses.reshape(len(ids), n).mean(axis=1)


def eval_loss_table(
    params: ModelParams,
    images: np.ndarray,
    labels: np.ndarray,
    policies: Sequence[int],
    normalizer: Normalizer,
    seed: int = 0,
    epoch: int = 0,
    threads: int = 1,
    chunk_policies: int = 64,
) -> LossTable:
    """Mean loss of each policy over the given (uint8) images.

    Entry ``i`` is ``mean_j loss(f_w(tau_i(x_j)), y_j)`` under a frozen
    parameter snapshot. Chunks of policies may be evaluated on worker
    threads; results are always assembled in the order of ``policies``.
    """
    images = K.validate_image(images, batched=True)
    labels = np.asarray(labels, dtype=np.int64)
    policies = np.asarray(policies, dtype=np.int64)
    if len(labels) == 0 or len(images) != len(labels):
        raise ValueError("loss table needs a nonempty, matching image/label sample")
    if len(policies) == 0:
        raise ValueError("loss table needs at least one policy")
    chunks = [policies[i:i + chunk_policies] for i in range(0, len(policies), chunk_policies)]

    def run(ids):
        return _eval_chunk(params, images, labels, normalizer, ids, seed, epoch)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    means = np.concatenate(parts)
    if not np.all(np.isfinite(means)):
        raise DivergenceError(f"non-finite loss while building the epoch {epoch} loss table")
    return LossTable(policies, means, len(labels), epoch)


def trueadv_select(table: LossTable) -> int:
    """Policy with the highest mean loss; ties go to the lowest id."""
    if len(table) == 0:
        raise ValueError("empty loss table")
    best = table.mean_losses.max()
    return int(table.policy_ids[table.mean_losses == best].min())


def rank_policies(table: LossTable) -> np.ndarray:
    """Ids by descending loss, ties broken by ascending id."""
    if len(table) == 0:
        raise ValueError("empty loss table")
    order = np.lexsort((table.policy_ids, -table.mean_losses))
    return table.policy_ids[order]


def easiest_half(table: LossTable) -> np.ndarray:
    """The bottom ``ceil(n / 2)`` of the ranking (250 of a 500-policy table)."""
    ranked = rank_policies(table)
    return ranked[len(ranked) - math.ceil(len(ranked) / 2):]


# -- strategies and curricula ------------------------------------------------


class StrategyKind(str, enum.Enum):
    BASELINE = "Baseline"
    RANDOM = "Random"
    TRUEADV = "TrueAdv"
    CONTROLLER = "Controller"
    ADV_0EP = "1-Adv-0Ep"
    ADV_100EP = "1-Adv-100Ep"
    SMOOTH = "Smooth"
    CYCLIC = "Cyclic"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        if isinstance(text, cls):
            return text
        for kind in cls:
            if kind.value.lower() == str(text).lower():
                return kind
        raise ValueError(f"unknown strategy {text!r}; choose from {[k.value for k in cls]}")

    @property
    def is_curriculum(self) -> bool:
        return self in CURRICULA

    @property
    def needs_table(self) -> bool:
        return self is StrategyKind.TRUEADV or self.is_curriculum


CURRICULA = (StrategyKind.ADV_0EP, StrategyKind.ADV_100EP, StrategyKind.SMOOTH, StrategyKind.CYCLIC)

EASY = 0  # slot marker; a positive slot value r means Hard(r)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Piecewise-constant slot composition over the fraction of training done.

    ``phases[i]`` holds from ``boundaries[i]`` (inclusive) up to the next
    boundary. Each phase is a tuple of M slots: ``EASY`` or a hard rank.
    """

    name: str
    multiplicity: int
    boundaries: tuple[float, ...]
    phases: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) != len(self.phases) or not b or b[0] != 0.0:
            raise ValueError("need one phase per boundary, starting at 0")
        if any(x > y for x, y in zip(b, b[1:])) or b[-1] > 1:
            raise ValueError("boundaries must be nondecreasing in [0, 1]")
        for slots in self.phases:
            if len(slots) != self.multiplicity:
                raise ValueError(f"{self.name}: every phase needs exactly {self.multiplicity} slots")
            if any(s > self.multiplicity or s < 0 for s in slots):
                raise ValueError(f"{self.name}: hard rank exceeds multiplicity")

    def boundary_epochs(self, total_epochs: int) -> list[int]:
        return [epoch_boundary(f, total_epochs) for f in self.boundaries]

    def slots_at(self, epoch: int, total_epochs: int) -> tuple[int, ...]:
        current = self.phases[0]
        for start, slots in zip(self.boundary_epochs(total_epochs), self.phases):
            if epoch >= start:
                current = slots
        return current


_H1, _H2 = 1, 2
_SCHEDULES = {
    (StrategyKind.ADV_0EP, 2): ((0.0,), ((_H1, EASY),)),
    (StrategyKind.ADV_0EP, 1): ((0.0,), ((_H1,),)),
    (StrategyKind.ADV_100EP, 2): ((0.0, 0.5), ((EASY, EASY), (_H1, EASY))),
    (StrategyKind.ADV_100EP, 1): ((0.0, 0.5), ((EASY,), (_H1,))),
    (StrategyKind.SMOOTH, 2): ((0.0, 0.375, 0.75), ((EASY, EASY), (_H1, EASY), (_H1, _H2))),
    (StrategyKind.SMOOTH, 1): ((0.0, 0.625), ((EASY,), (_H1,))),
    (StrategyKind.CYCLIC, 2): (
        (0.0, 0.375, 0.5, 0.625, 0.75),
        ((EASY, EASY), (_H1, EASY), (_H1, _H2), (_H1, EASY), (EASY, EASY)),
    ),
    (StrategyKind.CYCLIC, 1): ((0.0, 0.375, 0.75), ((EASY,), (_H1,), (EASY,))),
}


def schedule_for(kind: StrategyKind, multiplicity: int) -> CurriculumSchedule:
    kind = StrategyKind.parse(kind)
    try:
        boundaries, phases = _SCHEDULES[(kind, multiplicity)]
    except KeyError:
        raise ValueError(f"no curriculum {kind.value!r} with multiplicity {multiplicity}") from None
    return CurriculumSchedule(kind.value, multiplicity, boundaries, phases)


def hard_policies(table: LossTable, count: int) -> list[int]:
    ranked = rank_policies(table)
    if count > len(ranked):
        raise ValueError(f"table has {len(ranked)} policies, need {count} hard ones")
    return [int(p) for p in ranked[:count]]


def curriculum_slots(schedule: CurriculumSchedule, epoch: int, total_epochs: int) -> tuple[int, ...]:
    return schedule.slots_at(epoch, total_epochs)


def curriculum_policies(
    schedule: CurriculumSchedule,
    epoch: int,
    total_epochs: int,
    table: Optional[LossTable],
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """The M ``(slot, policy_id)`` pairs for one batch of ``epoch``.

    Hard(r) is the r-th highest-loss policy of ``table``. Easy slots draw
    uniformly from the easiest half of the table, or from the whole space
    while no table exists yet.
    """
    slots = schedule.slots_at(epoch, total_epochs)
    hard_needed = max(slots)
    if hard_needed and table is None:
        raise ValueError(f"{schedule.name}: epoch {epoch} needs hard policies but no loss table exists")
    hard = hard_policies(table, hard_needed) if hard_needed else []
    pool = easiest_half(table) if table is not None else None
    out = []
    for s in slots:
        if s == EASY:
            pid = int(pool[rng.integers(len(pool))]) if pool is not None else int(rng.integers(ps.N_POLICIES))
            out.append((EASY, pid))
        else:
            out.append((s, hard[s - 1]))
    return out


# -- REINFORCE controller ------------------------------------------------------

# Update steps within which the default controller (step 0.05, baseline decay
# 0.95) puts > 0.9 probability on the argmax of a stationary table. Measured:
# {1, 2, 3} needs at most ~250 steps over 20 seeds; tables of 3-7 entries in
# [0, 3] whose top two losses differ by 0.1 need at most ~1650.
CONVERGENCE_STEPS_EASY = 1000
CONVERGENCE_STEPS_GAP_0_1 = 10000


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max())
    return z / z.sum()


@dataclass
class ControllerState:
    """Softmax distribution over ``policy_ids`` trained to maximize expected loss."""

    policy_ids: np.ndarray
    logits: np.ndarray = None
    baseline: Optional[float] = None
    step_size: float = 0.05
    baseline_decay: float = 0.95

    def __post_init__(self):
        self.policy_ids = np.asarray(self.policy_ids, dtype=np.int64)
        if self.logits is None:
            self.logits = np.zeros(len(self.policy_ids))
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.step_size <= 0:
            raise ValueError("step size must be positive")

    @property
    def probs(self) -> np.ndarray:
        return softmax(self.logits)

    def prob_of(self, policy_id: int) -> float:
        return float(self.probs[np.flatnonzero(self.policy_ids == policy_id)[0]])


def controller_sample(state: ControllerState, rng: np.random.Generator) -> int:
    p = state.probs
    # inverse-CDF on one uniform; clamp guards the cumulative sum's last ulp
    i = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), len(p) - 1)
    return int(state.policy_ids[i])


def controller_update(state: ControllerState, sampled_id: int, observed_loss: float) -> ControllerState:
    """One REINFORCE ascent step on the expected loss.

    The score-function gradient of ``log p(sampled)`` with respect to the
    logits is ``onehot(sampled) - p``; it is scaled by the advantage
    ``observed_loss - baseline``. The baseline is an exponential moving
    average seeded with the first observation, and logits are re-centred to
    mean zero afterwards.
    """
    observed_loss = float(observed_loss)
    if not math.isfinite(observed_loss) or observed_loss < 0:
        raise ValueError(f"observed loss must be finite and nonnegative, got {observed_loss}")
    baseline = observed_loss if state.baseline is None else state.baseline
    advantage = observed_loss - baseline
    logits = state.logits
    if advantage != 0.0:
        grad = -state.probs
        grad[np.flatnonzero(state.policy_ids == sampled_id)[0]] += 1.0
        logits = logits + state.step_size * advantage * grad
        logits = logits - logits.mean()
    new_baseline = state.baseline_decay * baseline + (1 - state.baseline_decay) * observed_loss
    return ControllerState(state.policy_ids, logits, new_baseline, state.step_size, state.baseline_decay)
