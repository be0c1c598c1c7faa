"""The reduced policy space: ordered pairs of (operation, magnitude level).

There are 15 kinds x 5 levels = 75 single operations and 75**2 = 5625
policies. A policy's id is ``(k1 * 5 + m1) * 75 + (k2 * 5 + m2)``, which fixes
the canonical order used by loss tables, subsets and reports.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .imgkernels import N_LEVELS, OpKind

N_KINDS = len(OpKind)
N_AUGOPS = N_KINDS * N_LEVELS
N_POLICIES = N_AUGOPS * N_AUGOPS

_AUGOP_TEXT = re.compile(r"^\s*([A-Za-z]+)@L(\d+)\s*$")


@dataclass(frozen=True, order=True)
class AugOp:
    kind: OpKind
    level: int

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        if not 0 <= int(self.level) < N_LEVELS:
            raise ValueError(f"level must be in [0, {N_LEVELS - 1}], got {self.level}")
        object.__setattr__(self, "level", int(self.level))

    @property
    def index(self) -> int:
        return int(self.kind) * N_LEVELS + self.level

    @classmethod
    def from_index(cls, index: int) -> "AugOp":
        return cls(OpKind(index // N_LEVELS), index % N_LEVELS)

    @classmethod
    def parse(cls, text: str) -> "AugOp":
        m = _AUGOP_TEXT.match(text)
        if m is None or m.group(1) not in OpKind.__members__:
            raise ValueError(f"cannot parse operation {text!r}; expected e.g. 'Rotate@L3'")
        return cls(OpKind[m.group(1)], int(m.group(2)))

    def __str__(self):
        return f"{self.kind.name}@L{self.level}"


@dataclass(frozen=True, order=True)
class Policy:
    first: AugOp
    second: AugOp

    @classmethod
    def parse(cls, text: str) -> "Policy":
        """Parse the text form ``Kind1@L<level>+Kind2@L<level>``."""
        parts = text.split("+")
        if len(parts) != 2:
            raise ValueError(f"cannot parse policy {text!r}; expected 'Kind@L<n>+Kind@L<n>'")
        return cls(AugOp.parse(parts[0]), AugOp.parse(parts[1]))

    def __str__(self):
        return f"{self.first}+{self.second}"


def encode(policy: Policy) -> int:
    return policy.first.index * N_AUGOPS + policy.second.index


def decode(policy_id: int) -> Policy:
    policy_id = int(policy_id)
    if not 0 <= policy_id < N_POLICIES:
        raise ValueError(f"policy id must be in [0, {N_POLICIES - 1}], got {policy_id}")
    return Policy(AugOp.from_index(policy_id // N_AUGOPS), AugOp.from_index(policy_id % N_AUGOPS))


def policy_text(policy_id: int) -> str:
    return str(decode(policy_id))


def components(ids) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decode: ``(kind1, level1, kind2, level2)`` arrays."""
    ids = np.asarray(ids, dtype=np.int64)
    first, second = np.divmod(ids, N_AUGOPS)
    return first // N_LEVELS, first % N_LEVELS, second // N_LEVELS, second % N_LEVELS


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def enumerate_all() -> np.ndarray:
    """Every policy id in canonical order, as a read-only array."""
    return _frozen(np.arange(N_POLICIES, dtype=np.int64))


def sample_uniform(rng: np.random.Generator, size: int | None = None):
    """Draw the two operations of a policy independently and uniformly.

    Returns a :class:`Policy`, or an array of ``size`` policy ids.
    """
    if size is None:
        a, b = rng.integers(0, N_AUGOPS, size=2)
        return Policy(AugOp.from_index(int(a)), AugOp.from_index(int(b)))
    pairs = rng.integers(0, N_AUGOPS, size=(size, 2))
    return pairs[:, 0] * N_AUGOPS + pairs[:, 1]


def sample_subset(rng: np.random.Generator, k: int) -> np.ndarray:
    """``k`` distinct ids, uniform without replacement.

    Scheme: the first ``k`` entries of one ``rng.permutation(5625)`` call, so
    the rng is consumed identically for every ``k``.
    """
    if not 1 <= k <= N_POLICIES:
        raise ValueError(f"subset size must be in [1, {N_POLICIES}], got {k}")
    return _frozen(rng.permutation(N_POLICIES)[:k].astype(np.int64))
