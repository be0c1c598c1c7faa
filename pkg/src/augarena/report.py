"""Usage histograms and accuracy-delta tables built from stored runs."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .harness import RunResult, RunSet
from .imgkernels import N_LEVELS, OpKind


def entropy(percentages: np.ndarray) -> float:
    """Natural-log entropy of a distribution given in percent."""
    p = np.asarray(percentages, dtype=np.float64) / 100.0
    p = p[p > 0]
    return float(-(p * np.log(p)).sum()) if len(p) else 0.0


@dataclass
class UsageHistogram:
    op_percent: np.ndarray  # (15,)
    level_percent: np.ndarray  # (5,)

    @property
    def op_entropy(self) -> float:
        return entropy(self.op_percent)

    @property
    def level_entropy(self) -> float:
        return entropy(self.level_percent)

    @property
    def top_level_share(self) -> float:
        return float(self.level_percent[-1])

    @classmethod
    def from_counts(cls, counts) -> "UsageHistogram":
        counts = np.asarray(counts, dtype=np.float64).reshape(len(OpKind), N_LEVELS)
        total = counts.sum()
        if total == 0:
            raise ValueError("no augmentation was applied in this run (all usage counters are zero)")
        return cls(100.0 * counts.sum(axis=1) / total, 100.0 * counts.sum(axis=0) / total)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["axis", "bin", "percent"])
            for kind, pct in zip(OpKind, self.op_percent):
                w.writerow(["op", kind.name, repr(float(pct))])
            for level, pct in enumerate(self.level_percent):
                w.writerow(["level", f"L{level}", repr(float(pct))])


def usage_histogram(run: RunResult) -> UsageHistogram:
    """Share of applications per operation kind and per magnitude level.

    Both components of every applied policy are counted.
    """
    return UsageHistogram.from_counts(run.usage)


def pooled_usage(runs: Iterable[RunResult]) -> UsageHistogram:
    return UsageHistogram.from_counts(sum(np.asarray(r.usage) for r in runs))


@dataclass
class ResultsRow:
    strategy: str
    multiplicity: int
    mean: float
    std: float
    n_runs: int
    delta: float | None  # None for the baseline row


@dataclass
class ResultsTable:
    baseline: ResultsRow
    rows: list[ResultsRow]

    def render(self) -> str:
        header = f"{'strategy':<12} {'M':>2} {'runs':>4} {'accuracy %':>11} {'delta %':>8} {'std':>6}"
        lines = [header, "-" * len(header)]
        for r in [self.baseline] + self.rows:
            delta = "-" if r.delta is None else f"{100 * r.delta:+.2f}"
            lines.append(
                f"{r.strategy:<12} {r.multiplicity:>2} {r.n_runs:>4} {100 * r.mean:>11.2f} {delta:>8} {100 * r.std:>6.2f}"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["strategy", "multiplicity", "runs", "mean_best_acc", "std_best_acc", "delta_vs_baseline"])
        for r in [self.baseline] + self.rows:
            w.writerow([r.strategy, r.multiplicity, r.n_runs, repr(r.mean), repr(r.std), "" if r.delta is None else repr(r.delta)])
        return buf.getvalue()


_ORDER = ["Baseline", "Random", "TrueAdv", "Controller", "1-Adv-0Ep", "1-Adv-100Ep", "Smooth", "Cyclic"]


def results_table(runsets: Sequence[RunSet]) -> ResultsTable:
    """Mean best accuracy per (strategy, M) and its gain over the Baseline run set."""
    baselines = [rs for rs in runsets if rs.strategy == "Baseline"]
    if not baselines:
        raise ValueError("results table needs a Baseline run set")
    base = baselines[0]
    base_row = ResultsRow(base.strategy, base.multiplicity, base.mean, base.std, len(base.best_accs), None)
    rows = []
    others = [rs for rs in runsets if rs is not base]
    others.sort(key=lambda rs: (rs.multiplicity, _ORDER.index(rs.strategy) if rs.strategy in _ORDER else 99))
    for rs in others:
        rows.append(ResultsRow(rs.strategy, rs.multiplicity, rs.mean, rs.std, len(rs.best_accs), rs.mean - base.mean))
    return ResultsTable(base_row, rows)


def find_runsets(root) -> list[RunSet]:
    """Every ``runset.json`` below ``root``, in sorted path order."""
    return [RunSet.load(p) for p in sorted(Path(root).rglob("runset.json"))]


def write_report(root, out_path) -> ResultsTable:
    """Render the results table to ``out_path`` plus one usage CSV per run set.

    Usage CSVs are written next to the table as
    ``usage_<strategy>_M<m>.csv`` (skipped for run sets without augmentation).
    """
    runsets = find_runsets(root)
    if not runsets:
        raise FileNotFoundError(f"no runset.json found under {root}")
    table = results_table(runsets)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(table.render())
    out_path.with_suffix(".csv").write_text(table.to_csv())
    for rs in runsets:
        ok = [r for r in rs.results if r.status == "ok"]
        if not ok or all(np.asarray(r.usage).sum() == 0 for r in ok):
            continue
        pooled_usage(ok).write_csv(out_path.parent / f"usage_{rs.strategy}_M{rs.multiplicity}.csv")
    return table


def pooled_standard_error(a: Sequence[float], b: Sequence[float]) -> float:
    """Standard error of ``mean(a) - mean(b)`` from the pooled sample variance."""
    na, nb = len(a), len(b)
    va = np.var(a, ddof=1) if na > 1 else 0.0
    vb = np.var(b, ddof=1) if nb > 1 else 0.0
    pooled = ((na - 1) * va + (nb - 1) * vb) / max(na + nb - 2, 1)
    return math.sqrt(pooled * (1 / na + 1 / nb))
