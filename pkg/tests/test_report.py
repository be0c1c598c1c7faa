import math
from pathlib import Path

import numpy as np
import pytest

from augarena.harness import RunResult, RunSet
from augarena.report import (
    UsageHistogram,
    entropy,
    pooled_standard_error,
    pooled_usage,
    results_table,
    usage_histogram,
    write_report,
)


def run(strategy, m, acc, usage=None, seed=0):
    r = RunResult("h", seed, strategy, m, best_test_acc=acc)
    if usage is not None:
        r.usage = usage
    return r


def runset(strategy, m, accs):
    return RunSet("h", strategy, m, [run(strategy, m, a, seed=s) for s, a in enumerate(accs)])


GOLDEN_TABLE = """\
strategy      M runs  accuracy %  delta %    std
------------------------------------------------
Baseline      1    2       90.00        -   2.83
Random        1    2       92.00    +2.00   1.41
TrueAdv       1    2       85.00    -5.00   0.00
Cyclic        2    1       91.25    +1.25   0.00
"""


def test_results_table_golden():
    table = results_table([
        runset("Cyclic", 2, [0.9125]),
        runset("TrueAdv", 1, [0.85, 0.85]),
        runset("Baseline", 1, [0.88, 0.92]),
        runset("Random", 1, [0.91, 0.93]),
    ])
    assert table.render() == GOLDEN_TABLE
    csv_lines = table.to_csv().splitlines()
    assert csv_lines[0] == "strategy,multiplicity,runs,mean_best_acc,std_best_acc,delta_vs_baseline"
    assert csv_lines[1].startswith("Baseline,1,2,0.9,") and csv_lines[1].endswith(",")


def test_results_table_needs_baseline():
    with pytest.raises(ValueError, match="Baseline"):
        results_table([runset("Random", 1, [0.5])])


def test_usage_histogram():
    counts = np.zeros((15, 5), int)
    counts[4, 4] = 3  # Rotate@L4
    counts[6, 0] = 1  # Invert@L0
    h = usage_histogram(run("Random", 1, 0.5, counts.tolist()))
    assert h.op_percent[4] == 75 and h.op_percent[6] == 25
    assert h.level_percent[4] == 75 and h.top_level_share == 75
    assert h.op_entropy == pytest.approx(-(0.75 * math.log(0.75) + 0.25 * math.log(0.25)))
    pooled = pooled_usage([run("Random", 1, 0.5, counts.tolist()), run("Random", 1, 0.5, counts.tolist())])
    np.testing.assert_allclose(pooled.op_percent, h.op_percent)
    with pytest.raises(ValueError, match="zero"):
        UsageHistogram.from_counts(np.zeros((15, 5)))


def test_entropy_bounds():
    assert entropy(np.full(15, 100 / 15)) == pytest.approx(math.log(15))
    assert entropy(np.array([100.0, 0, 0])) == 0.0


def test_pooled_standard_error():
    a, b = [1.0, 2.0, 3.0], [2.0, 4.0]
    va, vb = 1.0, 2.0
    pooled = (2 * va + 1 * vb) / 3
    assert pooled_standard_error(a, b) == pytest.approx(math.sqrt(pooled * (1 / 3 + 1 / 2)))


def test_write_report(tmp_path):
    usage = np.zeros((15, 5), int)
    usage[14, 2] = 10
    for name, rs in [("base", runset("Baseline", 1, [0.88, 0.92])), ("rand", runset("Random", 1, [0.91, 0.93]))]:
        for r in rs.results:
            r.usage = usage.tolist()
        (tmp_path / "runs" / name).mkdir(parents=True)
        (tmp_path / "runs" / name / "runset.json").write_text(rs.to_json())
    table = write_report(tmp_path / "runs", tmp_path / "out" / "table.txt")
    assert (tmp_path / "out" / "table.txt").read_text() == table.render()
    assert (tmp_path / "out" / "table.csv").is_file()
    usage_csv = (tmp_path / "out" / "usage_Random_M1.csv").read_text().splitlines()
    assert usage_csv[0] == "axis,bin,percent" and "op,Cutout,100.0" in usage_csv
    with pytest.raises(FileNotFoundError):
        write_report(tmp_path / "empty", tmp_path / "x.txt")


GOLDEN_RUNS = Path(__file__).parent / "golden" / "runs"


def test_report_on_fixture_runs_matches_golden(tmp_path):
    table = write_report(GOLDEN_RUNS, tmp_path / "a" / "table.txt")
    golden = (GOLDEN_RUNS.parent / "report_table.txt").read_text()
    assert table.render() == golden
    # pure function of the directory: a second render is byte-identical, CSVs included
    write_report(GOLDEN_RUNS, tmp_path / "b" / "table.txt")
    for name in ("table.txt", "table.csv", "usage_Random_M1.csv", "usage_TrueAdv_M1.csv", "usage_Baseline_M1.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fixture_usage_percentages():
    for rs_path in sorted(GOLDEN_RUNS.rglob("runset.json")):
        h = pooled_usage(RunSet.load(rs_path).results)
        assert abs(h.op_percent.sum() - 100) < 1e-9 and abs(h.level_percent.sum() - 100) < 1e-9
        assert 0 <= h.op_entropy <= math.log(15) and 0 <= h.level_entropy <= math.log(5)


def test_identical_runsets_zero_delta():
    table = results_table([runset("Baseline", 1, [0.8, 0.9]), runset("Random", 1, [0.8, 0.9])])
    assert table.rows[0].delta == 0.0
    only = results_table([runset("Baseline", 1, [0.8])])
    assert only.rows == [] and only.render().count("\n") == 3
