"""
Random versus adversarial augmentation at desk scale
====================================================

Train the small convnet on the default synthetic set with four strategies:
Cutout only (Baseline), uniformly random policies, the per-epoch loss
maximizer (TrueAdv) and the Cyclic curriculum, five seeds each. Prints the
results table, the pooled standard error of Random - TrueAdv and the usage
statistics of the policies each strategy applied.

About ten minutes on one core; set AUGARENA_THREADS=0 to run seeds on every
core. Pass an output directory to keep the runs and the report files.
"""
import sys
import time

from augarena.harness import ExperimentConfig, run_experiment
from augarena.report import pooled_standard_error, pooled_usage, results_table, write_report

out = sys.argv[1] if len(sys.argv) > 1 else None
runs = {}
for strategy in ("Baseline", "Random", "TrueAdv", "Cyclic"):
    t = time.perf_counter()
    runs[strategy] = run_experiment(ExperimentConfig(strategy=strategy), out_dir=f"{out}/{strategy}" if out else None)
    print(f"{strategy:<9} done in {time.perf_counter() - t:5.0f}s  best accuracies {runs[strategy].best_accs}")

print()
print(results_table(list(runs.values())).render())
se = pooled_standard_error(runs["Random"].best_accs, runs["TrueAdv"].best_accs)
print(f"Random - TrueAdv = {runs['Random'].mean - runs['TrueAdv'].mean:+.4f}, pooled SE {se:.4f}")

# The adversary piles onto a few strong operations; random choice spreads out.
for strategy in ("Random", "TrueAdv", "Cyclic"):
    h = pooled_usage(runs[strategy].results)
    print(f"{strategy:<8} op entropy {h.op_entropy:.3f}  level-4 share {h.top_level_share:5.1f}%  "
          f"levels {[round(p, 1) for p in h.level_percent]}")

if out:
    write_report(out, f"{out}/report/table.txt")
    print(f"report written under {out}/report")
