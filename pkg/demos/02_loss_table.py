"""
Which policies hurt a trained model most?
=========================================

Train a small convnet for a few epochs without augmentation, then score
500 random policies by the mean training loss they induce. The top of that
ranking is what an adversarial selector would apply; the bottom half is the
pool that curricula draw their "easy" policies from.
"""
import numpy as np

from augarena import policyspace as ps
from augarena.harness import ExperimentConfig, desk_hyperparams, gen_synthetic, train_run
from augarena.imgkernels import OpKind
from augarena.model import load_checkpoint
from augarena.selector import easiest_half, eval_loss_table, rank_policies

data = gen_synthetic()
config = ExperimentConfig(strategy="Baseline", hyperparams=desk_hyperparams(total_epochs=4), seeds=[0])
result = train_run(config, 0, data, out_dir="demo_run")
print(f"clean model: best test accuracy {result.best_test_acc:.3f}")

params, normalizer = load_checkpoint("demo_run/checkpoint.ckpt")
policies = ps.sample_subset(np.random.default_rng(0), 500)
sample = np.random.default_rng(1).choice(len(data.train_labels), 128, replace=False)
table = eval_loss_table(params, data.train_images[sample], data.train_labels[sample], policies, normalizer)

ranked = rank_policies(table)
loss_of = dict(zip(table.policy_ids.tolist(), table.mean_losses.tolist()))
print("\nhardest policies:")
for pid in ranked[:8]:
    print(f"  {ps.policy_text(pid):<32} {loss_of[int(pid)]:.3f}")
print("easiest policies:")
for pid in ranked[-5:]:
    print(f"  {ps.policy_text(pid):<32} {loss_of[int(pid)]:.3f}")

# How strong are the hard policies? Count magnitude levels in the top 50
# against the easiest half.
def level_share(ids):
    _, m1, _, m2 = ps.components(ids)
    return np.bincount(np.concatenate([m1, m2]), minlength=5) / (2 * len(ids))

print("\nlevel share, top 50:   ", np.round(level_share(ranked[:50]), 2))
print("level share, easy half:", np.round(level_share(easiest_half(table)), 2))

k1, _, k2, _ = ps.components(ranked[:50])
top_ops = np.bincount(np.concatenate([k1, k2]), minlength=len(OpKind))
print("most frequent ops in top 50:", [OpKind(i).name for i in np.argsort(-top_ops)[:4]])
