"""Adversarial and curriculum augmentation-policy experiments at desk scale."""
from .imgkernels import OpKind, StochasticParams, apply_op, apply_policy, magnitude_value
from .policyspace import AugOp, Policy, decode, encode, enumerate_all, sample_subset, sample_uniform
from .selector import LossTable, StrategyKind, eval_loss_table, rank_policies, trueadv_select
from .harness import ExperimentConfig, RunResult, RunSet, gen_synthetic, load_cifar10, run_experiment, train_run

__version__ = "0.1.0"

__all__ = [
    "OpKind", "StochasticParams", "apply_op", "apply_policy", "magnitude_value",
    "AugOp", "Policy", "decode", "encode", "enumerate_all", "sample_subset", "sample_uniform",
    "LossTable", "StrategyKind", "eval_loss_table", "rank_policies", "trueadv_select",
    "ExperimentConfig", "RunResult", "RunSet", "gen_synthetic", "load_cifar10", "run_experiment", "train_run",
]
