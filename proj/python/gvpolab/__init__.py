"""Desk-scale lab for group-based policy post-training on enumerable tasks.

The heavy lifting lives in the C++ extension module ``gvpolab._core``; this
package re-exports its public surface.
"""

from gvpolab._core import (  # noqa: F401
    CheckResult,
    Distribution,
    GroupBatch,
    OptimalPolicySolution,
    PolicyParams,
    Rng,
    TaskSpec,
    TrainOutcome,
    assemble_gradient_norm,
    dpo_weights,
    exact_gvpo_loss,
    finite_diff_grad,
    grpo_weights,
    gvpo_loss_decomposed,
    gvpo_loss_mse_form,
    gvpo_loss_nll_form,
    gvpo_weights,
    implicit_reward,
    init_uniform,
    kl,
    log_partition,
    make_bandit,
    make_sequence_task,
    optimal_policy,
    run_check,
    sft_weights,
    train_from_config,
)

__all__ = [
    "CheckResult",
    "Distribution",
    "GroupBatch",
    "OptimalPolicySolution",
    "PolicyParams",
    "Rng",
    "TaskSpec",
    "TrainOutcome",
    "assemble_gradient_norm",
    "dpo_weights",
    "exact_gvpo_loss",
    "finite_diff_grad",
    "grpo_weights",
    "gvpo_loss_decomposed",
    "gvpo_loss_mse_form",
    "gvpo_loss_nll_form",
    "gvpo_weights",
    "implicit_reward",
    "init_uniform",
    "kl",
    "log_partition",
    "make_bandit",
    "make_sequence_task",
    "optimal_policy",
    "run_check",
    "sft_weights",
    "train_from_config",
]
