"""Switching one-vs-the-rest adversarial training on a small numpy MLP."""

from .attacks import AttackConfig, AttackResult, fgsm, kl_pgd, least_flip_step, pgd, worst_case_eval
from .data import Dataset, gen_synthetic, load_idx
from .errors import ConfigError, DomainError, IdxFormatError, NumericalError
from .flow import lambert_w, lambert_w_exp, lm_trajectory_approx, lm_trajectory_exact, margin_ratio
from .losses import ce_loss, kl_divergence, lm_loss, ovr_loss, select_top_m, slm_loss, sovr_batch_loss
from .report import certify_brute_force, margin_histogram, mean_lm, potentially_misclassified_rate
from .tensor_net import Network, backward, forward, init_network, sgd_step
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig",
    "AttackResult",
    "fgsm",
    "kl_pgd",
    "least_flip_step",
    "pgd",
    "worst_case_eval",
    "Dataset",
    "gen_synthetic",
    "load_idx",
    "ConfigError",
    "DomainError",
    "IdxFormatError",
    "NumericalError",
    "lambert_w",
    "lambert_w_exp",
    "lm_trajectory_approx",
    "lm_trajectory_exact",
    "margin_ratio",
    "ce_loss",
    "kl_divergence",
    "lm_loss",
    "ovr_loss",
    "select_top_m",
    "slm_loss",
    "sovr_batch_loss",
    "certify_brute_force",
    "margin_histogram",
    "mean_lm",
    "potentially_misclassified_rate",
    "Network",
    "backward",
    "forward",
    "init_network",
    "sgd_step",
    "TrainConfig",
    "train",
]
