"""Adversarial attacks on mixed-type tabular data.

M-Attack perturbs numeric features inside an l1 budget and categorical
features through per-feature categorical distributions, with an optional
Mahalanobis penalty that keeps adversarial rows near the clean data.
"""
# the raw-sample entry point stays at mixattack.attack.attack so the submodule
# name is not shadowed
from .attack import AttackConfig, AttackResult, attack_encoded
from .baselines import BaselineConfig, greedy_attack, l1_pgd, search_attack
from .data import (MixedDataset, MixedSample, MixedSchema, generate_synthetic, load_csv,
                   load_schema)
from .errors import DataError, MixAttackError, NumericError, UsageError
from .mahalanobis import GeneralizedCovariance, fit_covariance, m_distance

__all__ = [
    "AttackConfig", "AttackResult", "attack_encoded",
    "BaselineConfig", "greedy_attack", "l1_pgd", "search_attack",
    "MixedDataset", "MixedSample", "MixedSchema", "generate_synthetic", "load_csv", "load_schema",
    "DataError", "MixAttackError", "NumericError", "UsageError",
    "GeneralizedCovariance", "fit_covariance", "m_distance",
]
__version__ = "0.1.0"
