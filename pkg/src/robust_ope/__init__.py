"""Off-policy evaluation for contextual bandits that stays reliable under
policy and covariate shift, built around a density-ratio-aware robust
Gaussian reward model."""

from .core import BanditDataset, FeatureMap, LoggedSample, StochasticPolicy, load_classification_csv, standardize
from .estimators import (
    PolicyValueEstimate,
    RewardFn,
    build_suite,
    estimate_dm,
    estimate_dr,
    estimate_ips,
    estimate_snips,
    estimate_sndr,
)
from .ratio_models import RatioModel, fit_context_ratio, fit_propensity, ips_weight, ratio_w
from .robust_reward import BaseDistribution, RobustParams, RobustRewardModel, TrainConfig, batch_gradient, predict, train

__all__ = [
    "BanditDataset", "FeatureMap", "LoggedSample", "StochasticPolicy", "load_classification_csv",
    "standardize", "PolicyValueEstimate", "RewardFn", "build_suite", "estimate_dm", "estimate_dr",
    "estimate_ips", "estimate_snips", "estimate_sndr", "RatioModel", "fit_context_ratio",
    "fit_propensity", "ips_weight", "ratio_w", "BaseDistribution", "RobustParams",
    "RobustRewardModel", "TrainConfig", "batch_gradient", "predict", "train",
]
