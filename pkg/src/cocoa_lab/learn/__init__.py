"""Learned models: hindsight classifiers, contrastive ratios, successor features, critics, reward features."""
from .contrastive import TabularContrastive, contrastive_ratio
from .critics import TdCritic, lambda_returns, td_lambda_update
from .features import FeatureCollisionWarning, FeatureConfig, FeatureResult, collision_report, reward_feature_pipeline
from .hindsight import HypernetHindsight, TabularHindsight, coefficients_from_hindsight, hindsight_pairs
from .returns import ReturnBins, TabularReturnHindsight, exact_return_model
from .successor import SuccessorLearner, outcome_emission, sr_coefficients, sr_update

__all__ = [
    "FeatureCollisionWarning", "FeatureConfig", "FeatureResult", "HypernetHindsight", "ReturnBins",
    "SuccessorLearner", "TabularContrastive", "TabularHindsight", "TabularReturnHindsight", "TdCritic",
    "coefficients_from_hindsight", "collision_report", "contrastive_ratio", "exact_return_model",
    "hindsight_pairs", "lambda_returns", "outcome_emission", "reward_feature_pipeline", "sr_coefficients",
    "sr_update", "td_lambda_update",
]
