"""Score-based generative classifiers on vector data."""

from .classifier import ClassificationResult, classify, class_log_likelihoods, posterior
from .data import AnalyticGaussianScore, LabeledDataset, gen_two_gaussians, gen_two_moons
from .likelihood import LikelihoodConfig, log_likelihood
from .metrics import roc_auc
from .score_model import LinearScore, MlpScoreNet, ScoreFunction
from .sde import Family, SdeSpec
from .training import TrainConfig, train

__all__ = [
    "AnalyticGaussianScore", "ClassificationResult", "Family", "LabeledDataset", "LikelihoodConfig",
    "LinearScore", "MlpScoreNet", "ScoreFunction", "SdeSpec", "TrainConfig", "class_log_likelihoods",
    "classify", "gen_two_gaussians", "gen_two_moons", "log_likelihood", "posterior", "roc_auc", "train",
]
