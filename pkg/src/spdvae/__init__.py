"""Riemannian geometry-preserving VAE for augmenting SPD covariance data."""
from .errors import DegenerateTest, InvalidInput, NonConvergence, NumericalFailure, SpdVaeError
from .manifold import ReferencePoint, airm_distance, exp_map, frechet_mean, log_map, parallel_transport
from .preprocess import CovarianceDataset, oas_covariance, preprocess_pipeline
from .vae import RgpVae, TrainConfig, VaeConfig, train

__version__ = "0.1.0"

__all__ = [
    "CovarianceDataset", "DegenerateTest", "InvalidInput", "NonConvergence", "NumericalFailure",
    "ReferencePoint", "RgpVae", "SpdVaeError", "TrainConfig", "VaeConfig", "airm_distance",
    "exp_map", "frechet_mean", "log_map", "oas_covariance", "parallel_transport",
    "preprocess_pipeline", "train",
]
