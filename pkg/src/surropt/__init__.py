"""Optimize black-box classification metrics through a profile of convex surrogates."""

from .data import Dataset, SplitSpec, generate_simulated, load_csv, split
from .gradest import PerturbationConfig, fd_estimate, interp_estimate, two_step_fd_estimate
from .metrics import parse_metric
from .model import ModelParams, predict, score
from .numerics import RandomStream
from .optimizer import PgdConfig, surrogate_pgd
from .surrogates import SurrogateSpec

__all__ = [
    "Dataset", "SplitSpec", "generate_simulated", "load_csv", "split",
    "PerturbationConfig", "fd_estimate", "interp_estimate", "two_step_fd_estimate",
    "parse_metric", "ModelParams", "predict", "score", "RandomStream", "PgdConfig", "surrogate_pgd", "SurrogateSpec",
]
__version__ = "0.1.0"
