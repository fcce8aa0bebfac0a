"""Latent-representation network models for interaction counts."""
from .model_core import CountMatrix, Hyperparams, LatentState, PriorKind, softplus
from .likelihood import SmoothingScheme, data_log_likelihood, dcm_log_prob
from .sampler import ChainConfig, InitSchedule, Sample, run_chain

__version__ = "0.1.0"
