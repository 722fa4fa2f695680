"""Stein-network integration: neural integrands with an exact integral read-out,
a GGN-Laplace posterior on that read-out, and MC/BQ/control-functional baselines."""

from .genz import GenzFamily, GenzSpec, TransformedIntegrand, ground_truth
from .harness import RunConfig, RunRecord, run_once, run_suite
from .laplace import LaplacePosterior, laplace_posterior
from .net import Activation, MlpNetwork
from .stein import DiffusionChoice, DiffusionKind, SteinModel
from .targets import GaussianMixture, IsotropicGaussian, TruncatedGaussian1D, mala_sample
from .train import LbfgsConfig, TrainingSet, lbfgs_fit

__version__ = "0.1.0"

__all__ = [
    "Activation", "DiffusionChoice", "DiffusionKind", "GaussianMixture", "GenzFamily", "GenzSpec",
    "IsotropicGaussian", "LaplacePosterior", "LbfgsConfig", "MlpNetwork", "RunConfig", "RunRecord",
    "SteinModel", "TrainingSet", "TransformedIntegrand", "TruncatedGaussian1D", "ground_truth",
    "laplace_posterior", "lbfgs_fit", "mala_sample", "run_once", "run_suite",
]
