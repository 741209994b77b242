"""Bayesian inference for the hidden Potts model by SMC-ABC with a precomputed binding function."""
from .lattice import FormatError, LabelImage, Lattice, ObservedImage, critical_beta, sufficient_statistic
from .binding import BindingTable, GridSpec, build_table, load_table, save_table, smooth_table
from .smc import ModelGenerator, SMCConfig, SyntheticGenerator, UniformPrior
from .hidden import NoisePriors, fit_hidden_potts
from .exchange import ExchangeConfig, run_exchange, run_exchange_hidden

__version__ = "0.1.0"

__all__ = [
    "BindingTable",
    "ExchangeConfig",
    "FormatError",
    "GridSpec",
    "LabelImage",
    "Lattice",
    "ModelGenerator",
    "NoisePriors",
    "ObservedImage",
    "SMCConfig",
    "SyntheticGenerator",
    "UniformPrior",
    "build_table",
    "critical_beta",
    "fit_hidden_potts",
    "load_table",
    "run_exchange",
    "run_exchange_hidden",
    "save_table",
    "smooth_table",
    "sufficient_statistic",
]
