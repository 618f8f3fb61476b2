"""Dynamical physics-modeled neural networks.

Hidden layers are the time-``t`` state of an ODE flow (FitzHugh-Nagumo by
default) started from an affine image of the input, integrated by an unrolled
explicit Euler block and trained end to end by reverse-mode differentiation.
"""

from .data import Dataset, RawTable, Standardizer, load_csv, split, synthetic_dataset
from .dynamics import FhnParams, FitzHughNagumo, IntegrationGrid, euler_step, integrate, reference_solve
from .estimators import MLPBaselineRegressor, NODERegressor, PMNNRegressor
from .model import MLPConfig, NODEConfig, PMNNConfig, init_params, param_count, pmnn_forward
from .train import TrainConfig, evaluate, grid_search, train

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FhnParams",
    "FitzHughNagumo",
    "IntegrationGrid",
    "MLPBaselineRegressor",
    "MLPConfig",
    "NODEConfig",
    "NODERegressor",
    "PMNNConfig",
    "PMNNRegressor",
    "RawTable",
    "Standardizer",
    "TrainConfig",
    "euler_step",
    "evaluate",
    "grid_search",
    "init_params",
    "integrate",
    "load_csv",
    "param_count",
    "pmnn_forward",
    "reference_solve",
    "split",
    "synthetic_dataset",
    "train",
]
