"""Sparse topology distance (NNSTD) and sparse evolutionary training for MLPs."""

from .metric import DistanceReport, compare_layers, compare_networks, ned, nnstd, pairwise_matrix
from .network import SparseNet, TrainConfig, init_weights
from .settrain import Mode, RetrainMode, SetConfig, prune_and_regrow, retrain, train
from .topology import ErConfig, LayerTopology, NetworkTopology, er_init, perturb, perturbation_chain

__version__ = "0.1.0"

__all__ = [
    "DistanceReport",
    "ErConfig",
    "LayerTopology",
    "Mode",
    "NetworkTopology",
    "RetrainMode",
    "SetConfig",
    "SparseNet",
    "TrainConfig",
    "compare_layers",
    "compare_networks",
    "er_init",
    "init_weights",
    "ned",
    "nnstd",
    "pairwise_matrix",
    "perturb",
    "perturbation_chain",
    "prune_and_regrow",
    "retrain",
    "train",
]
