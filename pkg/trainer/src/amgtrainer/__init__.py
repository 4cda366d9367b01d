"""Training side of the multigrid correction network.

Consumes training-sample directories exported by the solver, trains the
correction network by backpropagating through one augmented V-cycle, and
writes weight directories the solver loads directly.
"""
from .cycle import error_cycle, relative_loss
from .formats import read_sample, read_weights, scan_dataset, write_weights
from .model import (CorrectionNet, load_numpy_weights, numpy_weights,
                    sample_tensors)
from .train import TrainConfig, TrainResult, train

__all__ = [
    "CorrectionNet", "TrainConfig", "TrainResult", "error_cycle",
    "load_numpy_weights", "numpy_weights", "read_sample", "read_weights",
    "relative_loss", "sample_tensors", "scan_dataset", "train",
    "write_weights",
]
