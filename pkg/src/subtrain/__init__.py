"""Trajectory-subspace training toolkit.

Record the parameter trajectory of a small network under first-order
training, extract a low-dimensional orthonormal basis from it, and retrain
from the same initialization inside that subspace with projected SGD or a
projected quasi-Newton method.
"""

from .config import ExperimentConfig, load_config
from .data import Dataset, batches, corrupt_labels, load_idx, synthetic_blobs
from .model import ModelSpec, backward, forward, init_params, param_count
from .optim import (LineSearchConfig, PBfgsState, SgdState, bfgs_update, line_search,
                    newton_direction, pbfgs_step, psgd_step, sgd_step)
from .subspace import SubspaceBasis, center, explained_variance, extract_basis
from .trajectory import SamplingSchedule, TrajectoryStore, due

__all__ = [
    "Dataset", "ExperimentConfig", "LineSearchConfig", "ModelSpec", "PBfgsState",
    "SamplingSchedule", "SgdState", "SubspaceBasis", "TrajectoryStore",
    "backward", "batches", "bfgs_update", "center", "corrupt_labels", "due",
    "explained_variance", "extract_basis", "forward", "init_params", "line_search",
    "load_config", "load_idx", "newton_direction", "param_count", "pbfgs_step",
    "psgd_step", "sgd_step", "synthetic_blobs",
]
