"""Deterministic per-channel unitary dictionary learning for cell images."""

from .dictlearn import (
    LearnConfig,
    LearnReport,
    init_dictionary,
    lambda_schedule,
    procrustes_update,
    relative_error,
    train_channel,
    unitarity_error,
)
from .multichannel import (
    BSCCM_CHANNELS,
    CellRecord,
    UnifiedDescriptor,
    build_descriptor,
    rank_atoms,
    train_multichannel,
)
from .pdhg import DivergenceError, PdhgParams, PdhgReport, energy, solve
from .synth import SyntheticDataset, generate_synthetic
from .validate import ClusterConfig, ValidationReport, run_validation

__all__ = [
    "BSCCM_CHANNELS",
    "CellRecord",
    "ClusterConfig",
    "DivergenceError",
    "LearnConfig",
    "LearnReport",
    "PdhgParams",
    "PdhgReport",
    "SyntheticDataset",
    "UnifiedDescriptor",
    "ValidationReport",
    "build_descriptor",
    "energy",
    "generate_synthetic",
    "init_dictionary",
    "lambda_schedule",
    "procrustes_update",
    "rank_atoms",
    "relative_error",
    "run_validation",
    "solve",
    "train_channel",
    "train_multichannel",
    "unitarity_error",
]

__version__ = "0.1.0"
