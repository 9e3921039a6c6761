"""Deterministic federated-learning simulator and optimization library.

The server-side optimizer reconstructs a rank-1 approximation of the global
Hessian from its first row, smooths gradient and curvature with
bias-corrected moving averages, and takes the regularized Newton step in
closed form via the Sherman-Morrison identity. FedAvg, SCAFFOLD, and FedExP
baselines, two non-IID partitioners, and a rounds-to-target harness share
the same deterministic round machinery.
"""

__version__ = "0.1.0"

from .config import ConfigError, ExperimentConfig, parse_config, serialize_config
from .data import (
    DataPartition,
    Dataset,
    dirichlet_partition,
    load_idx,
    partition_stats,
    shard_partition,
    synth_classification,
)
from .fedcore import (
    ClientReport,
    FaghServerState,
    ModelDelta,
    RoundPlan,
    ScaffoldState,
    run_experiment,
    run_round,
)
from .metrics import RoundRecord, evaluate_global, rounds_to_target, write_csv
from .models import Batch, ModelSpec
from .numkit import MomentState, dense_solve_oracle, rank1_regularized_solve

__all__ = [
    "Batch",
    "ClientReport",
    "ConfigError",
    "DataPartition",
    "Dataset",
    "ExperimentConfig",
    "FaghServerState",
    "ModelDelta",
    "ModelSpec",
    "MomentState",
    "RoundPlan",
    "RoundRecord",
    "ScaffoldState",
    "dense_solve_oracle",
    "dirichlet_partition",
    "evaluate_global",
    "load_idx",
    "parse_config",
    "partition_stats",
    "rank1_regularized_solve",
    "rounds_to_target",
    "run_experiment",
    "run_round",
    "serialize_config",
    "shard_partition",
    "synth_classification",
    "write_csv",
]
