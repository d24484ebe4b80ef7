"""Constrained CP tensor factorization via ADMM.

Dense/sparse tensor algebra (unfoldings, Khatri-Rao, MTTKRP), pluggable
constraint projections, a centralized ADMM solver with residual-based
stopping and adaptive penalties, a block-parallel engine simulated on an
N x N mesh, and a synthetic benchmark harness with a CLI.
"""

from .bench import ExperimentSpec, RunRecord, als_baseline, factor_match_error, generate, run_experiment
from .blocks import BlockGrid, PartitionPlan, block_factor_update, partition, reduce_partials
from .constraints import ConstraintSpec, is_feasible, project
from .mesh import MeshProtocolError, distributed_fit, expected_messages_per_iteration
from .solver import (
    FitResult,
    InvalidPenaltyError,
    KktResiduals,
    Residuals,
    SolverConfig,
    SolverState,
    adapt_penalties,
    aux_update,
    check_stop,
    dual_update,
    factor_update,
    fit,
    init_state,
    iterate,
    kkt_residuals,
    residuals,
)
from .tensors import (
    CooTensor,
    DenseTensor,
    KruskalModel,
    fold,
    gram_hadamard,
    khatri_rao,
    mttkrp,
    reconstruct,
    rfe,
    unfold,
)

__version__ = "0.1.0"

__all__ = [
    "BlockGrid",
    "ConstraintSpec",
    "CooTensor",
    "DenseTensor",
    "ExperimentSpec",
    "FitResult",
    "InvalidPenaltyError",
    "KktResiduals",
    "KruskalModel",
    "MeshProtocolError",
    "PartitionPlan",
    "Residuals",
    "RunRecord",
    "SolverConfig",
    "SolverState",
    "adapt_penalties",
    "als_baseline",
    "aux_update",
    "block_factor_update",
    "check_stop",
    "distributed_fit",
    "dual_update",
    "expected_messages_per_iteration",
    "factor_match_error",
    "factor_update",
    "fit",
    "fold",
    "generate",
    "gram_hadamard",
    "init_state",
    "is_feasible",
    "iterate",
    "khatri_rao",
    "kkt_residuals",
    "mttkrp",
    "partition",
    "project",
    "reconstruct",
    "reduce_partials",
    "residuals",
    "rfe",
    "run_experiment",
    "unfold",
]
