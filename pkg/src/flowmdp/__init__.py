"""Planning under uncertain flow fields on a spatio-temporal grid.

The package turns a reduced-order stochastic velocity field into a sparse
finite-horizon decision model by ensemble counting, solves it by value
iteration, and evaluates the resulting policy by trajectory rollout, with
brute-force reference implementations for verification.
"""

__version__ = "0.1.0"

from .environment import (
    OUTSIDE,
    ActionSpace,
    DOVelocityField,
    Environment,
    GridSpec,
    ObstacleMask,
    ScalarMeanField,
    cell_of,
    reconstruct_velocity,
    segment_blocked,
    storage_footprint,
)
from .errors import (
    ConfigError,
    ContractViolation,
    FlowMdpError,
    InputOutputError,
    VerificationFailure,
)
from .model_builder import (
    RewardConfig,
    SparseModel,
    StepContext,
    SubGridSpec,
    build_model,
    compute_subgrid,
)
from .rollout import TrajectoryEnsemble, ensemble_rollout
from .solver import PolicyValue, SolverConfig, policy_value, value_iteration
from .synthesis import generate_double_gyre, reduce_order

__all__ = [
    "__version__",
    "OUTSIDE",
    "ActionSpace",
    "DOVelocityField",
    "Environment",
    "GridSpec",
    "ObstacleMask",
    "ScalarMeanField",
    "cell_of",
    "reconstruct_velocity",
    "segment_blocked",
    "storage_footprint",
    "ConfigError",
    "ContractViolation",
    "FlowMdpError",
    "InputOutputError",
    "VerificationFailure",
    "RewardConfig",
    "SparseModel",
    "StepContext",
    "SubGridSpec",
    "build_model",
    "compute_subgrid",
    "TrajectoryEnsemble",
    "ensemble_rollout",
    "PolicyValue",
    "SolverConfig",
    "policy_value",
    "value_iteration",
    "generate_double_gyre",
    "reduce_order",
]
