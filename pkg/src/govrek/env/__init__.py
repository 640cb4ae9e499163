from .dilemma import (
    COOPERATE,
    DEFECT,
    DilemmaConfig,
    DilemmaEnv,
    DilemmaState,
    FlattenMode,
    PayoffProfile,
    Sparsity,
    dilemma_step,
    flatten_joint_action,
    joint_action_domain,
)
from .grid import (
    GridDeliveryEnv,
    GridEnvConfig,
    GridEnvState,
    Layout,
    Randomization,
    canonical_layout,
    layout_problems,
    reset,
)
from .paths import count_monotone_paths

__all__ = [
    "COOPERATE", "DEFECT", "DilemmaConfig", "DilemmaEnv", "DilemmaState", "FlattenMode",
    "PayoffProfile", "Sparsity", "dilemma_step", "flatten_joint_action", "joint_action_domain",
    "GridDeliveryEnv", "GridEnvConfig", "GridEnvState", "Layout", "Randomization",
    "canonical_layout", "layout_problems", "reset", "count_monotone_paths",
]
