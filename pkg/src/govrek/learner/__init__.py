"""Trainers for governed environments plus exact value iteration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import InvalidInput
from .common import (
    Algorithm,
    CurvePoint,
    EvalResult,
    LearnerConfig,
    Paradigm,
    TrialResult,
    evaluate,
    joint_actions,
)
from .policy_gradient import PGPolicy, finite_difference_gradient_check, load_pg, train_policy_gradient
from .tabular import TabularPolicy, load_tabular, train_tabular
from .value_iteration import EnumerableMDP, value_iteration

__all__ = [
    "Algorithm", "CurvePoint", "EnumerableMDP", "EvalResult", "LearnerConfig", "PGPolicy",
    "Paradigm", "TabularPolicy", "TrialResult", "evaluate", "finite_difference_gradient_check",
    "joint_actions", "load_policy", "train", "value_iteration",
]


def train(env: Any, config: LearnerConfig, budget: int, resume: tuple[Any, TrialResult] | None = None):
    """Train for ``budget`` more environment steps; returns ``(policy, TrialResult)``."""
    if budget < 1:
        raise InvalidInput("budget must be >= 1")
    if config.algorithm is Algorithm.TABULAR_Q:
        return train_tabular(env, config, budget, resume)
    return train_policy_gradient(env, config, budget, resume)


def load_policy(path: str | Path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta["format"].startswith("govrek.tabular"):
            return load_tabular(data, meta)
        if meta["format"].startswith("govrek.pg"):
            return load_pg(data, meta)
    raise InvalidInput(f"unknown policy format {meta['format']!r}")
