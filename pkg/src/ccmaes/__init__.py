"""Contextual CMA-ES with optional ranking-SVM surrogate."""
from .dmp_env import DMP, ViapointProblem, rollout_dmp, viapoint_return
from .harness import ExperimentConfig, run_experiment
from .objectives import BaseFunction, ContextualObjective, FunctionKind, make_contextual
from .optimizer import (ContextualCMAES, NumericalDegeneracyError, NumericalDivergenceError,
                        SearchDistribution, default_hyperparameters)
from .surrogate import ContextualACMES, SurrogateConfig

__all__ = [
    "BaseFunction", "ContextualACMES", "ContextualCMAES", "ContextualObjective", "DMP",
    "ExperimentConfig", "FunctionKind", "NumericalDegeneracyError", "NumericalDivergenceError",
    "SearchDistribution", "SurrogateConfig", "ViapointProblem", "default_hyperparameters",
    "make_contextual", "rollout_dmp", "run_experiment", "viapoint_return",
]
