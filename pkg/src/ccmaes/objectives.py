"""Contextual benchmark functions.

A base function ``f`` is turned into a family of objectives by shifting its
input with a fixed random linear map of the context,
``f_s(theta) = f(theta + G phi(s))``. Optimizers maximize the return
``-f_s(theta)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

ACKLEY_BOUNDS = (-32.5, 32.5)


class FunctionKind(str, enum.Enum):
    SPHERE = "sphere"
    ROSENBROCK = "rosenbrock"
    ACKLEY = "ackley"
    ELLIPSOIDAL = "ellipsoidal"
    DISCUS = "discus"
    DIFFERENT_POWERS = "diff_powers"


_NEEDS_TWO_DIMS = {FunctionKind.ROSENBROCK, FunctionKind.ELLIPSOIDAL,
                   FunctionKind.DIFFERENT_POWERS}


def sphere(x):
    return float(np.dot(x, x))


def rosenbrock(x):
    return float(np.sum(100.0 * (x[:-1] ** 2 - x[1:]) ** 2 + (x[:-1] - 1.0) ** 2))


def ackley(x):
    d = len(x)
    a = -20.0 * np.exp(-0.2 * np.sqrt(np.dot(x, x) / d))
    b = -np.exp(np.sum(np.cos(2.0 * np.pi * x)) / d)
    # clip tiny negative round-off around the optimum
    return max(0.0, float(a + 20.0 + b + np.e))


def ellipsoidal(x):
    d = len(x)
    scales = 10.0 ** (6.0 * np.arange(d) / (d - 1))
    return float(np.dot(scales, x ** 2))


def discus(x):
    return float(1e6 * x[0] ** 2 + np.dot(x[1:], x[1:]))


def different_powers(x):
    d = len(x)
    exponents = 2.0 + 4.0 * np.arange(d) / (d - 1)
    return float(np.sqrt(np.sum(np.abs(x) ** exponents)))


_FUNCTIONS: dict = {
    FunctionKind.SPHERE: sphere,
    FunctionKind.ROSENBROCK: rosenbrock,
    FunctionKind.ACKLEY: ackley,
    FunctionKind.ELLIPSOIDAL: ellipsoidal,
    FunctionKind.DISCUS: discus,
    FunctionKind.DIFFERENT_POWERS: different_powers,
}


@dataclass(frozen=True)
class BaseFunction:
    """One of the six benchmark functions in a fixed dimension."""

    kind: FunctionKind
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "kind", FunctionKind(self.kind))
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if self.kind in _NEEDS_TWO_DIMS and self.dimension < 2:
            raise ValueError(f"{self.kind.value} needs dimension >= 2")

    @property
    def optimum(self) -> np.ndarray:
        if self.kind is FunctionKind.ROSENBROCK:
            return np.ones(self.dimension)
        return np.zeros(self.dimension)

    def __call__(self, x) -> float:
        return eval_base(self, x)


def eval_base(f: BaseFunction, x) -> float:
    """Evaluate the (nonnegative) base function ``f`` at ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (f.dimension,):
        raise ValueError(
            f"expected input of shape ({f.dimension},), got {x.shape}")
    return _FUNCTIONS[f.kind](x)


def identity_features(s):
    return np.asarray(s, dtype=float)


@dataclass
class ContextualObjective:
    """Base function whose input is shifted by ``G @ phi(s)``.

    ``bounds`` (if set) clamps the shifted input component-wise before the
    base function is evaluated.
    """

    base: BaseFunction
    G: np.ndarray
    context_dim: int
    bounds: Optional[Tuple[float, float]] = None
    phi: Callable = field(default=identity_features)

    def __post_init__(self):
        self.G = np.asarray(self.G, dtype=float)
        self.G.setflags(write=False)
        if self.G.ndim != 2 or self.G.shape[0] != self.base.dimension:
            raise ValueError("G must have shape (d, dim phi(s))")

    @property
    def param_dim(self) -> int:
        return self.base.dimension

    def effective_input(self, s, theta) -> np.ndarray:
        s = np.asarray(s, dtype=float).reshape(-1)
        theta = np.asarray(theta, dtype=float)
        if s.shape != (self.context_dim,):
            raise ValueError(
                f"expected context of length {self.context_dim}, got {s.shape}")
        if theta.shape != (self.param_dim,):
            raise ValueError(
                f"expected parameters of length {self.param_dim}, got {theta.shape}")
        x = theta + self.G @ self.phi(s)
        if self.bounds is not None:
            x = np.clip(x, *self.bounds)
        return x

    def __call__(self, s, theta) -> float:
        return eval_contextual(self, s, theta)

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        return sample_context(self, rng)


def make_contextual(f: BaseFunction, n_s: int, seed: int) -> ContextualObjective:
    """Build a contextual objective with ``G`` drawn iid standard normal."""
    if n_s < 1:
        raise ValueError("n_s must be >= 1")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((f.dimension, n_s))
    bounds = ACKLEY_BOUNDS if f.kind is FunctionKind.ACKLEY else None
    return ContextualObjective(base=f, G=G, context_dim=n_s, bounds=bounds)


def eval_contextual(obj: ContextualObjective, s, theta) -> float:
    """Return ``-f(theta + G phi(s))`` (always <= 0)."""
    x = obj.effective_input(s, theta)
    return -_FUNCTIONS[obj.base.kind](x)


def sample_context(obj: ContextualObjective, rng: np.random.Generator) -> np.ndarray:
    """Draw a context with iid components uniform in [1, 2)."""
    return rng.uniform(1.0, 2.0, size=obj.context_dim)
