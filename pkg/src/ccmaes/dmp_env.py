"""2D viapoint task with a dynamical movement primitive.

The movement goes from (0, 0) to (1, 1) in one second and should pass a
fixed viapoint at t = 0.2 and a context-dependent viapoint ``s`` at t = 0.5.
The 20 policy parameters are the forcing-term weights (10 per dimension).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from numba import njit

from .optimizer import affine_features, quadratic_features

CONTEXT_LOW, CONTEXT_HIGH = 0.3, 0.7
GRID_VALUES = (0.3, 0.4, 0.5, 0.6, 0.7)
FIXED_VIAPOINT = (0.2, np.array([0.2, 0.5]))
CONTEXT_VIAPOINT_TIME = 0.5
VELOCITY_COST = 0.001
VIAPOINT_SIGMA0 = 0.05


class Trajectory(NamedTuple):
    times: np.ndarray        # (T,)
    positions: np.ndarray    # (T, 2)
    velocities: np.ndarray   # (T, 2)


@dataclass(frozen=True)
class DMP:
    """Discrete movement primitive, one transformation system per dimension.

    ``tau^2 y'' = alpha_y (beta_y (g - y) - tau y') + f(z)`` with phase
    ``tau z' = -alpha_z z`` and forcing
    ``f(z) = sum_i psi_i(z) w_i / sum_i psi_i(z) * z * (g - x0)``.
    Integrated with semi-implicit Euler at step ``dt``.
    """

    x0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    goal: np.ndarray = field(default_factory=lambda: np.ones(2))
    tau: float = 1.0
    dt: float = 0.01
    n_weights: int = 10
    alpha_y: float = 25.0
    beta_y: float = 25.0 / 4.0
    alpha_z: float = -math.log(0.01)

    @property
    def n_steps(self) -> int:
        return math.ceil(round(self.tau / self.dt, 9)) + 1

    @property
    def n_params(self) -> int:
        return self.n_weights * len(self.x0)

    @property
    def centers(self) -> np.ndarray:
        # equally spaced in phase between z(0) = 1 and z(tau)
        return np.linspace(1.0, math.exp(-self.alpha_z), self.n_weights)

    @property
    def widths(self) -> np.ndarray:
        # neighbouring basis functions cross at 0.5
        gaps = np.abs(np.diff(self.centers))
        gaps = np.append(gaps, gaps[-1])
        return 4.0 * math.log(2.0) / gaps ** 2

    def phase(self, times) -> np.ndarray:
        return np.exp(-self.alpha_z * np.asarray(times) / self.tau)

    def basis(self, z) -> np.ndarray:
        """Normalized activations scaled by the phase, shape (len(z), n_weights)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))[:, None]
        psi = np.exp(-self.widths * (z - self.centers) ** 2)
        return psi / psi.sum(axis=1, keepdims=True) * z

    def forcing(self, z: float, weights: np.ndarray) -> np.ndarray:
        """Forcing term at phase ``z``; ``weights`` has shape (dims, n_weights)."""
        return weights @ self.basis(z)[0] * (self.goal - self.x0)

    @cached_property
    def _step_basis(self) -> np.ndarray:
        times = np.arange(self.n_steps - 1) * self.dt
        return self.basis(self.phase(times))


def rollout_dmp(dmp: DMP, theta) -> Trajectory:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (dmp.n_params,):
        raise ValueError(f"expected {dmp.n_params} weights, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("weights must be finite")
    weights = theta.reshape(len(dmp.x0), dmp.n_weights)

    T = dmp.n_steps
    goal = np.asarray(dmp.goal, dtype=float)
    forcing = dmp._step_basis @ weights.T * (goal - dmp.x0)     # (T - 1, dims)
    positions = np.empty((T, len(dmp.x0)))
    velocities = np.empty_like(positions)
    positions[0], velocities[0] = dmp.x0, 0.0
    _integrate(positions, velocities, forcing, goal, dmp.alpha_y, dmp.beta_y, dmp.tau, dmp.dt)
    return Trajectory(np.arange(T) * dmp.dt, positions, velocities)


@njit(cache=True)
def _integrate(positions, velocities, forcing, goal, alpha_y, beta_y, tau, dt):
    # semi-implicit Euler: velocity first, then position with the new velocity
    tau2 = tau * tau
    for k in range(forcing.shape[0]):
        for d in range(positions.shape[1]):
            y, v = positions[k, d], velocities[k, d]
            acc = (alpha_y * (beta_y * (goal[d] - y) - tau * v) + forcing[k, d]) / tau2
            v = v + dt * acc
            velocities[k + 1, d] = v
            positions[k + 1, d] = y + dt * v


def _index_at(traj: Trajectory, t: float) -> int:
    return int(np.argmin(np.abs(traj.times - t)))


def viapoint_return(traj: Trajectory, s, tau: float = 1.0) -> float:
    """Velocity penalty over all steps minus the distance to both viapoints."""
    s = np.asarray(s, dtype=float)
    velocity_cost = -VELOCITY_COST * np.linalg.norm(traj.velocities, axis=1).sum()
    t_fixed, p_fixed = FIXED_VIAPOINT
    miss_fixed = np.linalg.norm(p_fixed - traj.positions[_index_at(traj, t_fixed * tau)])
    miss_context = np.linalg.norm(
        s - traj.positions[_index_at(traj, CONTEXT_VIAPOINT_TIME * tau)])
    return float(velocity_cost - miss_fixed - miss_context)


def test_context_grid() -> np.ndarray:
    """The 25 evaluation contexts, row-major over the grid values."""
    return np.array([(a, b) for a in GRID_VALUES for b in GRID_VALUES])


# keep pytest from collecting the grid helper when imported into test modules
test_context_grid.__test__ = False


def sample_training_context(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(CONTEXT_LOW, CONTEXT_HIGH, size=2)


class ViapointProblem:
    """Callable ``(s, theta) -> return`` for the viapoint task."""

    context_dim = 2
    policy_features = staticmethod(affine_features)
    baseline_features = staticmethod(quadratic_features)
    sigma0 = VIAPOINT_SIGMA0

    def __init__(self, dmp: DMP | None = None):
        self.dmp = DMP() if dmp is None else dmp

    @property
    def param_dim(self) -> int:
        return self.dmp.n_params

    def __call__(self, s, theta) -> float:
        return viapoint_return(rollout_dmp(self.dmp, theta), s, self.dmp.tau)

    def sample_context(self, rng: np.random.Generator) -> np.ndarray:
        return sample_training_context(rng)
