"""Comparison-based surrogate for contextual CMA-ES (C-ACM-ES).

A ranking SVM with an RBF kernel is trained on the most recent real
evaluations, ordered by their advantage under the current baseline. Inputs
are made relative to the current search distribution: contexts are
z-scored per component and parameters are whitened by the distribution's
mean and covariance. Once enough real evaluations have been seen, each
update is computed from ``lambda'`` samples: the ``lambda`` real ones plus
virtual samples drawn from the current distribution, all ranked by the
surrogate.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numba import njit
from scipy.spatial.distance import cdist, pdist

from .optimizer import (ContextualCMAES, GenerationBatch, NumericalDegeneracyError,
                        SearchDistribution, compute_advantages, default_hyperparameters,
                        feature_matrix, matrix_inv_sqrt, recombination_weights,
                        sample_parameters, sort_by_advantage,
                        update_distribution)

COST_SCALE = 1e6


def archive_capacity(d: int) -> int:
    """Number of recent samples kept for training: ``40 + floor(4 d^1.7)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return 40 + math.floor(4.0 * d ** 1.7)


class Archive:
    """FIFO store of real evaluations ``(s, theta, R)``."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: deque = deque(maxlen=capacity)
        self.real_eval_count = 0

    @classmethod
    def for_dimension(cls, d: int) -> "Archive":
        return cls(archive_capacity(d))

    def add(self, s, theta, ret) -> None:
        self.entries.append((np.array(s, dtype=float).reshape(-1),
                             np.array(theta, dtype=float), float(ret)))
        self.real_eval_count += 1

    def extend(self, contexts, thetas, returns) -> None:
        for s, theta, ret in zip(contexts, thetas, returns):
            self.add(s, theta, ret)

    def __len__(self):
        return len(self.entries)

    @property
    def contexts(self) -> np.ndarray:
        return np.array([e[0] for e in self.entries])

    @property
    def thetas(self) -> np.ndarray:
        return np.array([e[1] for e in self.entries])

    @property
    def returns(self) -> np.ndarray:
        return np.array([e[2] for e in self.entries])


@dataclass(frozen=True)
class SurrogateConfig:
    lambda_prime: int
    n_start: float = 100
    c_pow: float = 1.0
    n_iter: int = 1000

    def __post_init__(self):
        if self.n_start < 0 or self.c_pow <= 0 or self.n_iter < 1:
            raise ValueError("need n_start >= 0, c_pow > 0, n_iter >= 1")

    @classmethod
    def conservative(cls, lam: int, **kwargs) -> "SurrogateConfig":
        return cls(lambda_prime=3 * lam, n_start=kwargs.pop("n_start", 3000), **kwargs)

    @classmethod
    def aggressive(cls, lam: int, **kwargs) -> "SurrogateConfig":
        return cls(lambda_prime=10 * lam, n_start=kwargs.pop("n_start", 100), **kwargs)


# -- normalization ----------------------------------------------------------------

@dataclass(frozen=True)
class ContextStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, contexts) -> "ContextStats":
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        std = contexts.std(axis=0)
        # constant components are only centered
        std = np.where(std > 0.0, std, 1.0)
        return cls(contexts.mean(axis=0), std)

    def apply(self, contexts) -> np.ndarray:
        return (np.asarray(contexts, dtype=float) - self.mean) / self.std


def normalize_samples(dist: SearchDistribution, stats: ContextStats, contexts, thetas,
                      phi, inv_sqrt: Optional[np.ndarray] = None) -> np.ndarray:
    """Rows ``[(s - mean) / std, Sigma^-1/2 (theta - W^T phi(s)) / sigma]``."""
    contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if inv_sqrt is None:
        inv_sqrt = matrix_inv_sqrt(dist.cov)
    deviations = thetas - feature_matrix(phi, contexts) @ dist.W
    whitened = deviations @ inv_sqrt / dist.sigma   # inv_sqrt is symmetric
    return np.hstack([stats.apply(contexts), whitened])


def normalize_sample(dist, stats, s, theta, phi) -> np.ndarray:
    return normalize_samples(dist, stats, [s], [theta], phi)[0]


# -- ranking SVM ------------------------------------------------------------------

def kernel_width(features) -> float:
    """Mean Euclidean distance over all unordered pairs of ``features``."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if len(features) < 2:
        raise ValueError("need at least two features")
    width = float(np.mean(pdist(features)))
    if not width > 0.0:
        raise NumericalDegeneracyError("all training features are identical")
    return width


def rank_costs(N: int, c_pow: float) -> np.ndarray:
    """``C_i = 1e6 (N - i)^c_pow`` for the adjacent pairs ``i = 1..N-1``."""
    if N < 2:
        raise ValueError("need N >= 2")
    return COST_SCALE * np.arange(N - 1, 0, -1, dtype=float) ** c_pow


def rbf_kernel(A, B, width: float) -> np.ndarray:
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return np.exp(-sq / (2.0 * width ** 2))


@njit(cache=True)
def _coordinate_ascent(Q, costs, alpha, grad, n_steps, history):
    m = Q.shape[0]
    n_sweeps = history.shape[0]
    sweep = 0
    changed = False
    for step in range(n_steps):
        i = step % m
        q = Q[i, i]
        if q > 0.0:
            a = alpha[i] + grad[i] / q
            if a < 0.0:
                a = 0.0
            elif a > costs[i]:
                a = costs[i]
            delta = a - alpha[i]
            if delta != 0.0:
                alpha[i] = a
                for j in range(m):
                    grad[j] -= delta * Q[j, i]
                changed = True
        if i == m - 1:
            if sweep < n_sweeps:
                obj = 0.0
                for j in range(m):
                    obj += alpha[j] + alpha[j] * grad[j]
                history[sweep] = 0.5 * obj
            sweep += 1
            if not changed:
                # every later step is a no-op
                return sweep
            changed = False
    return sweep


@dataclass
class RankingModel:
    features: np.ndarray          # (N, k), best first
    alpha: np.ndarray             # (N - 1,)
    costs: np.ndarray             # (N - 1,)
    kernel_width: float
    context_stats: Optional[ContextStats] = None
    dual_history: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def expansion(self) -> np.ndarray:
        """Per-training-point coefficients ``alpha_i - alpha_{i-1}``."""
        beta = np.zeros(len(self.features))
        beta[:-1] += self.alpha
        beta[1:] -= self.alpha
        return beta

    def __call__(self, X) -> np.ndarray:
        return predict_rank(self, X)


def pair_kernel(K) -> np.ndarray:
    """Kernel between adjacent-pair differences ``x_i - x_{i+1}``."""
    return K[:-1, :-1] - K[:-1, 1:] - K[1:, :-1] + K[1:, 1:]


def dual_objective(Q, alpha) -> float:
    return float(alpha.sum() - 0.5 * alpha @ Q @ alpha)


def train_ranking_svm(features, costs, width: float, n_iter: int, *,
                      context_stats: Optional[ContextStats] = None) -> RankingModel:
    """Fit a ranking SVM on ``features`` ordered best to worst.

    The dual over the ``N - 1`` adjacent-pair constraints is maximized by
    cyclic single-coordinate ascent, ``n_iter * N`` steps in total, each
    solved exactly and clipped to ``[0, C_i]``, starting from ``alpha = 0``.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    N = len(features)
    if N < 2:
        raise ValueError("need at least two training samples")
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (N - 1,):
        raise ValueError(f"expected {N - 1} costs, got {costs.shape}")
    Q = pair_kernel(rbf_kernel(features, features, width))
    if not np.all(np.isfinite(Q)):
        raise ArithmeticError("non-finite kernel values")
    Q = np.ascontiguousarray(Q)
    alpha = np.zeros(N - 1)
    grad = np.ones(N - 1)
    n_steps = n_iter * N
    history = np.full(n_steps // (N - 1), np.nan)
    n_sweeps = _coordinate_ascent(Q, costs, alpha, grad, n_steps, history)
    return RankingModel(features=features, alpha=alpha, costs=costs, kernel_width=width,
                        context_stats=context_stats,
                        dual_history=history[:min(n_sweeps, len(history))])


def predict_rank(model: RankingModel, X) -> np.ndarray:
    """Ranking values ``sum_i alpha_i (k(x_i, x) - k(x_{i+1}, x))``; higher is better."""
    X = np.asarray(X, dtype=float)
    single = X.ndim == 1
    values = rbf_kernel(X, model.features, model.kernel_width) @ model.expansion
    return float(values[0]) if single else values


# -- integration with the optimizer -----------------------------------------------

def should_exploit(archive: Archive, config: SurrogateConfig) -> bool:
    return archive.real_eval_count >= config.n_start and len(archive) >= 2


def surrogate_generation(dist: SearchDistribution, archive: Archive, B, real: GenerationBatch,
                         config: SurrogateConfig, rng: np.random.Generator, phi, psi):
    """Build a ranked batch of ``lambda'`` samples and the model that ranked it.

    ``real`` holds this generation's evaluated samples (already in the
    archive). Virtual samples reuse archived contexts and are drawn from
    ``dist``; they carry ``NaN`` returns. The ``advantages`` field of the
    returned batch holds surrogate ranking values.
    """
    if not should_exploit(archive, config):
        raise ValueError("surrogate is not ready to be exploited")
    lam = len(real)
    n_virtual = config.lambda_prime - lam
    if n_virtual < 0:
        raise ValueError("lambda' must be at least lambda")

    contexts, thetas = archive.contexts, archive.thetas
    advantages = compute_advantages(feature_matrix(psi, contexts), archive.returns, B)
    order = sort_by_advantage(advantages)
    stats = ContextStats.fit(contexts)
    inv_sqrt = matrix_inv_sqrt(dist.cov)
    features = normalize_samples(dist, stats, contexts[order], thetas[order], phi, inv_sqrt)
    model = train_ranking_svm(features, rank_costs(len(features), config.c_pow),
                              kernel_width(features), config.n_iter, context_stats=stats)

    picks = rng.integers(len(contexts), size=n_virtual)
    v_contexts = contexts[picks].reshape(n_virtual, -1)
    v_thetas = sample_parameters(dist, feature_matrix(phi, v_contexts), rng).reshape(
        n_virtual, -1)
    all_contexts = np.vstack([real.contexts, v_contexts])
    all_thetas = np.vstack([real.thetas, v_thetas])
    returns = np.concatenate([real.returns, np.full(n_virtual, np.nan)])
    scores = predict_rank(model, normalize_samples(dist, stats, all_contexts, all_thetas,
                                                   phi, inv_sqrt))
    batch = GenerationBatch(all_contexts, all_thetas, returns, scores)
    return batch.take(sort_by_advantage(scores)), model


class ContextualACMES(ContextualCMAES):
    """C-CMA-ES whose updates use surrogate-ranked real and virtual samples.

    Until ``config.n_start`` real evaluations have been made this behaves
    exactly like :class:`ContextualCMAES` (same random stream usage).
    """

    def __init__(self, n, n_s, lam=50, sigma0=1.0, *, config: Optional[SurrogateConfig] = None,
                 **kwargs):
        super().__init__(n, n_s, lam, sigma0, **kwargs)
        self.config = SurrogateConfig.conservative(lam) if config is None else config
        if self.config.lambda_prime < lam:
            raise ValueError("lambda' must be at least lambda")
        self.archive = Archive.for_dimension(n)
        lp = self.config.lambda_prime
        self.hyper_prime = default_hyperparameters(
            lp, n, n_s, recombination_weights(lp, lp // 2), gamma=self.gamma,
            active=self.active)
        self.model: Optional[RankingModel] = None

    @property
    def exploiting(self) -> bool:
        return should_exploit(self.archive, self.config)

    def _update(self, batch: GenerationBatch, B) -> None:
        self.archive.extend(batch.contexts, batch.thetas, batch.returns)
        if not self.exploiting:
            super()._update(batch, B)
            return
        ranked, self.model = surrogate_generation(
            self.dist, self.archive, B, batch, self.config, self.rng, self.phi, self.psi)
        self.last_batch = ranked
        Phi = feature_matrix(self.phi, ranked.contexts)
        self.dist = update_distribution(self.dist, Phi, ranked.thetas, self.hyper_prime)
