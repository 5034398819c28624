"""Contextual CMA-ES and its active covariance update.

The upper-level policy is a Gaussian ``N(W^T phi(s), sigma^2 Sigma)`` with a
linear mean in context features. Each generation fits a context-dependent
baseline to the returns, ranks samples by advantage and re-fits the mean by
weighted ridge regression. Step size and covariance follow the usual CMA-ES
cumulation rules with ``n + n_s`` in place of ``n`` where appropriate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

DEFAULT_GAMMA = 1e-8
PD_FLOOR = 1e-20


class NumericalDegeneracyError(ArithmeticError):
    """A matrix that must be positive definite is not."""


class NumericalDivergenceError(ArithmeticError):
    """An update produced a non-finite quantity."""

    def __init__(self, quantity: str, message: Optional[str] = None):
        self.quantity = quantity
        super().__init__(message or f"non-finite value in {quantity}")


# -- context feature maps ----------------------------------------------------

def linear_features(s):
    return np.asarray(s, dtype=float).reshape(-1)


def affine_features(s):
    s = np.asarray(s, dtype=float).reshape(-1)
    return np.concatenate(([1.0], s))


def quadratic_features(s):
    """``(1, s, s_i s_j for i <= j)``."""
    s = np.asarray(s, dtype=float).reshape(-1)
    iu = np.triu_indices(len(s))
    return np.concatenate(([1.0], s, np.outer(s, s)[iu]))


def feature_matrix(features: Callable, contexts) -> np.ndarray:
    return np.array([features(s) for s in np.atleast_2d(contexts)])


# -- hyperparameters ------------------------------------------------------------

def recombination_weights(lam: int, mu: int) -> np.ndarray:
    """Diagonal of the weight matrix ``D``: log-decreasing, summing to one."""
    if not 1 <= mu <= lam:
        raise ValueError(f"need 1 <= mu <= lambda, got mu={mu}, lambda={lam}")
    ranks = np.arange(1, lam + 1)
    w = np.maximum(0.0, math.log(mu + 0.5) - np.log(ranks))
    return w / w.sum()


@dataclass(frozen=True)
class Hyperparameters:
    lam: int
    mu: int
    weights: np.ndarray
    n: int
    n_s: int
    mu_eff: float
    c1: float
    cmu: float
    cc: float
    csigma: float
    dsigma: float
    chi_n: float
    cmu_minus: float
    gamma: float = DEFAULT_GAMMA
    active: bool = False


def default_hyperparameters(lam: int, n: int, n_s: int, weights=None, *,
                            gamma: float = DEFAULT_GAMMA,
                            active: bool = False) -> Hyperparameters:
    """Learning rates of C-CMA-ES for ``lam`` samples with weights ``weights``.

    ``weights`` defaults to :func:`recombination_weights` with
    ``mu = lam // 2``.
    """
    if lam < 2 or n < 1 or n_s < 0:
        raise ValueError("need lambda >= 2, n >= 1, n_s >= 0")
    if weights is None:
        weights = recombination_weights(lam, lam // 2)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (lam,):
        raise ValueError(f"expected {lam} weights, got shape {weights.shape}")
    if abs(weights.sum() - 1.0) > 1e-10 or np.any(weights < 0):
        raise ValueError("weights must be nonnegative and sum to one")

    m = n + n_s
    mu_eff = 1.0 / np.sum(weights ** 2)
    c1 = 2.0 / ((m + 1.3) ** 2 + mu_eff)
    cmu = min(1.0 - c1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((m + 2.0) ** 2 + mu_eff))
    cc = (4.0 + mu_eff / m) / (4.0 + m + 2.0 * mu_eff / m)
    csigma = (mu_eff + 2.0) / (m + mu_eff + 5.0)
    dsigma = (1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (m + 1.0)) - 1.0)
              + csigma + math.log10(m + 1.0))
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))
    cmu_minus = (1.0 - cmu) * mu_eff / (4.0 * ((m + 2.0) ** 1.5 + 2.0 * mu_eff))
    weights = weights.copy()
    weights.setflags(write=False)
    return Hyperparameters(
        lam=lam, mu=int(np.count_nonzero(weights)), weights=weights, n=n, n_s=n_s,
        mu_eff=float(mu_eff), c1=c1, cmu=float(cmu), cc=cc, csigma=csigma,
        dsigma=dsigma, chi_n=chi_n, cmu_minus=float(cmu_minus), gamma=gamma,
        active=active)


# -- search distribution --------------------------------------------------------

@dataclass
class SearchDistribution:
    W: np.ndarray        # (n_features, n)
    cov: np.ndarray      # (n, n)
    sigma: float
    p_sigma: np.ndarray
    p_c: np.ndarray
    t: int = 1

    @property
    def n(self) -> int:
        return self.cov.shape[0]

    def mean(self, phi_s) -> np.ndarray:
        return self.W.T @ phi_s


def initial_weights(n_features: int, n: int, constant_feature: bool = False) -> np.ndarray:
    """Identity on the leading square block; a constant feature's row is zero."""
    W = np.eye(n_features, n)
    if constant_feature:
        W[0, :] = 0.0
    return W


def initial_distribution(n_features: int, n: int, sigma0: float, *,
                         constant_feature: bool = False,
                         W0: Optional[np.ndarray] = None) -> SearchDistribution:
    if sigma0 <= 0:
        raise ValueError("sigma0 must be positive")
    W = initial_weights(n_features, n, constant_feature) if W0 is None else np.array(W0, dtype=float)
    if W.shape != (n_features, n):
        raise ValueError(f"W0 must have shape ({n_features}, {n})")
    return SearchDistribution(W=W, cov=np.eye(n), sigma=float(sigma0),
                              p_sigma=np.zeros(n), p_c=np.zeros(n), t=1)


def matrix_inv_sqrt(cov) -> np.ndarray:
    """Symmetric inverse square root via eigendecomposition."""
    cov = np.asarray(cov, dtype=float)
    eigvals, eigvecs = np.linalg.eigh(cov)
    if not np.all(np.isfinite(eigvals)) or eigvals[0] <= 0.0:
        raise NumericalDegeneracyError(
            f"matrix is not positive definite (min eigenvalue {eigvals[0]!r})")
    return (eigvecs / np.sqrt(eigvals)) @ eigvecs.T


def sample_parameters(dist: SearchDistribution, phi_s, rng: np.random.Generator) -> np.ndarray:
    """Draw ``theta ~ N(W^T phi(s), sigma^2 Sigma)``.

    ``phi_s`` may be a single feature vector or a matrix with one row per
    sample; the result has the matching leading shape.
    """
    phi_s = np.asarray(phi_s, dtype=float)
    try:
        L = np.linalg.cholesky(dist.cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalDegeneracyError("covariance is not positive definite") from exc
    means = phi_s @ dist.W
    z = rng.standard_normal(means.shape)
    return means + dist.sigma * z @ L.T


# -- regression steps -------------------------------------------------------------

def _ridge(X, Y, row_weights, gamma):
    """``(X^T D X + gI)^-1 X^T D Y`` via least squares on ``[sqrt(D) X; sqrt(g) I]``.

    Avoids squaring the condition number of ``X``.
    """
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise NumericalDivergenceError("regression inputs")
    k = X.shape[1]
    sw = np.sqrt(row_weights)
    Y2 = Y.reshape(len(X), -1)
    A = np.vstack([X * sw[:, None], math.sqrt(gamma) * np.eye(k)])
    rhs = np.vstack([Y2 * sw[:, None], np.zeros((k, Y2.shape[1]))])
    sol, _, rank, _ = np.linalg.lstsq(A, rhs, rcond=None)
    if rank < k:
        raise NumericalDegeneracyError("singular regression system")
    return sol.reshape((k,) + Y.shape[1:])


def fit_baseline(Psi, returns, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Ridge regression of returns on baseline features: ``(Psi^T Psi + gI)^-1 Psi^T R``."""
    Psi = np.atleast_2d(np.asarray(Psi, dtype=float))
    returns = np.asarray(returns, dtype=float)
    if len(returns) == 0:
        raise ValueError("empty batch")
    return _ridge(Psi, returns, np.ones(len(returns)), gamma)


def compute_advantages(Psi, returns, B) -> np.ndarray:
    return np.asarray(returns, dtype=float) - np.asarray(Psi, dtype=float) @ B


def fit_policy_mean(Phi, Theta, weights, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Weighted ridge regression ``(Phi^T D Phi + gI)^-1 Phi^T D Theta``."""
    Phi = np.asarray(Phi, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    return _ridge(Phi, Theta, np.asarray(weights, dtype=float), gamma)


def sort_by_advantage(advantages) -> np.ndarray:
    """Indices ordering samples best-first; ties keep sample order."""
    return np.argsort(-np.asarray(advantages, dtype=float), kind="stable")


def rank_mu_matrix(deviations, weights, sigma) -> np.ndarray:
    """``sum_i D_ii d_i d_i^T / sigma^2`` for row-wise deviations ``d_i``."""
    deviations = np.asarray(deviations, dtype=float)
    return (deviations.T * weights) @ deviations / sigma ** 2


def active_rank_mu_terms(deviations, weights, sigma):
    """Rank-mu matrices for the best (``S``) and worst (``S_minus``) samples.

    ``deviations`` are sorted best-first; the worst sample receives the
    largest weight in ``S_minus``.
    """
    deviations = np.asarray(deviations, dtype=float)
    S = rank_mu_matrix(deviations, weights, sigma)
    S_minus = rank_mu_matrix(deviations[::-1], weights, sigma)
    return S, S_minus


def repair_covariance(cov) -> np.ndarray:
    """Symmetrize and lift eigenvalues below ``1e-20 * trace / n``."""
    cov = 0.5 * (cov + cov.T)
    n = cov.shape[0]
    floor = PD_FLOOR * np.trace(cov) / n
    eigvals, eigvecs = np.linalg.eigh(cov)
    if eigvals[0] < floor:
        if not floor > 0.0:
            raise NumericalDegeneracyError("covariance has non-positive trace")
        eigvals = np.maximum(eigvals, floor)
        cov = (eigvecs * eigvals) @ eigvecs.T
        cov = 0.5 * (cov + cov.T)
    return cov


def _check_finite(name, value):
    if not np.all(np.isfinite(value)):
        raise NumericalDivergenceError(name)


def update_distribution(dist: SearchDistribution, Phi, Theta,
                        hyper: Hyperparameters) -> SearchDistribution:
    """One C-CMA-ES update from a batch sorted best-first.

    ``Phi`` holds the policy features of each sample's context and ``Theta``
    the sampled parameters, both in rank order and aligned with
    ``hyper.weights``.
    """
    Phi = np.asarray(Phi, dtype=float)
    Theta = np.asarray(Theta, dtype=float)
    D = hyper.weights
    if len(Phi) != len(D) or len(Theta) != len(D):
        raise ValueError(f"batch size {len(Theta)} does not match {len(D)} weights")
    n = hyper.n
    sigma = dist.sigma

    W_next = fit_policy_mean(Phi, Theta, D, hyper.gamma)
    _check_finite("W", W_next)
    phi_mean = Phi.mean(axis=0)
    y = (W_next - dist.W).T @ phi_mean / sigma

    inv_sqrt = matrix_inv_sqrt(dist.cov)
    cs = hyper.csigma
    p_sigma = (1.0 - cs) * dist.p_sigma + math.sqrt(cs * (2.0 - cs) * hyper.mu_eff) * inv_sqrt @ y
    norm_ps = float(np.linalg.norm(p_sigma))
    gate = norm_ps ** 2 / (n * math.sqrt(1.0 - (1.0 - cs) ** (2 * dist.t)))
    h_sigma = 1.0 if gate < 2.0 + 4.0 / (n + 1.0) else 0.0
    cc = hyper.cc
    p_c = (1.0 - cc) * dist.p_c + h_sigma * math.sqrt(cc * (2.0 - cc) * hyper.mu_eff) * y
    c1a = hyper.c1 * (1.0 - (1.0 - h_sigma) * cc * (2.0 - cc))

    deviations = Theta - Phi @ dist.W
    rank_one = np.outer(p_c, p_c)
    if hyper.active:
        S, S_minus = active_rank_mu_terms(deviations, D, sigma)
        half = 0.5 * hyper.cmu_minus
        cov = ((1.0 - c1a - hyper.cmu - half) * dist.cov + hyper.c1 * rank_one
               + (hyper.cmu + half) * S - hyper.cmu_minus * S_minus)
    else:
        S = rank_mu_matrix(deviations, D, sigma)
        cov = (1.0 - c1a - hyper.cmu) * dist.cov + hyper.c1 * rank_one + hyper.cmu * S
    _check_finite("Sigma", cov)
    cov = repair_covariance(cov)

    sigma_next = sigma * math.exp((cs / hyper.dsigma) * (norm_ps / hyper.chi_n - 1.0))
    if not (math.isfinite(sigma_next) and sigma_next > 0.0):
        raise NumericalDivergenceError("sigma", f"step size became {sigma_next!r}")
    _check_finite("p_sigma", p_sigma)
    _check_finite("p_c", p_c)

    return SearchDistribution(W=W_next, cov=cov, sigma=sigma_next,
                              p_sigma=p_sigma, p_c=p_c, t=dist.t + 1)


# -- ask/tell driver ----------------------------------------------------------------

@dataclass
class GenerationBatch:
    contexts: np.ndarray     # (m, n_s)
    thetas: np.ndarray       # (m, n)
    returns: np.ndarray      # (m,), NaN for samples without a real evaluation
    advantages: np.ndarray   # (m,)

    def __len__(self):
        return len(self.thetas)

    def take(self, order) -> "GenerationBatch":
        return GenerationBatch(self.contexts[order], self.thetas[order],
                               self.returns[order], self.advantages[order])


class ContextualCMAES:
    """Ask/tell interface around :func:`update_distribution`.

    Parameters
    ----------
    n : int
        Parameter dimension.
    n_s : int
        Context dimension.
    lam : int
        Samples per update.
    sigma0 : float
        Initial step size.
    policy_features, baseline_features : callable
        Context feature maps ``phi`` and ``psi``.
    active : bool
        Use the active covariance update.
    seed : int or None
        Seed of the optimizer's random stream.
    """

    def __init__(self, n, n_s, lam=50, sigma0=1.0, *, mu=None,
                 policy_features=affine_features,
                 baseline_features=quadratic_features,
                 gamma=DEFAULT_GAMMA, active=False, seed=None, W0=None):
        self.n = n
        self.n_s = n_s
        self.lam = lam
        self.mu = lam // 2 if mu is None else mu
        self.phi = policy_features
        self.psi = baseline_features
        self.gamma = gamma
        self.active = active
        self.rng = np.random.default_rng(seed)
        self.hyper = default_hyperparameters(
            lam, n, n_s, recombination_weights(lam, self.mu), gamma=gamma, active=active)
        n_features = len(self.phi(np.zeros(n_s)))
        constant = policy_features is affine_features
        self.dist = initial_distribution(n_features, n, sigma0,
                                         constant_feature=constant, W0=W0)
        self.last_batch: Optional[GenerationBatch] = None

    def ask(self, contexts) -> np.ndarray:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        return sample_parameters(self.dist, feature_matrix(self.phi, contexts), self.rng)

    def policy_mean(self, s) -> np.ndarray:
        return self.dist.mean(self.phi(s))

    def tell(self, contexts, thetas, returns) -> None:
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        thetas = np.asarray(thetas, dtype=float)
        returns = np.asarray(returns, dtype=float)
        if not len(contexts) == len(thetas) == len(returns) == self.lam:
            raise ValueError(f"expected {self.lam} samples per update")
        Psi = feature_matrix(self.psi, contexts)
        B = fit_baseline(Psi, returns, self.gamma)
        advantages = compute_advantages(Psi, returns, B)
        batch = GenerationBatch(contexts, thetas, returns, advantages)
        self._update(batch, B)

    def _update(self, batch: GenerationBatch, B) -> None:
        ranked = batch.take(sort_by_advantage(batch.advantages))
        self.last_batch = ranked
        Phi = feature_matrix(self.phi, ranked.contexts)
        self.dist = update_distribution(self.dist, Phi, ranked.thetas, self.hyper)
