"""Seeded experiment runner producing learning curves.

Every run of every method on one problem shares the same problem instance
(the context shift ``G`` depends only on ``base_seed``) and, for a given run
index, the same sequence of training contexts. Only the optimizer's own
random stream differs between methods.
"""
from __future__ import annotations

import csv
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dmp_env import ViapointProblem, test_context_grid
from .objectives import BaseFunction, FunctionKind, make_contextual
from .optimizer import (DEFAULT_GAMMA, ContextualCMAES, SearchDistribution, affine_features,
                        quadratic_features)
from .surrogate import ContextualACMES, SurrogateConfig

logger = logging.getLogger(__name__)

PROBLEMS = tuple(k.value for k in FunctionKind) + ("viapoint",)
METHODS = {
    # name: (active covariance update, surrogate)
    "ccmaes": (False, False),
    "accmaes": (True, False),
    "cacmes": (False, True),
    "acacmes": (True, True),
}
DIVERGENCE_THRESHOLD = 1e100
RUN_HEADER = ("method", "run", "generation", "episodes", "mean_value")
AGGREGATE_HEADER = ("method", "generation", "episodes", "mean", "std", "n_runs")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    method: str = "ccmaes"
    aggressive: bool = False
    n: int = 20
    n_s: int = 1
    lam: Optional[int] = None
    lambda_prime: Optional[int] = None
    n_start: Optional[float] = None
    c_pow: float = 1.0
    n_iter: int = 1000
    gamma: float = DEFAULT_GAMMA
    sigma0: Optional[float] = None
    generations: int = 100
    runs: int = 20
    base_seed: int = 0
    out: Optional[Path] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.runs < 1 or self.generations < 1:
            raise ValueError("runs and generations must be >= 1")
        if self.aggressive and not self.uses_surrogate:
            raise ValueError("the aggressive variant needs a surrogate method")
        if self.problem == "viapoint" and (self.n, self.n_s) != (20, 2):
            object.__setattr__(self, "n", 20)
            object.__setattr__(self, "n_s", 2)

    @property
    def uses_surrogate(self) -> bool:
        return METHODS[self.method][1]

    @property
    def active(self) -> bool:
        return METHODS[self.method][0]

    @property
    def label(self) -> str:
        return self.method + ("+" if self.aggressive else "")

    @property
    def population(self) -> int:
        if self.lam is not None:
            return self.lam
        return 100 if self.problem == "viapoint" else 50

    @property
    def initial_step_size(self) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        if self.problem == "viapoint":
            return ViapointProblem.sigma0
        return 14.5 if self.problem == FunctionKind.ACKLEY.value else 1.0

    def surrogate_config(self) -> Optional[SurrogateConfig]:
        if not self.uses_surrogate:
            return None
        lam = self.population
        if self.aggressive:
            lp, n_start = 10 * lam, 100
        else:
            lp, n_start = 3 * lam, 3000
        if self.problem == "viapoint":
            n_start = 1000
        if self.lambda_prime is not None:
            lp = self.lambda_prime
        if self.n_start is not None:
            n_start = self.n_start
        return SurrogateConfig(lambda_prime=lp, n_start=n_start, c_pow=self.c_pow,
                               n_iter=self.n_iter)


@dataclass
class LearningCurve:
    method: str
    run: int
    episodes: np.ndarray
    values: np.ndarray
    diverged_at: Optional[int] = None
    test_values: Optional[np.ndarray] = None   # viapoint: 25-grid return after each update
    initial_test_value: Optional[float] = None
    real_evaluations: int = 0

    @property
    def diverged(self) -> bool:
        return self.diverged_at is not None

    @property
    def final_value(self) -> float:
        return float(self.values[-1])


@dataclass
class AggregateTable:
    method: str
    generations: np.ndarray
    episodes: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    n_runs: int

    @property
    def final_mean(self) -> float:
        return float(self.mean[-1])


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curves: List[LearningCurve]
    table: AggregateTable
    test_table: Optional[AggregateTable] = None
    final_values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def all_diverged(self) -> bool:
        return all(c.diverged for c in self.curves)


# -- building blocks --------------------------------------------------------------

def build_problem(config: ExperimentConfig):
    if config.problem == "viapoint":
        return ViapointProblem()
    base = BaseFunction(FunctionKind(config.problem), config.n)
    return make_contextual(base, config.n_s, config.base_seed)


def method_seed_offset(label: str) -> int:
    return zlib.crc32(label.encode()) % 1000


def optimizer_seed(config: ExperimentConfig, run_index: int) -> int:
    return config.base_seed + 1000 * run_index + method_seed_offset(config.label)


def context_rng(config: ExperimentConfig, run_index: int) -> np.random.Generator:
    return np.random.default_rng([config.base_seed, run_index, 1])


def build_optimizer(config: ExperimentConfig, seed: int):
    kwargs = dict(policy_features=affine_features, baseline_features=quadratic_features,
                  gamma=config.gamma, active=config.active, seed=seed)
    lam = config.population
    if config.uses_surrogate:
        return ContextualACMES(config.n, config.n_s, lam, config.initial_step_size,
                               config=config.surrogate_config(), **kwargs)
    return ContextualCMAES(config.n, config.n_s, lam, config.initial_step_size, **kwargs)


def evaluate_viapoint_policy(dist: SearchDistribution, problem: Optional[ViapointProblem] = None,
                             phi=affine_features) -> float:
    """Mean return of the policy mean over the 25 test contexts."""
    problem = ViapointProblem() if problem is None else problem
    returns = [problem(s, dist.W.T @ phi(s)) for s in test_context_grid()]
    return float(np.mean(returns))


def _state_is_finite(dist: SearchDistribution) -> bool:
    return (math.isfinite(dist.sigma) and np.all(np.isfinite(dist.cov))
            and np.all(np.isfinite(dist.W)))


# -- runs -------------------------------------------------------------------------

def run_single(config: ExperimentConfig, run_index: int) -> LearningCurve:
    """Execute ``config.generations`` updates and record per-generation means.

    After a divergence (numerical failure, non-finite state or a return
    beyond ``1e100`` in magnitude) all remaining values are ``NaN``.
    """
    problem = build_problem(config)
    opt = build_optimizer(config, optimizer_seed(config, run_index))
    contexts_rng = context_rng(config, run_index)
    lam = config.population
    G = config.generations
    episodes = lam * np.arange(1, G + 1)
    values = np.full(G, np.nan)
    is_viapoint = config.problem == "viapoint"
    test_values = np.full(G, np.nan) if is_viapoint else None
    initial_test = evaluate_viapoint_policy(opt.dist, problem) if is_viapoint else None
    diverged_at = None
    n_evals = 0

    for g in range(G):
        contexts = np.array([problem.sample_context(contexts_rng) for _ in range(lam)])
        try:
            thetas = opt.ask(contexts)
            returns = np.array([problem(s, th) for s, th in zip(contexts, thetas)])
            n_evals += lam
            if not np.all(np.isfinite(returns)) or np.max(np.abs(returns)) > DIVERGENCE_THRESHOLD:
                raise ArithmeticError("return out of range")
            values[g] = returns.mean()
            opt.tell(contexts, thetas, returns)
            if not _state_is_finite(opt.dist):
                raise ArithmeticError("non-finite search distribution")
        except (ArithmeticError, np.linalg.LinAlgError) as exc:
            logger.info("%s run %d diverged at generation %d: %s",
                        config.label, run_index, g + 1, exc)
            diverged_at = g + 1
            values[g:] = np.nan
            break
        if is_viapoint:
            test_values[g] = evaluate_viapoint_policy(opt.dist, problem)

    return LearningCurve(method=config.label, run=run_index, episodes=episodes, values=values,
                         diverged_at=diverged_at, test_values=test_values,
                         initial_test_value=initial_test, real_evaluations=n_evals)


def aggregate(curves: Sequence[LearningCurve], method: str, attr: str = "values") -> AggregateTable:
    curves = sorted(curves, key=lambda c: c.run)
    data = np.vstack([getattr(c, attr) for c in curves])
    G = data.shape[1]
    return AggregateTable(method=method, generations=np.arange(1, G + 1),
                          episodes=curves[0].episodes.copy(), mean=data.mean(axis=0),
                          std=data.std(axis=0), n_runs=len(curves))


def _run_indexed(args):
    config, run_index = args
    return run_single(config, run_index)


def run_experiment(config: ExperimentConfig, jobs: int = 1) -> ExperimentResult:
    """Run ``config.runs`` independent runs and aggregate them by generation.

    A run that diverged contributes ``NaN`` from its divergence on, so the
    mean of that generation is ``NaN`` as well. If ``config.out`` is set the
    per-run and aggregate CSV files are written there.
    """
    tasks = [(config, r) for r in range(config.runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            curves = list(pool.map(_run_indexed, tasks))
    else:
        curves = [_run_indexed(t) for t in tasks]
    result = ExperimentResult(config=config, curves=curves,
                              table=aggregate(curves, config.label),
                              final_values=np.array([c.final_value for c in curves]))
    if config.problem == "viapoint":
        result.test_table = aggregate(curves, config.label, "test_values")
    if config.out is not None:
        write_result(result, Path(config.out))
    return result


# -- CSV export -------------------------------------------------------------------

def format_value(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "NaN"
    return repr(x)


def export_runs_csv(curves: Sequence[LearningCurve], path, attr: str = "values") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUN_HEADER)
        for c in sorted(curves, key=lambda c: c.run):
            for g, (ep, v) in enumerate(zip(c.episodes, getattr(c, attr)), start=1):
                writer.writerow((c.method, c.run, g, int(ep), format_value(v)))
    return path


def export_aggregate_csv(table: AggregateTable, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_HEADER)
        for g, ep, m, s in zip(table.generations, table.episodes, table.mean, table.std):
            writer.writerow((table.method, int(g), int(ep), format_value(m), format_value(s),
                             table.n_runs))
    return path


def export_csv(data, path) -> Path:
    """Write learning curves (per-run format) or an aggregate table."""
    if isinstance(data, AggregateTable):
        return export_aggregate_csv(data, path)
    if isinstance(data, LearningCurve):
        data = [data]
    return export_runs_csv(data, path)


def write_result(result: ExperimentResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{result.config.problem}_{result.config.label}"
    export_runs_csv(result.curves, out_dir / f"{stem}_runs.csv")
    export_aggregate_csv(result.table, out_dir / f"{stem}_aggregate.csv")
    if result.test_table is not None:
        export_runs_csv(result.curves, out_dir / f"{stem}_test_runs.csv", "test_values")
        export_aggregate_csv(result.test_table, out_dir / f"{stem}_test_aggregate.csv")


def read_runs_csv(path) -> dict:
    """Per-run values keyed by run index, as float arrays in generation order."""
    runs: dict = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            runs.setdefault(int(row["run"]), []).append(float(row["mean_value"]))
    return {k: np.array(v) for k, v in runs.items()}
