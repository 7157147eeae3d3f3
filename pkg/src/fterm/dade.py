"""Dual-adaptive differential evolution for forecaster weights.

Each generation every individual picks one of three mutation strategies
with adaptive probabilities, is recombined with its mutant by heuristic
crossover, and survives only if the offspring has strictly lower RMSE.
Strategy probabilities are recomputed from the generation's success and
failure counts, after which the counts are reset.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .forecaster import NetworkGenome, NetworkLayout, forward_many
from .trace import WindowSet

INITIAL_PROBABILITIES = (0.33, 0.33, 0.34)


class ConfigError(ValueError):
    pass


class Strategy(IntEnum):
    """ms1 = DE/best/1, ms2 = DE/current-to-best/1, ms3 = DE/rand/1."""

    MS1 = 0
    MS2 = 1
    MS3 = 2


@dataclass(frozen=True)
class DadeConfig:
    population_size: int = 20
    max_generations: int = 200
    mutation_factor_range: tuple[float, float] = (0.4, 0.9)
    crossover_eta_range: tuple[float, float] = (0.0, 1.0)
    init_weight_range: tuple[float, float] = (-1.0, 1.0)
    # 0 disables the early stop; greedy DE often stalls for 10+ generations
    convergence_epsilon: float = 0.0
    patience: int = 10
    seed: int = 0
    # older normaliser with a duplicated s2*s3 term and no s1*s2 term
    legacy_b_formula: bool = False

    def __post_init__(self):
        if self.population_size < 4:
            raise ConfigError("population_size must be >= 4")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        for name in ("mutation_factor_range", "crossover_eta_range", "init_weight_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} must be ordered (lo <= hi)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "DadeConfig":
        data = dict(data)
        for key in ("mutation_factor_range", "crossover_eta_range", "init_weight_range"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


@dataclass(frozen=True)
class StrategyState:
    probabilities: tuple[float, float, float] = INITIAL_PROBABILITIES
    successes: tuple[int, int, int] = (0, 0, 0)
    failures: tuple[int, int, int] = (0, 0, 0)

    def record(self, strategy: Strategy, success: bool) -> "StrategyState":
        s, f = list(self.successes), list(self.failures)
        if success:
            s[strategy] += 1
        else:
            f[strategy] += 1
        return StrategyState(self.probabilities, tuple(s), tuple(f))


@dataclass
class TrainReport:
    best: NetworkGenome
    best_rmse_curve: list[float]
    probability_trajectory: list[tuple[float, float, float]]
    generations: int

    def to_dict(self) -> dict:
        return {
            "best": self.best.to_dict(),
            "best_rmse_curve": self.best_rmse_curve,
            "probability_trajectory": [list(p) for p in self.probability_trajectory],
            "generations": self.generations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def curve_csv(self) -> str:
        out = io.StringIO()
        out.write("generation,best_rmse,P1,P2,P3\n")
        for g, (err, p) in enumerate(zip(self.best_rmse_curve, self.probability_trajectory)):
            out.write(f"{g},{err:.9f},{p[0]:.9f},{p[1]:.9f},{p[2]:.9f}\n")
        return out.getvalue()


def evaluate(layout: NetworkLayout, weights, windows: WindowSet) -> np.ndarray:
    """RMSE of each weight vector (rows of ``weights``) on the window set.

    Rows containing non-finite weights, or producing non-finite output,
    score ``inf``.
    """
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    fitness = np.full(W.shape[0], np.inf)
    ok = np.all(np.isfinite(W), axis=1)
    if ok.any():
        with np.errstate(over="ignore", invalid="ignore"):
            pred = forward_many(layout, W[ok], windows.inputs)
            pred = pred.reshape(int(ok.sum()), len(windows), layout.n_resources)
            err = np.sqrt(np.mean((pred - windows.targets[None]) ** 2, axis=(1, 2)))
        fitness[ok] = np.where(np.isfinite(err), err, np.inf)
    return fitness


def init_population(layout: NetworkLayout, config: DadeConfig, windows: WindowSet | None = None,
                    rng: np.random.Generator | None = None) -> list[NetworkGenome]:
    """Draw ``population_size`` genomes uniformly from ``init_weight_range``.

    When ``windows`` is given each genome carries its training RMSE.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    lo, hi = config.init_weight_range
    W = rng.uniform(lo, hi, size=(config.population_size, layout.n_weights))
    if windows is None:
        return [NetworkGenome(layout, w) for w in W]
    fit = evaluate(layout, W, windows)
    return [NetworkGenome(layout, w, float(f)) for w, f in zip(W, fit)]


def select_strategy(msp: float, state: StrategyState) -> Strategy:
    p1, p2, _ = state.probabilities
    if 0 < msp <= p1:
        return Strategy.MS1
    if p1 < msp <= p1 + p2:
        return Strategy.MS2
    return Strategy.MS3


def draw_indices(rng: np.random.Generator, n: int, target: int, best: int,
                 strategy: Strategy) -> tuple[int, ...]:
    """Mutually distinct donor indices, none equal to the target (nor to the
    best individual for ms1)."""
    excluded = {target, best} if strategy is Strategy.MS1 else {target}
    count = 3 if strategy is Strategy.MS3 else 2
    pool = [i for i in range(n) if i not in excluded]
    if len(pool) < count:
        raise ConfigError(f"population of {n} too small to draw {count} distinct donors")
    return tuple(int(i) for i in rng.choice(pool, size=count, replace=False))


def mutate(population, best_index: int, target_index: int, strategy: Strategy, mu: float,
           rng: np.random.Generator | None = None, indices: tuple[int, ...] | None = None) -> np.ndarray:
    X = np.asarray(population, dtype=float)
    if indices is None:
        if rng is None:
            raise ValueError("either rng or indices is required")
        indices = draw_indices(rng, X.shape[0], target_index, best_index, strategy)
    r1, r2 = indices[0], indices[1]
    diff = X[r1] - X[r2]
    if strategy is Strategy.MS1:
        return X[best_index] + mu * diff
    if strategy is Strategy.MS2:
        xi = X[target_index]
        return xi + mu * (X[best_index] - xi) + mu * diff
    return X[indices[2]] + mu * diff


def crossover_heuristic(mx_a, mx_b, fitness_a: float, fitness_b: float, eta: float) -> np.ndarray:
    """Step from the worse parent through the better one; ties favour ``mx_a``."""
    a = np.asarray(mx_a, dtype=float)
    b = np.asarray(mx_b, dtype=float)
    better, other = (a, b) if fitness_a <= fitness_b else (b, a)
    return eta * (better - other) + better


def select_survivor(current: NetworkGenome, offspring, windows: WindowSet) -> tuple[NetworkGenome, bool]:
    """Greedy replacement: the offspring survives only with strictly lower RMSE."""
    offspring = np.asarray(offspring, dtype=float)
    cur_fit = current.fitness
    if cur_fit is None:
        cur_fit = float(evaluate(current.layout, current.weights, windows)[0])
        current = current.with_fitness(cur_fit)
    off_fit = float(evaluate(current.layout, offspring, windows)[0])
    if np.isfinite(off_fit) and off_fit < cur_fit:
        return NetworkGenome(current.layout, offspring, off_fit), True
    return current, False


def b_term(s, f, legacy: bool = False) -> float:
    s1, s2, s3 = s
    f1, f2, f3 = f
    pairs = (s2 * s3 + s1 * s3 + s2 * s3) if legacy else (s1 * s2 + s1 * s3 + s2 * s3)
    return 2 * pairs + f1 * (s2 + s3) + f2 * (s1 + s3) + f3 * (s1 + s2)


def update_strategy_probabilities(state: StrategyState, legacy: bool = False) -> StrategyState:
    """Recompute (P1, P2, P3) from success/failure counts and reset the counts.

    The probabilities are left unchanged when no strategy succeeded or the
    normaliser vanishes.
    """
    s1, s2, s3 = state.successes
    f1, f2, f3 = state.failures
    b = b_term(state.successes, state.failures, legacy)
    probs = state.probabilities
    if s1 + s2 + s3 > 0 and b > 0:
        p1 = s1 * (s2 + f2 + s3 + f3) / b
        p2 = s2 * (s1 + f1 + s3 + f3) / b
        # the complement can round below zero when s3 = 0
        p3 = 1.0 - p1 - p2 if legacy else s3 * (s1 + f1 + s2 + f2) / b
        probs = (p1, p2, p3)
    return StrategyState(probs)


@dataclass
class _Generation:
    """Random draws for one generation, made up front in individual order."""

    msp: np.ndarray
    mu: np.ndarray
    eta: np.ndarray
    strategies: list[Strategy] = field(default_factory=list)
    donors: list[tuple[int, ...]] = field(default_factory=list)


def _draw_generation(rng, config: DadeConfig, state: StrategyState, best: int) -> _Generation:
    n = config.population_size
    gen = _Generation(rng.random(n), rng.uniform(*config.mutation_factor_range, size=n),
                      rng.uniform(*config.crossover_eta_range, size=n))
    for i in range(n):
        strategy = select_strategy(float(gen.msp[i]), state)
        gen.strategies.append(strategy)
        gen.donors.append(draw_indices(rng, n, i, best, strategy))
    return gen


def train(windows: WindowSet, layout: NetworkLayout, config: DadeConfig,
          initial: NetworkGenome | None = None) -> TrainReport:
    """Evolve forecaster weights on ``windows``.

    Stops after ``max_generations`` or once the best RMSE has improved by less
    than ``convergence_epsilon`` for ``patience`` consecutive generations.
    ``initial`` (e.g. the previous model when retraining) replaces the first
    random individual.
    """
    if len(windows) == 0:
        raise ValueError("cannot train on an empty window set")
    if windows.inputs.shape[1] != layout.input_size:
        raise ValueError(f"windows have {windows.inputs.shape[1]} inputs, layout expects {layout.input_size}")
    rng = np.random.default_rng(config.seed)
    lo, hi = config.init_weight_range
    pop = rng.uniform(lo, hi, size=(config.population_size, layout.n_weights))
    if initial is not None:
        pop[0] = initial.weights
    fit = evaluate(layout, pop, windows)
    state = StrategyState()
    curve = [float(fit.min())]
    trajectory = [state.probabilities]
    stale = 0
    generations = 0

    for _ in range(config.max_generations):
        best = int(np.argmin(fit))
        gen = _draw_generation(rng, config, state, best)
        mutants = np.array([mutate(pop, best, i, gen.strategies[i], gen.mu[i], indices=gen.donors[i])
                            for i in range(config.population_size)])
        mut_fit = evaluate(layout, mutants, windows)
        offspring = np.array([crossover_heuristic(mutants[i], pop[i], mut_fit[i], fit[i], gen.eta[i])
                              for i in range(config.population_size)])
        off_fit = evaluate(layout, offspring, windows)
        for i in range(config.population_size):
            success = bool(off_fit[i] < fit[i])
            if success:
                pop[i] = offspring[i]
                fit[i] = off_fit[i]
            state = state.record(gen.strategies[i], success)
        state = update_strategy_probabilities(state, config.legacy_b_formula)
        generations += 1
        previous = curve[-1]
        curve.append(float(fit.min()))
        trajectory.append(state.probabilities)
        stale = stale + 1 if previous - curve[-1] < config.convergence_epsilon else 0
        if stale >= config.patience:
            break

    best = int(np.argmin(fit))
    return TrainReport(NetworkGenome(layout, pop[best], float(fit[best])), curve, trajectory, generations)
