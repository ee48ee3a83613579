"""Differential evolution core: population, operators, selection, FES budget.

Operators work on whole populations at once; the single-individual entry
points (``mutate``, ``crossover``, ``repair_bounds``) are thin wrappers over
the batched ones so both paths share one implementation.

Random draws within a generation happen in this order: parameter control,
mutation indices, combination coefficients (current-to-rand/1 only),
``j_rand``, crossover uniforms, bound repairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, NamedTuple, Optional

import numpy as np


class BudgetExhausted(RuntimeError):
    pass


class Strategy(str, Enum):
    RAND_1 = "rand/1"
    RAND_2 = "rand/2"
    BEST_1 = "best/1"
    BEST_2 = "best/2"
    CURRENT_TO_BEST_1 = "current-to-best/1"
    CURRENT_TO_RAND_1 = "current-to-rand/1"


# number of random indices drawn, all distinct and != i
N_INDICES = {
    Strategy.RAND_1: 3,
    Strategy.RAND_2: 5,
    Strategy.BEST_1: 2,
    Strategy.BEST_2: 4,
    Strategy.CURRENT_TO_BEST_1: 2,
    Strategy.CURRENT_TO_RAND_1: 3,
}

MIN_POPULATION = 5


def min_population(strategy: Strategy | str) -> int:
    return max(MIN_POPULATION, N_INDICES[Strategy(strategy)] + 1)


@dataclass(frozen=True)
class StrategyParams:
    strategy: Strategy = Strategy.RAND_1
    F: float = 0.5
    CR: float = 0.9
    # current-to-rand/1 combination coefficient; None draws U(0, 1) per individual
    K_coeff: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.F > 0:
            raise ValueError("F must be > 0")
        if not 0.0 <= self.CR <= 1.0:
            raise ValueError("CR must lie in [0, 1]")
        if self.K_coeff is not None and not 0.0 <= self.K_coeff <= 1.0:
            raise ValueError("K_coeff must lie in [0, 1]")


Listener = Callable[[np.ndarray, np.ndarray], None]


@dataclass
class Budget:
    """Function-evaluation budget.  All objective calls go through ``evaluate``.

    ``listeners`` are called with ``(points, values)`` after every batch, which
    is how best-so-far archives and curve recorders see each evaluation.
    """

    max_fes: int
    used_fes: int = 0
    listeners: list[Listener] = field(default_factory=list)

    def __post_init__(self):
        if self.max_fes < 1:
            raise ValueError("max_fes must be positive")

    @property
    def remaining(self) -> int:
        return self.max_fes - self.used_fes

    @property
    def exhausted(self) -> bool:
        return self.used_fes >= self.max_fes

    def evaluate(self, fn, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        n = points.shape[0]
        if n > self.remaining:
            raise BudgetExhausted(f"{n} evaluations requested, {self.remaining} left")
        values = np.asarray(fn(points), dtype=float)
        self.used_fes += n
        for listener in self.listeners:
            listener(points, values)
        return values


@dataclass
class Individual:
    position: np.ndarray
    fitness: float
    stagnation: int = 0


@dataclass
class Population:
    """NP individuals stored column-wise for vectorised updates."""

    positions: np.ndarray
    fitness: np.ndarray
    stagnation: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    generation: int = 0

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def best_index(self) -> int:
        return int(np.argmin(self.fitness))

    @property
    def best_fitness(self) -> float:
        return float(self.fitness.min())

    def __len__(self):
        return self.size

    def __getitem__(self, i: int) -> Individual:
        return Individual(self.positions[i].copy(), float(self.fitness[i]), int(self.stagnation[i]))

    @property
    def members(self) -> list[Individual]:
        return [self[i] for i in range(self.size)]

    def replace(self, idx, positions, fitness):
        """Overwrite individuals; replaced ones restart their stagnation count."""
        self.positions[idx] = positions
        self.fitness[idx] = fitness
        self.stagnation[idx] = 0

    def copy(self) -> "Population":
        return Population(
            self.positions.copy(), self.fitness.copy(), self.stagnation.copy(),
            self.lower, self.upper, self.generation,
        )


def initialize(fn, NP: int, rng, budget: Budget, strategy: Strategy | str | None = None) -> Population:
    """Uniform random population inside the bounds of ``fn``; costs NP evaluations."""
    rng = np.random.default_rng(rng)
    need = MIN_POPULATION if strategy is None else min_population(strategy)
    if NP < need:
        raise ValueError(f"population of {NP} too small, need at least {need}")
    if budget.remaining < NP:
        raise BudgetExhausted(f"initialisation needs {NP} evaluations, {budget.remaining} left")
    lower = np.asarray(fn.lower, dtype=float)
    upper = np.asarray(fn.upper, dtype=float)
    positions = rng.uniform(lower, upper, (NP, lower.shape[0]))
    fitness = budget.evaluate(fn, positions)
    return Population(positions, fitness, np.zeros(NP, dtype=np.int64), lower, upper)


def draw_indices(NP: int, targets: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` distinct indices per target, uniformly ordered, none equal to the target."""
    targets = np.asarray(targets)
    if k > NP - 1:
        raise ValueError(f"cannot draw {k} distinct indices from a population of {NP}")
    keys = rng.random((targets.shape[0], NP))
    keys[np.arange(targets.shape[0]), targets] = 2.0
    part = np.argpartition(keys, k - 1, axis=1)[:, :k]
    order = np.argsort(np.take_along_axis(keys, part, axis=1), axis=1)
    return np.take_along_axis(part, order, axis=1)


def _broadcast_column(v, n):
    v = np.asarray(v, dtype=float)
    return np.broadcast_to(v, (n,))[:, None]


def mutate_batch(pop: Population, targets, params: StrategyParams, rng, F=None) -> np.ndarray:
    """Donor vectors for ``targets`` (trial vectors for current-to-rand/1).

    ``F`` may be an array of per-target scale factors (jDE); it defaults to
    ``params.F``.
    """
    targets = np.asarray(targets)
    n = targets.shape[0]
    s = params.strategy
    r = draw_indices(pop.size, targets, N_INDICES[s], rng)
    X = pop.positions
    f = _broadcast_column(params.F if F is None else F, n)
    xi = X[targets]

    if s is Strategy.RAND_1:
        return X[r[:, 0]] + f * (X[r[:, 1]] - X[r[:, 2]])
    if s is Strategy.RAND_2:
        return X[r[:, 0]] + f * (X[r[:, 1]] - X[r[:, 2]]) + f * (X[r[:, 3]] - X[r[:, 4]])
    best = X[pop.best_index]
    if s is Strategy.BEST_1:
        return best + f * (X[r[:, 0]] - X[r[:, 1]])
    if s is Strategy.BEST_2:
        return best + f * (X[r[:, 0]] - X[r[:, 1]]) + f * (X[r[:, 2]] - X[r[:, 3]])
    if s is Strategy.CURRENT_TO_BEST_1:
        return xi + f * (best - xi) + f * (X[r[:, 0]] - X[r[:, 1]])
    # current-to-rand/1
    if params.K_coeff is None:
        K = rng.random(n)[:, None]
    else:
        K = np.full((n, 1), params.K_coeff)
    return xi + K * (X[r[:, 0]] - xi) + (K * f) * (X[r[:, 1]] - X[r[:, 2]])


def mutate(pop: Population, i: int, params: StrategyParams, rng) -> np.ndarray:
    return mutate_batch(pop, np.array([i]), params, rng)[0]


def crossover(target, donor, CR, rng) -> np.ndarray:
    """Binomial crossover; works on one vector pair or on row-stacked batches.

    ``CR`` may be a scalar or one value per row.
    """
    target = np.asarray(target, dtype=float)
    donor = np.asarray(donor, dtype=float)
    if target.shape != donor.shape:
        raise ValueError("target and donor must have the same shape")
    single = target.ndim == 1
    t = np.atleast_2d(target)
    v = np.atleast_2d(donor)
    n, d = t.shape
    j_rand = rng.integers(d, size=n)
    cr = np.broadcast_to(np.asarray(CR, dtype=float), (n,))[:, None]
    mask = rng.random((n, d)) <= cr
    mask[np.arange(n), j_rand] = True
    u = np.where(mask, v, t)
    return u[0] if single else u


def repair_bounds(x, bounds, rng) -> np.ndarray:
    """Re-draw out-of-range coordinates uniformly within ``[lower_j, upper_j]``."""
    lower, upper = (np.asarray(b, dtype=float) for b in bounds)
    x = np.array(x, dtype=float)
    lo = np.broadcast_to(lower, x.shape)
    hi = np.broadcast_to(upper, x.shape)
    bad = (x < lo) | (x > hi)
    if bad.any():
        x[bad] = rng.uniform(lo[bad], hi[bad])
    return x


class Selection(NamedTuple):
    up: int
    replaced: np.ndarray  # bool mask over the population


def select_and_advance(pop: Population, trials: np.ndarray, fn, budget: Budget) -> Selection:
    """One-to-one survivor selection, ``f(u) <= f(x)`` replaces.

    With fewer than NP evaluations left only the leading trials are evaluated
    and selected; the rest of the population is left untouched.
    """
    n = min(pop.size, budget.remaining)
    replaced = np.zeros(pop.size, dtype=bool)
    if n <= 0:
        return Selection(0, replaced)
    values = budget.evaluate(fn, trials[:n])
    win = values <= pop.fitness[:n]
    replaced[:n] = win
    pop.positions[replaced] = trials[:n][win]
    pop.fitness[replaced] = values[win]
    pop.stagnation[:n] += 1
    pop.stagnation[replaced] = 0
    pop.generation += 1
    return Selection(int(win.sum()), replaced)


def make_trials(pop: Population, params: StrategyParams, rng, F=None, CR=None) -> np.ndarray:
    targets = np.arange(pop.size)
    donors = mutate_batch(pop, targets, params, rng, F=F)
    if params.strategy is Strategy.CURRENT_TO_RAND_1:
        trials = donors
    else:
        trials = crossover(pop.positions, donors, params.CR if CR is None else CR, rng)
    return repair_bounds(trials, (pop.lower, pop.upper), rng)


def evolve_generation(pop: Population, fn, params: StrategyParams, budget: Budget, rng,
                      control=None) -> Selection:
    """Mutation, crossover, repair and selection for the whole population."""
    if control is None:
        trials = make_trials(pop, params, rng)
        return select_and_advance(pop, trials, fn, budget)
    F, CR = control.propose(pop.size, rng)
    trials = make_trials(pop, params, rng, F=F, CR=CR)
    sel = select_and_advance(pop, trials, fn, budget)
    control.commit(sel.replaced)
    return sel
