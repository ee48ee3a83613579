"""Event-triggered impulsive control for a DE population.

At the end of each generation the update rate ``UR = UP / NP`` is compared
with the previous one.  ``UR == 0`` relocates randomly chosen stagnant
individuals inside the population's bounding box (destabilising impulses);
a drop ``0 < UR < UR_prev`` pulls the worst-ranked individuals towards
better ones (stabilising impulses), falling back to destabilising impulses
when none of the pulls improves its target.

Impulses in one batch are computed against the population as it stood when
the batch started and evaluated together.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import IO, NamedTuple, Optional

import numpy as np

from .de import Budget, Population
from .variants import AblationConfig, RankingMode, ReferenceMode

PR_STEP = 0.2


class ImpulseKind(str, Enum):
    STABILIZING = "stabilizing"
    DESTABILIZING = "destabilizing"


@dataclass
class ImpulseEvent:
    kind: ImpulseKind
    index: int
    gain: np.ndarray
    reference: object  # s_i for stabilising, (x_L, x_U) for destabilising
    error_vec: np.ndarray
    accepted: bool
    dm: int
    generation: int = 0

    def record(self) -> dict:
        return {
            "generation": self.generation,
            "kind": self.kind.value,
            "index": self.index,
            "DM": self.dm,
            "zeta": self.accepted,
        }


@dataclass
class EventLog:
    """Collects impulse events; optionally streams them as JSON lines."""

    keep: bool = True
    stream: Optional[IO[str]] = None
    events: list = field(default_factory=list)
    counts: dict = field(default_factory=lambda: {
        "stabilizing": 0, "stabilizing_accepted": 0, "destabilizing": 0,
    })

    def add(self, event: ImpulseEvent) -> None:
        self.counts[event.kind.value] += 1
        if event.kind is ImpulseKind.STABILIZING and event.accepted:
            self.counts["stabilizing_accepted"] += 1
        if self.keep:
            self.events.append(event)
        if self.stream is not None:
            self.stream.write(json.dumps(event.record()) + "\n")


@dataclass
class EtiState:
    M: int
    LN: int
    UN: int
    pr_base: float = 0.2
    UR: float = 0.0
    UR_prev: float = 0.0
    gbest: float = np.inf
    gbest_prev: float = np.inf
    impulse_fes: int = 0

    @classmethod
    def start(cls, pop: Population, LN: int = 1, UN: Optional[int] = None, pr_base: float = 0.2) -> "EtiState":
        UN = pop.size if UN is None else UN
        if not 1 <= LN <= UN:
            raise ValueError("need 1 <= LN <= UN")
        return cls(M=LN, LN=LN, UN=UN, pr_base=pr_base, gbest=pop.best_fitness, gbest_prev=pop.best_fitness)


def update_rate(UP: int, NP: int) -> float:
    if NP <= 0:
        raise ValueError("population size must be positive")
    if not 0 <= UP <= NP:
        raise ValueError("UP must lie in [0, NP]")
    return UP / NP


class RankRecord(NamedTuple):
    fitness_rank: np.ndarray
    stagnation_rank: np.ndarray
    combined: np.ndarray


def _ordinal_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, values.shape[0] + 1)
    return ranks


def rank_population(pop: Population, mode: RankingMode = RankingMode.COMBINED) -> RankRecord:
    """Fitness and stagnation ranks (1 = best / freshest), ties by lower index."""
    fit = _ordinal_ranks(pop.fitness)
    stag = _ordinal_ranks(pop.stagnation)
    if mode is RankingMode.FITNESS_ONLY:
        combined = fit.copy()
    elif mode is RankingMode.STAGNATION_ONLY:
        combined = stag.copy()
    else:
        combined = fit + stag
    return RankRecord(fit, stag, combined)


def select_candidates(R: np.ndarray, M: int) -> np.ndarray:
    """Indices of the ``M`` largest ``R``; equal ``R`` prefers the lower index."""
    R = np.asarray(R)
    if not 1 <= M <= R.shape[0]:
        raise ValueError("need 1 <= M <= NP")
    order = np.lexsort((np.arange(R.shape[0]), -R))
    return order[:M]


def random_selection(candidates, pr_base: float, rng, r: Optional[np.ndarray] = None) -> np.ndarray:
    """Keep candidates whose uniform draw falls below ``pr``, raising ``pr`` until one does."""
    candidates = np.asarray(candidates)
    if candidates.size == 0:
        raise ValueError("no candidates")
    if not 0 < pr_base <= 1:
        raise ValueError("pr_base must lie in (0, 1]")
    if r is None:
        r = rng.random(candidates.shape[0])
    pr = pr_base
    while True:
        chosen = r < pr
        if chosen.any():
            return candidates[chosen]
        pr = min(pr + PR_STEP, 1.0)


def _sparse_mask(n: int, d: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Per row, DM ~ U{1..d} positions chosen uniformly without replacement."""
    dm = rng.integers(1, d + 1, size=n)
    keys = rng.random((n, d))
    pos = np.argsort(np.argsort(keys, axis=1), axis=1)
    return pos < dm[:, None], dm


def stabilized(x, s, gain):
    """``x + gain * (x - s)`` for gains in [-1, 0]; gain -1 lands exactly on ``s``."""
    x, s, gain = np.asarray(x, float), np.asarray(s, float), np.asarray(gain, float)
    out = x + gain * (x - s)
    # exact arithmetic stays on the segment [x, s]; clip away rounding drift
    out = np.clip(out, np.minimum(x, s), np.maximum(x, s))
    return np.where(gain == -1.0, s, out)


def stabilizing_impulses(pop: Population, indices, fn, budget: Budget, rng,
                         reference_mode: ReferenceMode = ReferenceMode.MIXED,
                         generation: int = 0) -> list[ImpulseEvent]:
    """Pull each target towards gbest (random gain) or a better random peer (gain -1).

    The candidate ``x + K (x - s)`` replaces ``x`` when it is no worse.
    Targets beyond the remaining budget are skipped.
    """
    indices = np.asarray(indices)[: max(budget.remaining, 0)]
    n = indices.shape[0]
    if n == 0:
        return []
    NP, D = pop.positions.shape
    X = pop.positions
    fit = pop.fitness

    # peer k != i, uniform over the others
    k = rng.integers(NP - 1, size=n)
    k = k + (k >= indices)
    mask, dm = _sparse_mask(n, D, rng)
    rand_gain = -rng.random((n, D))

    best = pop.best_index
    use_gbest = fit[indices] < fit[k]
    if reference_mode is ReferenceMode.GBEST_ONLY:
        use_gbest[:] = True
    ref_idx = np.where(use_gbest, best, k)
    S = X[ref_idx]
    gain = np.where(mask, np.where(use_gbest[:, None], rand_gain, -1.0), 0.0)
    Xi = X[indices]
    E = Xi - S
    cand = stabilized(Xi, S, gain)

    values = budget.evaluate(fn, cand)
    accept = values <= fit[indices]
    pop.replace(indices[accept], cand[accept], values[accept])

    return [
        ImpulseEvent(ImpulseKind.STABILIZING, int(indices[j]), gain[j], S[j], E[j],
                     bool(accept[j]), int(dm[j]), generation)
        for j in range(n)
    ]


def stabilizing_impulse(pop: Population, i: int, fn, budget: Budget, rng, **kw):
    events = stabilizing_impulses(pop, [i], fn, budget, rng, **kw)
    if not events:
        return pop[i], False, None
    return pop[i], events[0].accepted, events[0]


def population_box(pop: Population) -> tuple[np.ndarray, np.ndarray]:
    return pop.positions.min(axis=0), pop.positions.max(axis=0)


def _open_unit(rng, shape) -> np.ndarray:
    # uniform on the open interval (0, 1)
    return rng.integers(1, 2**53, size=shape) / 2.0**53


def destabilized(lo, hi, gain):
    """``lo + gain * (hi - lo)``, kept inside the box against rounding."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    return np.clip(lo + np.asarray(gain, float) * (hi - lo), lo, hi)


def destabilizing_impulses(pop: Population, indices, fn, budget: Budget, rng,
                           dm_mode: str = "all", generation: int = 0) -> list[ImpulseEvent]:
    """Move each target to ``x_L + K (x_U - x_L)``, K ~ U(0, 1), unconditionally.

    The box is taken once, before any target moves.  With ``dm_mode="subset"``
    only DM random coordinates are redrawn and the rest keep their values.
    """
    indices = np.asarray(indices)[: max(budget.remaining, 0)]
    n = indices.shape[0]
    if n == 0:
        return []
    D = pop.dim
    lo, hi = population_box(pop)
    E = hi - lo
    gain = _open_unit(rng, (n, D))
    cand = destabilized(lo, hi, gain)
    if dm_mode == "subset":
        mask, dm = _sparse_mask(n, D, rng)
        cand = np.where(mask, cand, pop.positions[indices])
        gain = np.where(mask, gain, 0.0)
    elif dm_mode == "all":
        dm = np.full(n, D)
    else:
        raise ValueError(f"unknown dm_mode {dm_mode!r}")
    values = budget.evaluate(fn, cand)
    pop.replace(indices, cand, values)
    return [
        ImpulseEvent(ImpulseKind.DESTABILIZING, int(indices[j]), gain[j], (lo, hi), E,
                     True, int(dm[j]), generation)
        for j in range(n)
    ]


def destabilizing_impulse(pop: Population, i: int, fn, budget: Budget, rng, **kw):
    events = destabilizing_impulses(pop, [i], fn, budget, rng, **kw)
    return pop[i], (events[0] if events else None)


def _candidates(pop: Population, M: int, ablation: AblationConfig, rng) -> np.ndarray:
    if ablation.ranking_mode is RankingMode.RANDOM:
        return rng.choice(pop.size, size=M, replace=False)
    return select_candidates(rank_population(pop, ablation.ranking_mode).combined, M)


def _shrink_M(state: EtiState, rng) -> None:
    state.M = int(rng.integers(state.LN, state.M + 1))


def eti_generation_hook(pop: Population, UP: int, state: EtiState, fn, budget: Budget, rng,
                        ablation: AblationConfig = AblationConfig(),
                        log: Optional[EventLog] = None, dm_mode: str = "all") -> tuple[Population, EtiState]:
    """Run the trigger logic once, after a DE generation produced ``UP`` replacements."""
    if not ablation.enabled:
        return pop, state
    state.UR_prev, state.gbest_prev = state.UR, state.gbest
    state.gbest = pop.best_fitness
    if state.gbest < state.gbest_prev:
        _shrink_M(state, rng)
    state.UR = update_rate(UP, pop.size)
    if budget.exhausted:
        return pop, state

    fes0 = budget.used_fes
    events: list[ImpulseEvent] = []
    gen = pop.generation

    if state.UR == 0:
        if ablation.zero_rate_branch:
            state.M = min(state.M, state.UN)
            cands = _candidates(pop, state.M, ablation, rng)
            chosen = random_selection(cands, state.pr_base, rng)
            events += destabilizing_impulses(pop, chosen, fn, budget, rng, dm_mode, gen)
    elif state.UR < state.UR_prev and ablation.stabilizing_branch:
        state.M = min(state.M, state.UN)
        cands = _candidates(pop, state.M, ablation, rng)
        stab = stabilizing_impulses(pop, cands, fn, budget, rng, ablation.reference_mode, gen)
        events += stab
        if stab and not any(e.accepted for e in stab) and ablation.fallback_branch:
            chosen = random_selection(cands, state.pr_base, rng)
            destab = destabilizing_impulses(pop, chosen, fn, budget, rng, dm_mode, gen)
            events += destab
            state.M += len(destab)
        if pop.best_fitness < state.gbest:
            _shrink_M(state, rng)

    state.impulse_fes += budget.used_fes - fes0
    if log is not None:
        for e in events:
            log.add(e)
    return pop, state
