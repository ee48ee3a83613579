import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from etide import eti
from etide.benchfn import ObjectiveFunction, make_suite
from etide.de import Budget, Population, initialize
from etide.eti import (EtiState, EventLog, ImpulseKind, destabilized, destabilizing_impulse,
                       destabilizing_impulses, eti_generation_hook, random_selection,
                       rank_population, select_candidates, stabilized, stabilizing_impulse,
                       stabilizing_impulses, update_rate)
from etide.variants import AblationConfig, EtiMode, RankingMode, ReferenceMode


def make_pop(positions, fitness=None, stagnation=None):
    positions = np.asarray(positions, dtype=float)
    n, d = positions.shape
    fitness = np.sum(positions**2, axis=1) if fitness is None else np.asarray(fitness, float)
    stagnation = np.zeros(n, dtype=np.int64) if stagnation is None else np.asarray(stagnation)
    return Population(positions.copy(), fitness, stagnation.astype(np.int64),
                      np.full(d, -100.0), np.full(d, 100.0))


def sphere(d):
    return ObjectiveFunction("sphere", "unimodal", "sphere", np.zeros(d), np.eye(d))


class Flat:
    """Objective that is 1 everywhere, so every stabilizing impulse is accepted."""

    def __call__(self, x):
        return np.ones(np.atleast_2d(x).shape[0])


# --- update rate ------------------------------------------------------------

@pytest.mark.parametrize("up,np_,ur", [(27, 100, 0.27), (0, 100, 0.0), (100, 100, 1.0)])
def test_update_rate(up, np_, ur):
    assert update_rate(up, np_) == ur


def test_update_rate_rejects_bad_input():
    with pytest.raises(ValueError):
        update_rate(0, 0)
    with pytest.raises(ValueError):
        update_rate(6, 5)


# --- ranking ----------------------------------------------------------------

def test_rank_hand_case():
    pop = make_pop(np.zeros((3, 1)), fitness=[3, 1, 2], stagnation=[0, 5, 2])
    rec = rank_population(pop)
    assert rec.fitness_rank.tolist() == [3, 1, 2]
    assert rec.stagnation_rank.tolist() == [1, 3, 2]
    assert rec.combined.tolist() == [4, 4, 4]


def test_rank_ties_by_index():
    pop = make_pop(np.zeros((6, 2)), fitness=np.full(6, 2.0), stagnation=np.full(6, 3))
    rec = rank_population(pop)
    assert rec.fitness_rank.tolist() == [1, 2, 3, 4, 5, 6]
    assert rec.stagnation_rank.tolist() == [1, 2, 3, 4, 5, 6]


def brute_ranks(values):
    n = len(values)
    return np.array([1 + sum(values[j] < values[i] or (values[j] == values[i] and j < i)
                             for j in range(n)) for i in range(n)])


def test_rank_and_candidates_match_brute_force():
    rng = np.random.default_rng(0)
    for trial in range(20):
        n = int(rng.integers(5, 30))
        fit = rng.integers(0, 6, n).astype(float) if trial % 2 else rng.normal(size=n)
        stag = rng.integers(0, 4, n)
        pop = make_pop(np.zeros((n, 1)), fitness=fit, stagnation=stag)
        rec = rank_population(pop)
        np.testing.assert_array_equal(rec.fitness_rank, brute_ranks(list(fit)))
        np.testing.assert_array_equal(rec.stagnation_rank, brute_ranks(list(stag)))
        assert sorted(rec.fitness_rank) == list(range(1, n + 1))
        R = rec.combined
        M = int(rng.integers(1, n + 1))
        expected = sorted(range(n), key=lambda i: (-R[i], i))[:M]
        assert select_candidates(R, M).tolist() == expected


def test_fitness_only_ranking_picks_worst_individuals():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = 15
        fit = rng.permutation(n).astype(float)
        pop = make_pop(np.zeros((n, 1)), fitness=fit)
        R = rank_population(pop, RankingMode.FITNESS_ONLY).combined
        M = int(rng.integers(1, n))
        assert set(select_candidates(R, M)) == set(np.argsort(fit)[-M:])


def test_stagnation_only_ranking():
    pop = make_pop(np.zeros((4, 1)), fitness=[0, 1, 2, 3], stagnation=[9, 0, 4, 1])
    R = rank_population(pop, RankingMode.STAGNATION_ONLY).combined
    assert select_candidates(R, 2).tolist() == [0, 2]


def test_select_candidates_edges():
    R = np.array([3, 7, 7, 1])
    assert select_candidates(R, 1).tolist() == [1]
    assert sorted(select_candidates(R, 4).tolist()) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        select_candidates(R, 0)
    with pytest.raises(ValueError):
        select_candidates(R, 5)


# --- random selection -------------------------------------------------------

def test_random_selection_direct_rule():
    out = random_selection(np.array([10, 11]), 0.2, None, r=np.array([0.1, 0.9]))
    assert out.tolist() == [10]


def test_random_selection_ratchets_to_one():
    # pr: 0.2, 0.4, 0.6, 0.8, 1.0 -> both selected only at 1.0
    out = random_selection(np.array([10, 11]), 0.2, None, r=np.array([0.95, 0.99]))
    assert out.tolist() == [10, 11]
    out = random_selection(np.array([10, 11]), 0.2, None, r=np.array([0.75, 0.99]))
    assert out.tolist() == [10]


def test_random_selection_single_candidate_always_chosen():
    rng = np.random.default_rng(0)
    for _ in range(200):
        assert random_selection(np.array([4]), 0.2, rng).tolist() == [4]


def test_random_selection_rate():
    rng = np.random.default_rng(0)
    sizes = [len(random_selection(np.arange(50), 0.2, rng)) for _ in range(400)]
    assert np.mean(sizes) == pytest.approx(10, rel=0.1)


def test_random_selection_validation():
    with pytest.raises(ValueError):
        random_selection(np.array([]), 0.2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        random_selection(np.array([1]), 0.0, np.random.default_rng(0))


# --- impulse geometry -------------------------------------------------------

def test_stabilized_hand_values():
    x, s = np.array([4.0, 8.0]), np.zeros(2)
    np.testing.assert_array_equal(stabilized(x, s, [-0.5, 0.0]), [2.0, 8.0])
    np.testing.assert_array_equal(stabilized(x, s, [-1.0, -1.0]), s)
    np.testing.assert_array_equal(stabilized(x, s, [0.0, 0.0]), x)
    awkward_x, awkward_s = np.array([0.1, -77.3]), np.array([1e-17, 33.3])
    np.testing.assert_array_equal(stabilized(awkward_x, awkward_s, [-1.0, -1.0]), awkward_s)


def test_destabilized_hand_values():
    lo, hi = np.array([-2.0]), np.array([6.0])
    assert destabilized(lo, hi, [0.25])[0] == 0.0
    assert destabilized(lo, hi, [1e-300])[0] == pytest.approx(-2.0)
    assert destabilized(lo, hi, [1 - 2**-53])[0] == pytest.approx(6.0)
    p = np.array([3.0, -1.0])
    np.testing.assert_array_equal(destabilized(p, p, [0.3, 0.9]), p)


def test_destabilizing_in_one_dimension_box():
    pop = make_pop([[-2.0], [0.0], [6.0]])
    rng = np.random.default_rng(0)
    events = destabilizing_impulses(pop, [1], sphere(1), Budget(10), rng)
    ev = events[0]
    expected = -2.0 + ev.gain[0] * 8.0
    assert pop.positions[1, 0] == pytest.approx(expected)
    np.testing.assert_array_equal(ev.reference[0], [-2.0])
    np.testing.assert_array_equal(ev.reference[1], [6.0])


def test_destabilizing_collapsed_population_stays_put():
    pop = make_pop(np.tile([1.5, -3.0, 7.0], (6, 1)))
    destabilizing_impulses(pop, [0, 3, 5], sphere(3), Budget(10), np.random.default_rng(2))
    assert np.all(pop.positions == [1.5, -3.0, 7.0])


def test_stabilizing_impulse_with_flat_objective_is_accepted():
    rng = np.random.default_rng(0)
    pop = make_pop(rng.uniform(-5, 5, (6, 4)), fitness=np.ones(6))
    pop.stagnation[:] = 4
    budget = Budget(5)
    ind, zeta, ev = stabilizing_impulse(pop, 2, Flat(), budget, rng)
    assert zeta and ev.accepted and budget.used_fes == 1
    assert pop.stagnation[2] == 0 and pop.stagnation[0] == 4
    np.testing.assert_array_equal(ind.position, pop.positions[2])


def test_stabilizing_impulse_rejected_keeps_target():
    # the target is the best point, any move towards others is worse
    pop = make_pop([[0.0, 0.0], [5.0, 5.0], [6.0, -6.0], [-7.0, 7.0], [8.0, 8.0]])
    before = pop.positions.copy()
    rng = np.random.default_rng(0)
    ind, zeta, ev = stabilizing_impulse(pop, 0, sphere(2), Budget(100), rng)
    # with x_0 the best, the reference is gbest (itself), so x+ == x and f ties
    assert zeta
    np.testing.assert_array_equal(pop.positions, before)


def test_stabilizing_reference_rule():
    rng = np.random.default_rng(3)
    for _ in range(300):
        pop = make_pop(rng.uniform(-50, 50, (7, 3)))
        i = int(rng.integers(7))
        snap = pop.copy()
        _, _, ev = stabilizing_impulse(pop, i, sphere(3), Budget(10), rng)
        nz = ev.gain != 0
        assert 1 <= nz.sum() == ev.dm <= 3
        assert np.all((ev.gain >= -1) & (ev.gain <= 0))
        if np.array_equal(ev.reference, snap.positions[snap.best_index]) and np.any(ev.gain[nz] != -1):
            continue  # gbest reference with random gains
        # peer reference: a different individual no better than... i.e. f(x_k) <= f(x_i)
        k = [j for j in range(7) if j != i and np.array_equal(snap.positions[j], ev.reference)]
        assert k and snap.fitness[k[0]] <= snap.fitness[i]
        assert np.all(ev.gain[nz] == -1.0)


def test_gbest_only_reference_mode():
    rng = np.random.default_rng(5)
    pop = make_pop(rng.uniform(-50, 50, (10, 3)))
    best = pop.positions[pop.best_index].copy()
    events = stabilizing_impulses(pop, np.arange(10), sphere(3), Budget(50), rng,
                                  reference_mode=ReferenceMode.GBEST_ONLY)
    for ev in events:
        np.testing.assert_array_equal(ev.reference, best)


def test_impulses_skip_when_budget_exhausted():
    rng = np.random.default_rng(0)
    pop = make_pop(rng.uniform(-1, 1, (6, 2)))
    budget = Budget(2)
    budget.evaluate(sphere(2), np.zeros((2, 2)))
    ind, zeta, ev = stabilizing_impulse(pop, 0, sphere(2), budget, rng)
    assert ev is None and not zeta
    ind, ev = destabilizing_impulse(pop, 0, sphere(2), budget, rng)
    assert ev is None
    budget = Budget(3)
    events = destabilizing_impulses(pop, [0, 1, 2, 3], sphere(2), budget, rng)
    assert len(events) == 3 and budget.used_fes == 3


def test_destabilizing_subset_mode():
    rng = np.random.default_rng(0)
    pop = make_pop(rng.uniform(-10, 10, (8, 6)))
    old = pop.positions.copy()
    events = destabilizing_impulses(pop, [0, 1, 2], sphere(6), Budget(10), rng, dm_mode="subset")
    for ev in events:
        kept = ev.gain == 0
        assert kept.sum() == 6 - ev.dm
        np.testing.assert_array_equal(pop.positions[ev.index][kept], old[ev.index][kept])
    with pytest.raises(ValueError):
        destabilizing_impulses(pop, [0], sphere(6), Budget(10), rng, dm_mode="some")


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 12), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_stabilizing_geometry_property(d, count, seed):
    rng = np.random.default_rng(seed)
    NP = 8
    pop = make_pop(rng.uniform(-100, 100, (NP, d)))
    snap = pop.copy()
    idx = rng.integers(0, NP, count)
    idx = np.unique(idx)
    events = stabilizing_impulses(pop, idx, sphere(d), Budget(100), rng)
    for ev in events:
        x = snap.positions[ev.index]
        s = ev.reference
        cand = stabilized(x, s, ev.gain)
        touched = ev.gain != 0
        assert np.all(cand[~touched] == x[~touched])
        assert np.all(cand >= np.minimum(x, s)) and np.all(cand <= np.maximum(x, s))
        assert np.all(np.abs(cand) <= 100)
        assert pop.fitness[ev.index] <= snap.fitness[ev.index]


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_destabilizing_geometry_property(d, seed):
    rng = np.random.default_rng(seed)
    pop = make_pop(rng.uniform(-100, 100, (6, d)))
    lo, hi = pop.positions.min(axis=0), pop.positions.max(axis=0)
    events = destabilizing_impulses(pop, [0, 2, 4], sphere(d), Budget(10), rng)
    for ev in events:
        assert np.all((ev.gain > 0) & (ev.gain < 1))
        x = pop.positions[ev.index]
        assert np.all(x >= lo) and np.all(x <= hi)
        assert pop.stagnation[ev.index] == 0
        assert pop.fitness[ev.index] == pytest.approx(sphere(d)(x), rel=1e-12)


# --- the generation hook ----------------------------------------------------

def hook_setup(n=5, d=3, seed=0, fitness=None):
    rng = np.random.default_rng(seed)
    pop = make_pop(rng.uniform(-10, 10, (n, d)), fitness=fitness)
    state = EtiState.start(pop)
    return pop, state, rng


def test_full_update_fires_nothing():
    pop, state, rng = hook_setup()
    for ur_prev in (0.0, 0.4, 1.0):
        state.UR = ur_prev
        budget = Budget(100)
        log = EventLog()
        eti_generation_hook(pop, 5, state, sphere(3), budget, rng, log=log)
        assert budget.used_fes == 0 and not log.events and state.UR == 1.0


def test_zero_update_relocates_inside_box():
    pop, state, rng = hook_setup(n=8)
    lo, hi = pop.positions.min(axis=0), pop.positions.max(axis=0)
    state.M = 4
    budget, log = Budget(100), EventLog()
    eti_generation_hook(pop, 0, state, sphere(3), budget, rng, log=log)
    assert 1 <= len(log.events) <= 4
    assert all(e.kind is ImpulseKind.DESTABILIZING for e in log.events)
    assert budget.used_fes == len(log.events) == state.impulse_fes
    for e in log.events:
        assert np.all(pop.positions[e.index] >= lo) and np.all(pop.positions[e.index] <= hi)


def test_rate_drop_with_single_candidate():
    pop, state, rng = hook_setup(fitness=np.ones(5))
    state.UR, state.M = 0.3, 1
    budget, log = Budget(100), EventLog()
    eti_generation_hook(pop, 1, state, Flat(), budget, rng, log=log)
    assert state.UR == 0.2
    assert budget.used_fes == 1
    assert len(log.events) == 1 and log.events[0].kind is ImpulseKind.STABILIZING
    assert log.events[0].accepted and state.M == 1


def worse(x):
    # cached population fitness is 0, every fresh evaluation returns 1
    return np.ones(np.atleast_2d(x).shape[0])


def test_failed_stabilizing_falls_back_and_grows_M():
    rng = np.random.default_rng(1)
    pop = make_pop(rng.uniform(-10, 10, (6, 2)), fitness=np.zeros(6))
    state = EtiState.start(pop)
    state.UR, state.M = 0.5, 3
    log = EventLog()
    eti_generation_hook(pop, 1, state, worse, Budget(100), rng, log=log)
    kinds = [e.kind for e in log.events]
    assert kinds[:3] == [ImpulseKind.STABILIZING] * 3
    assert not any(e.accepted for e in log.events[:3])
    n_destab = kinds.count(ImpulseKind.DESTABILIZING)
    assert n_destab >= 1
    assert state.M == 3 + n_destab
    # fallback targets come from the same three candidates
    assert {e.index for e in log.events[3:]} <= {e.index for e in log.events[:3]}


def test_fallback_disabled_in_eti3_and_eti4():
    for mode in (EtiMode.ETI3, EtiMode.ETI4):
        rng = np.random.default_rng(1)
        pop = make_pop(rng.uniform(-10, 10, (6, 2)), fitness=np.zeros(6))
        state = EtiState.start(pop)
        state.UR, state.M = 0.5, 3
        log = EventLog()
        eti_generation_hook(pop, 1, state, worse, Budget(100), rng, AblationConfig(mode), log)
        assert all(e.kind is ImpulseKind.STABILIZING for e in log.events)
        assert state.M == 3


def test_branch_routing_per_ablation():
    cases = {
        EtiMode.ETI1: (True, False),
        EtiMode.ETI2: (False, True),
        EtiMode.ETI3: (True, True),
        EtiMode.ETI4: (False, True),
        EtiMode.FULL: (True, True),
        EtiMode.OFF: (False, False),
    }
    for mode, (zero_fires, drop_fires) in cases.items():
        for up, ur_prev, fires in ((0, 0.4, zero_fires), (1, 0.4, drop_fires)):
            pop, state, rng = hook_setup(fitness=np.ones(5))
            state.UR = ur_prev
            budget = Budget(100)
            eti_generation_hook(pop, up, state, Flat(), budget, rng, AblationConfig(mode))
            assert (budget.used_fes > 0) == fires, (mode, up)


def test_new_best_shrinks_M():
    pop, state, rng = hook_setup(n=20, seed=3)
    state.M, state.gbest = 15, pop.best_fitness + 1.0
    state.UR = 0.5
    eti_generation_hook(pop, 10, state, sphere(3), Budget(100), rng)
    assert state.LN <= state.M <= 15


def test_M_capped_by_upper_bound_at_selection():
    pop, state, rng = hook_setup(n=6)
    state.UN, state.M = 4, 9
    log = EventLog()
    eti_generation_hook(pop, 0, state, sphere(3), Budget(100), rng, log=log)
    assert state.M == 4


def test_random_ranking_mode_draws_distinct_candidates():
    pop, state, rng = hook_setup(n=10, fitness=np.ones(10))
    state.UR, state.M = 0.9, 10
    log = EventLog()
    eti_generation_hook(pop, 1, state, Flat(), Budget(100), rng,
                        AblationConfig(EtiMode.FULL, ranking_mode=RankingMode.RANDOM), log)
    assert sorted(e.index for e in log.events) == list(range(10))


def test_hook_is_noop_on_exhausted_budget():
    pop, state, rng = hook_setup()
    budget = Budget(1)
    budget.evaluate(sphere(3), np.zeros(3))
    eti_generation_hook(pop, 0, state, sphere(3), budget, rng)
    assert budget.used_fes == 1


def test_state_start_validation():
    pop, _, _ = hook_setup()
    with pytest.raises(ValueError):
        EtiState.start(pop, LN=3, UN=2)
    st_ = EtiState.start(pop)
    assert (st_.M, st_.LN, st_.UN, st_.pr_base) == (1, 1, 5, 0.2)


def test_event_log_stream_and_counts():
    buf = io.StringIO()
    log = EventLog(keep=False, stream=buf)
    pop, state, rng = hook_setup(n=8)
    state.M = 8
    eti_generation_hook(pop, 0, state, sphere(3), Budget(100), rng, log=log)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert lines and not log.events
    assert log.counts["destabilizing"] == len(lines)
    assert set(lines[0]) == {"generation", "kind", "index", "DM", "zeta"}
    assert lines[0]["kind"] == "destabilizing" and lines[0]["zeta"] is True


def test_hook_invariants_over_real_runs():
    from etide.de import StrategyParams, evolve_generation

    fn = make_suite(1, 5)[9]
    for mode in EtiMode:
        if mode is EtiMode.OFF:
            continue
        rng = np.random.default_rng(7)
        budget = Budget(6000)
        pop = initialize(fn, 20, rng, budget)
        state = EtiState.start(pop)
        log = EventLog()
        params = StrategyParams("rand/1")
        while not budget.exhausted:
            sel = evolve_generation(pop, fn, params, budget, rng)
            M_before, used = state.M, budget.used_fes
            n_events = len(log.events)
            eti_generation_hook(pop, sel.up, state, fn, budget, rng, AblationConfig(mode), log)
            new = log.events[n_events:]
            assert budget.used_fes - used == len(new)
            assert state.M >= state.LN
            if not any(e.kind is ImpulseKind.DESTABILIZING for e in new):
                assert state.M <= max(M_before, state.LN)
            assert np.all(np.abs(pop.positions) <= 100)
            np.testing.assert_allclose(pop.fitness, fn(pop.positions), rtol=1e-12)
        assert budget.used_fes == 6000
        assert state.impulse_fes == len(log.events)
        kinds = {e.kind for e in log.events}
        if mode is EtiMode.ETI1:
            assert ImpulseKind.STABILIZING not in kinds
        if mode is EtiMode.ETI4:
            assert ImpulseKind.DESTABILIZING not in kinds
