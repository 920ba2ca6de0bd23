import itertools
import math

import numpy as np
import pytest

from tracemdp.amdp import Amdp
from tracemdp.checker import (
    ReachQuery,
    check,
    optimizing_scheduler,
    parse_property,
    reach_values,
)
from tracemdp.errors import PropertySyntaxError
from tracemdp.trace_trie import AbstractPath


def model_from_counts(counts, labels=None, initial=(0,)):
    """Amdp from {(s, a, s'): count}."""
    m = Amdp()
    for (s, a, d), n in counts.items():
        m.ingest(s, a, d, weight=n)
    for s in initial:
        m.record_initial(s)
    for name, states in (labels or {}).items():
        m.labels[name] = set(states)
    return m


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def chain_reach_by_iteration(states, chain, target, iters=400_000, tol=1e-13):
    """Reachability in a Markov chain by plain linear iteration."""
    x = {s: 1.0 if s in target else 0.0 for s in states}
    for _ in range(iters):
        delta = 0.0
        for s in states:
            if s in target or s not in chain:
                continue
            new = sum(p * x[d] for d, p in chain[s])
            delta = max(delta, abs(new - x[s]))
            x[s] = new
        if delta < tol:
            break
    return x


def enumerate_scheduler_values(model, target, direction):
    """Per-state optimum over all memoryless deterministic schedulers."""
    states = sorted(model.states)
    decidable = [s for s in states if s not in target and model.enabled_actions(s)]
    action_sets = [model.enabled_actions(s) for s in decidable]
    best = {s: (1.0 if s in target else (-math.inf if direction == "max" else math.inf)) for s in states}
    for combo in itertools.product(*action_sets) if decidable else [()]:
        chain = {s: model.successors(s, a) for s, a in zip(decidable, combo)}
        x = chain_reach_by_iteration(states, chain, target)
        for s in states:
            if s in target:
                continue
            if direction == "max":
                best[s] = max(best[s], x[s])
            else:
                best[s] = min(best[s], x[s])
    for s in states:
        if best[s] in (math.inf, -math.inf):
            best[s] = 1.0 if s in target else 0.0
    return best


def random_model(rng, max_states=6, max_actions=3):
    n = int(rng.integers(2, max_states + 1))
    m = Amdp()
    for s in range(n):
        m.add_state(s)
        for a in range(int(rng.integers(1, max_actions + 1))):
            if rng.uniform() < 0.15 and s > 0:
                continue  # occasional terminal rows
            support = rng.choice(n, size=int(rng.integers(1, min(3, n) + 1)), replace=False)
            for dst in support:
                m.ingest(s, f"a{a}", int(dst), weight=int(rng.integers(1, 10)))
    m.record_initial(0)
    targets = {int(s) for s in rng.choice(n, size=int(rng.integers(0, n + 1)), replace=False)}
    m.labels["goal"] = targets
    return m


# ---------------------------------------------------------------------------
# Property parsing
# ---------------------------------------------------------------------------

class TestParseProperty:
    def test_unthresholded(self):
        q = parse_property('Pmax=? [F "success"]')
        assert q == ReachQuery("max", "success", None)

    def test_min(self):
        assert parse_property('Pmin=? [F "failure"]').direction == "min"

    def test_thresholded(self):
        q = parse_property('Pmin>=0.1 [F "failure"]')
        assert q.threshold == (">=", 0.1)
        assert not q.satisfied_by(0.05)
        assert q.satisfied_by(0.2)

    def test_diamond_accepted(self):
        assert parse_property('Pmax=? [◇ "success"]').target_label == "success"

    def test_garbage_rejected(self):
        for bad in ("P=? [F success]", 'Pmax [F "x"]', 'Pmax=? [G "x"]', ""):
            with pytest.raises(PropertySyntaxError):
                parse_property(bad)

    def test_round_trip_str(self):
        q = parse_property('Pmin<=0.05 [F "failure"]')
        assert parse_property(str(q)) == q


# ---------------------------------------------------------------------------
# Value iteration
# ---------------------------------------------------------------------------

class TestReachValues:
    def test_target_state_is_one(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": {1}})
        vi = reach_values(m, ReachQuery("max", "goal"))
        assert vi.values[1] == 1.0
        assert vi.values[0] == pytest.approx(1.0)

    def test_coin_flip_half(self):
        m = model_from_counts(
            {(0, "a", 1): 1, (0, "a", 2): 1}, labels={"goal": {1}}
        )
        vi = reach_values(m, ReachQuery("max", "goal"))
        assert vi.values[0] == pytest.approx(0.5)

    def test_empty_target(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": set()})
        vi = reach_values(m, ReachQuery("max", "goal"))
        assert vi.values[0] == 0.0

    def test_all_states_target(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": {0, 1}})
        assert reach_values(m, ReachQuery("max", "goal")).values[0] == 1.0

    def test_zero_cycle_pinned(self):
        # 0 -> {1 (cycle with 2), 3 (goal)}; the 1-2 cycle cannot reach goal.
        m = model_from_counts(
            {
                (0, "a", 1): 1,
                (0, "a", 3): 1,
                (1, "a", 2): 1,
                (2, "a", 1): 1,
            },
            labels={"goal": {3}},
        )
        vi = reach_values(m, ReachQuery("max", "goal"))
        assert vi.values[1] == 0.0
        assert vi.values[2] == 0.0
        assert vi.values[0] == pytest.approx(0.5)

    def test_monotone_from_zero(self):
        rng = np.random.default_rng(5)
        for direction in ("max", "min"):
            for _ in range(10):
                m = random_model(rng)
                vi = reach_values(
                    m, ReachQuery(direction, "goal"), record_history=True, max_iters=300
                )
                prev = {s: 0.0 for s in m.states}
                for snapshot in vi.history:
                    for s, v in snapshot.items():
                        assert v >= prev[s] - 1e-12
                        assert -1e-12 <= v <= 1 + 1e-12
                    prev = snapshot

    def test_min_leq_max(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            m = random_model(rng)
            vmax = reach_values(m, ReachQuery("max", "goal")).values
            vmin = reach_values(m, ReachQuery("min", "goal")).values
            for s in m.states:
                assert vmin[s] <= vmax[s] + 1e-9

    def test_matches_scheduler_enumeration(self):
        rng = np.random.default_rng(2)
        for _ in range(25):
            m = random_model(rng)
            target = m.labels["goal"]
            for direction in ("max", "min"):
                vi = reach_values(m, ReachQuery(direction, "goal"))
                oracle = enumerate_scheduler_values(m, target, direction)
                for s in m.states:
                    assert vi.values[s] == pytest.approx(oracle[s], abs=1e-6)

    def test_not_converged_flag(self):
        m = model_from_counts(
            {(0, "a", 0): 99, (0, "a", 1): 1}, labels={"goal": {1}}
        )
        vi = reach_values(m, ReachQuery("max", "goal"), epsilon=1e-12, max_iters=3)
        assert not vi.converged
        assert vi.iterations == 3


# ---------------------------------------------------------------------------
# check() and witnesses
# ---------------------------------------------------------------------------

class TestCheck:
    def test_verdict_and_per_initial(self):
        m = model_from_counts(
            {(0, "a", 1): 1, (0, "a", 2): 1, (2, "b", 1): 1},
            labels={"goal": {1}},
            initial=(0, 0, 2),
        )
        result = check(m, ReachQuery("max", "goal", ("<=", 0.9)))
        assert result.value == pytest.approx(1.0)
        assert result.verdict is False
        assert set(result.per_initial) == {0, 2}

    def test_empty_target_threshold_satisfied(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": set()})
        result = check(m, ReachQuery("max", "goal", ("<=", 0.0)))
        assert result.value == 0.0
        assert result.verdict is True

    def test_witness_deterministic_chain(self):
        m = model_from_counts(
            {(0, "a", 1): 1, (1, "b", 2): 1},
            labels={"goal": {2}},
        )
        result = check(m, ReachQuery("max", "goal"))
        assert result.witness.path == AbstractPath((0, 1, 2), ("a", "b"))
        assert result.witness.probability == pytest.approx(1.0)

    def test_witness_unreachable_none(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": {5}})
        m.add_state(5)
        result = check(m, ReachQuery("max", "goal"))
        assert result.witness is None

    def test_witness_initial_in_target(self):
        m = model_from_counts({(0, "a", 1): 1}, labels={"goal": {0}})
        result = check(m, ReachQuery("max", "goal"))
        assert result.witness.path == AbstractPath((0,), ())

    def test_witness_most_probable_path(self):
        rng = np.random.default_rng(33)
        for _ in range(15):
            m = random_model(rng)
            target = m.labels["goal"]
            if not target or m.modal_initial() in target:
                continue
            result = check(m, ReachQuery("max", "goal"))
            if result.witness is None:
                continue
            sched = result.witness.scheduler
            # Exhaustive path enumeration up to length 10 under the scheduler.
            best = 0.0
            frontier = [((m.modal_initial(),), 1.0)]
            for _depth in range(10):
                grown = []
                for path, prob in frontier:
                    last = path[-1]
                    if last in target:
                        best = max(best, prob)
                        continue
                    action = sched.get(last)
                    if action is None:
                        continue
                    for dst, p in m.successors(last, action):
                        if p > 0:
                            grown.append((path + (dst,), prob * p))
                frontier = grown
            for path, prob in frontier:
                if path[-1] in target:
                    best = max(best, prob)
            if result.witness.path.n_transitions <= 10:
                assert result.witness.probability == pytest.approx(best, rel=1e-9)

    def test_scheduler_tie_break_lexicographic(self):
        m = model_from_counts(
            {(0, "zz", 1): 1, (0, "aa", 1): 1},
            labels={"goal": {1}},
        )
        values = reach_values(m, ReachQuery("max", "goal")).values
        sched = optimizing_scheduler(m, values, ReachQuery("max", "goal"))
        assert sched[0] == "aa"

    def test_no_initial_state(self):
        m = Amdp()
        m.ingest(0, "a", 1)
        m.labels["goal"] = {1}
        result = check(m, ReachQuery("max", "goal"))
        assert result.value is None
        assert result.witness is None


def test_sandwich_on_synthetic_labels():
    # Empirical success frequency must lie inside [Pmin - 0.02, Pmax + 0.02].
    rng = np.random.default_rng(4)
    m = Amdp()
    n_success = 0
    n_runs = 200
    for _ in range(n_runs):
        m.record_initial(0)
        state = 0
        for _step in range(30):
            nxt = 1 if rng.uniform() < 0.3 else (2 if rng.uniform() < 0.5 else 0)
            m.ingest(state, "go", nxt)
            state = nxt
            if state == 1:
                n_success += 1
                break
            if state == 2:
                break
    m.labels["success"] = {1}
    empirical = n_success / n_runs
    vmax = check(m, ReachQuery("max", "success")).value
    vmin = check(m, ReachQuery("min", "success")).value
    assert vmin - 0.02 <= empirical <= vmax + 0.02
