import numpy as np
import pytest

from conftest import mk_log, mk_trace
from tracemdp.errors import StaleSplit
from tracemdp.linked_store import (
    LabelingConfig,
    apply_split,
    build,
    check_invariants,
    load_store,
    save_store,
)
from tracemdp.predicate_tree import (
    PredicateTree,
    SplitRejected,
    TreeConfig,
    build_initial_tree,
    split_leaf,
)
from tracemdp.refinement import batch_for_leaf
from tracemdp.trace_trie import ROOT_ID


def small_log():
    traces = [
        mk_trace(f"r{i}", [{"x": 0, "k": i}, {"x": 1, "k": i}, {"x": 2, "k": i}], ["a", "b"])
        for i in range(4)
    ] + [
        mk_trace(f"w{i}", [{"x": 0, "k": i}, {"x": 5, "k": i}], ["c"], status="failure")
        for i in range(3)
    ]
    return mk_log(traces)


def random_log(rng, n_traces=30, max_len=10):
    traces = []
    for i in range(n_traces):
        n = int(rng.integers(1, max_len + 1))
        xs = [float(rng.integers(0, 8)) for _ in range(n + 1)]
        ys = [float(rng.uniform()) for _ in range(n + 1)]
        traces.append(
            mk_trace(
                f"t{i}",
                [{"x": x, "y": y} for x, y in zip(xs, ys)],
                [f"op{rng.integers(0, 3)}" for _ in range(n)],
                status="success" if rng.uniform() < 0.8 else "failure",
            )
        )
    return mk_log(traces)


def stores_equal(a, b) -> bool:
    return (
        a.tree.structurally_equal(b.tree)
        and a.trie.structurally_equal(b.trie)
        and a.amdp.equal_counts(b.amdp)
        and a.amdp.labels == b.amdp.labels
        and {h.graph: h for h in a.handles} == {h.graph: h for h in b.handles}
    )


class TestBuild:
    def test_single_leaf_one_trace(self):
        log = mk_log([mk_trace("t", [{"x": 0}, {"x": 1}], ["go"])])
        store = build(log, PredicateTree.single_leaf())
        assert len(store.handles) == 1
        handle = store.handles[0]
        assert handle.endpoints == set(store.trie.nodes) - {ROOT_ID}
        assert check_invariants(store) == []

    def test_empty_log_isolated_states(self):
        log = mk_log([])
        tree = PredicateTree.single_leaf()
        store = build(log, tree)
        assert store.amdp.states == {0}
        assert store.trie.node_count == 0
        assert store.amdp.terminal_states() == {0}
        assert check_invariants(store) == []

    def test_fresh_store_invariants(self):
        log = small_log()
        tree = build_initial_tree(log, TreeConfig(min_leaf_size=1))
        store = build(log, tree)
        assert check_invariants(store) == []

    def test_terminal_labels_applied(self):
        log = small_log()
        tree = build_initial_tree(log, TreeConfig(min_leaf_size=1))
        store = build(log, tree)
        fail_end = tree.abstract(log[4].state_at(1))
        assert fail_end in store.amdp.labels["failure"]


class TestCheckInvariants:
    def test_corrupted_map_trie_single_violation(self):
        log = small_log()
        tree = build_initial_tree(log, TreeConfig(min_leaf_size=1))
        store = build(log, tree)
        victim = next(iter(store.map_trie))
        other = next(h for h in store.handles if h is not store.map_trie[victim])
        store.map_trie[victim] = other
        violations = check_invariants(store)
        assert len(violations) >= 1
        assert all(v.startswith("I2") for v in violations)

    def test_missing_state_is_i4_violation(self):
        log = small_log()
        store = build(log, PredicateTree.single_leaf())
        store.amdp.states.add(999)
        violations = check_invariants(store)
        assert any(v.startswith("I4") for v in violations)

    def test_randomized_refinement_fuzzing(self):
        rng = np.random.default_rng(42)
        log = random_log(rng)
        tree = build_initial_tree(log, TreeConfig(min_gain=0.3, min_leaf_size=2))
        store = build(log, tree)
        assert check_invariants(store) == []
        for _ in range(10):
            leaves = list(store.tree.abstract_ids())
            rng.shuffle(leaves)
            for leaf in leaves:
                batch = batch_for_leaf(store, leaf)
                result = split_leaf(
                    store.tree, leaf, batch, cfg=TreeConfig(min_gain=0.0, min_leaf_size=1)
                )
                if isinstance(result, SplitRejected):
                    continue
                store = apply_split(store, result)
                break
            else:
                break
            assert check_invariants(store) == []


class TestApplySplit:
    def test_equals_full_rebuild(self):
        rng = np.random.default_rng(7)
        log = random_log(rng)
        tree = build_initial_tree(log, TreeConfig(min_gain=0.3, min_leaf_size=2))
        store = build(log, tree)
        for leaf in store.tree.abstract_ids():
            batch = batch_for_leaf(store, leaf)
            result = split_leaf(
                store.tree, leaf, batch, cfg=TreeConfig(min_gain=0.0, min_leaf_size=1)
            )
            if isinstance(result, SplitRejected):
                continue
            incremental = apply_split(store, result)
            oracle = build(log, result.tree, store.labeling)
            assert stores_equal(incremental, oracle)
            break

    def test_one_sided_split_isolates_sibling(self):
        # Split the single leaf by a predicate satisfied by no observed state.
        from tracemdp.predicate_tree import ScalarThreshold

        log = mk_log([mk_trace("t", [{"x": 0}, {"x": 1}], ["go"])])
        store = build(log, PredicateTree.single_leaf())
        tree2, a0, a1 = store.tree.split(store.tree.leaf_node_of(0), ScalarThreshold("x", 99.0))
        from tracemdp.predicate_tree import LeafSplit

        split = LeafSplit(tree2, store.tree, 0, (a0, a1), ScalarThreshold("x", 99.0))
        refined = apply_split(store, split)
        handle0 = refined.map_graph[a0]
        handle1 = refined.map_graph[a1]
        assert len(handle0.endpoints) == refined.trie.node_count
        assert handle1.endpoints == frozenset()
        assert check_invariants(refined) == []

    def test_stale_split_rejected(self):
        log = small_log()
        tree = build_initial_tree(log, TreeConfig(min_leaf_size=1))
        store = build(log, tree)
        for leaf in store.tree.abstract_ids():
            batch = batch_for_leaf(store, leaf)
            result = split_leaf(
                store.tree, leaf, batch, cfg=TreeConfig(min_gain=0.0, min_leaf_size=1)
            )
            if isinstance(result, SplitRejected):
                continue
            refined = apply_split(store, result)
            with pytest.raises(StaleSplit):
                apply_split(refined, result)
            return
        pytest.fail("no splittable leaf in fixture")

    def test_handle_ids_not_reused(self):
        rng = np.random.default_rng(3)
        log = random_log(rng, n_traces=20)
        store = build(log, PredicateTree.single_leaf())
        seen: set[int] = set()
        for _ in range(6):
            live = {h.graph for h in store.handles}
            assert not live & seen, "a retired abstract-state id came back"
            splittable = False
            for leaf in store.tree.abstract_ids():
                result = split_leaf(
                    store.tree,
                    leaf,
                    batch_for_leaf(store, leaf),
                    cfg=TreeConfig(min_gain=0.0, min_leaf_size=1),
                )
                if isinstance(result, SplitRejected):
                    continue
                seen.add(leaf)
                store = apply_split(store, result)
                splittable = True
                break
            if not splittable:
                break


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        log = small_log()
        log_path = tmp_path / "log.jsonl"
        from tracemdp.trace_model import write_trace_log

        write_trace_log(log, str(log_path))
        tree = build_initial_tree(log, TreeConfig(min_leaf_size=1))
        store = build(log, tree, LabelingConfig(success_mode="all", failure_mode="any"))
        store_dir = tmp_path / "store"
        save_store(store, str(store_dir), str(log_path))
        reloaded = load_store(str(store_dir))
        assert stores_equal(store, reloaded)
        # Byte-identical artifacts on re-save.
        save_store(reloaded, str(tmp_path / "store2"), str(log_path))
        for name in ("tree.json", "model.tra", "model.lab", "manifest.json"):
            a = (store_dir / name).read_bytes()
            b = (tmp_path / "store2" / name).read_bytes()
            assert a == b, name
