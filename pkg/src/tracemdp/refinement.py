"""Verification-and-refinement loop.

Each iteration rebuilds the store, checks the thresholded reachability
property, and, on violation, tries to realize the diagnostic witness inside
the observed trace trie.  A witness whose prefix is realizable end to end is
a real counterexample; otherwise the leaf at the earliest divergence point
is split by the max-gain predicate and the loop repeats.  When the
divergence leaf admits no beneficial split, earlier witness leaves are tried
before giving up.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .checker import ReachQuery, check
from .errors import UnknownLeaf
from .linked_store import LabelingConfig, LinkedStore, apply_split, build
from .predicate_tree import (
    END_LABEL,
    LabeledBatch,
    LeafSplit,
    PredicateTree,
    SplitRejected,
    TreeConfig,
    split_leaf,
)
from .trace_model import TraceLog
from .trace_trie import AbstractPath, Ref


@dataclass(frozen=True)
class RefinementConfig:
    """Loop bounds plus the property under verification.

    ``min_leaf_size`` defaults to 1 here, unlike initial construction:
    refinement targets small divergence populations inside one leaf.
    """

    property: ReachQuery
    min_gain: float = 0.01
    max_depth: int = 12
    max_leaves: int = 256
    max_iterations: int = 20
    min_leaf_size: int = 1
    epsilon: float = 1e-8
    vi_max_iters: int = 100_000
    strict_variable_exclusion: bool = False

    def __post_init__(self) -> None:
        if self.max_depth <= 0 or self.max_leaves <= 0 or self.min_leaf_size <= 0:
            raise ValueError("bounds must be positive")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")

    def tree_config(self) -> TreeConfig:
        return TreeConfig(
            min_gain=self.min_gain,
            max_depth=self.max_depth,
            max_leaves=self.max_leaves,
            min_leaf_size=self.min_leaf_size,
            strict_variable_exclusion=self.strict_variable_exclusion,
        )


@dataclass(frozen=True)
class Real:
    """The witness is realized by observed behavior."""

    refs: frozenset[Ref]


@dataclass(frozen=True)
class Spurious:
    """The witness diverges from every observed prefix at step ``index``."""

    index: int
    leaf: int


def concretize(store: LinkedStore, witness: AbstractPath) -> Real | Spurious:
    """Classifies a witness as realizable (with concrete refs) or spurious.

    Realizability is exact prefix support in the trie; the spurious case
    reports the earliest divergence index k and the abstract state s_k
    where the first unsupported step starts.
    """
    node = store.trie.walk(witness)
    if node is not None:
        return Real(frozenset(node.record_refs))
    k = store.trie.earliest_divergence(witness)
    assert k is not None  # an unsupported path always has a divergence index
    return Spurious(k, witness.states[k])


def batch_for_leaf(store: LinkedStore, abstract_id: int) -> LabeledBatch:
    """Concrete states behind a leaf, labeled by their next action."""
    handle = store.map_graph[abstract_id]
    states = []
    labels = []
    for node_id in sorted(handle.endpoints):
        for trace_idx, state_idx in sorted(store.trie.nodes[node_id].record_refs):
            trace = store.log[trace_idx]
            states.append(trace.state_at(state_idx))
            labels.append(
                trace.steps[state_idx].action.name
                if state_idx < len(trace.steps)
                else END_LABEL
            )
    return LabeledBatch(states, labels)


def refine_once(
    store: LinkedStore, spurious: Spurious, cfg: RefinementConfig
) -> tuple[LinkedStore, LeafSplit] | SplitRejected:
    """Splits the divergence leaf by max gain, excluding path predicates."""
    try:
        leaf_node = store.tree.leaf_node_of(spurious.leaf)
    except UnknownLeaf:
        return SplitRejected("no_candidates")
    excluded = {
        (p.var if cfg.strict_variable_exclusion else p.key())
        for p in store.tree.path_predicates(leaf_node)
    }
    batch = batch_for_leaf(store, spurious.leaf)
    result = split_leaf(store.tree, spurious.leaf, batch, excluded, cfg.tree_config())
    if isinstance(result, SplitRejected):
        return result
    return apply_split(store, result), result


@dataclass
class LoopOutcome:
    """Terminal result of the loop plus its per-iteration record."""

    kind: str  # verified | real_counterexample | exhausted
    iterations: list[dict] = field(default_factory=list)
    witness_path: AbstractPath | None = None
    witness_refs: frozenset[Ref] | None = None
    reason: str | None = None
    store: LinkedStore | None = None

    @property
    def verified(self) -> bool:
        return self.kind == "verified"


def verify_refine_loop(
    log: TraceLog,
    initial_tree: PredicateTree,
    cfg: RefinementConfig,
    labeling: LabelingConfig | None = None,
    on_iteration: Callable[[LinkedStore, dict], None] | None = None,
) -> LoopOutcome:
    """Runs check / concretize / refine until a terminal outcome.

    Unthresholded properties run in report-only mode: the bound is computed
    once and the loop ends as verified without refining.  The iteration log
    records, per round, the leaf count, the computed bound, the verdict, and
    the refinement action taken.
    """
    labeling = labeling or LabelingConfig()
    store = build(log, initial_tree, labeling)
    outcome = LoopOutcome(kind="exhausted", reason="max_iterations")

    def record(entry: dict) -> None:
        outcome.iterations.append(entry)
        if on_iteration is not None:
            on_iteration(store, entry)

    for iteration in range(cfg.max_iterations):
        result = check(store.amdp, cfg.property, cfg.epsilon, cfg.vi_max_iters)
        entry: dict = {"iter": iteration, "leaves": store.tree.n_leaves, "bound": result.value}

        if cfg.property.threshold is None:
            entry["verdict"] = "report_only"
            entry["action"] = "stop"
            record(entry)
            outcome.kind = "verified"
            outcome.reason = "report_only"
            break

        entry["verdict"] = "satisfied" if result.verdict else "violated"
        if result.verdict:
            entry["action"] = "stop"
            record(entry)
            outcome.kind = "verified"
            outcome.reason = None
            break

        if result.witness is None:
            entry["action"] = "stop"
            record(entry)
            outcome.reason = "no_witness_path"
            break

        realized = concretize(store, result.witness.path)
        if isinstance(realized, Real):
            entry["action"] = "real_ce"
            record(entry)
            outcome.kind = "real_counterexample"
            outcome.witness_path = result.witness.path
            outcome.witness_refs = realized.refs
            outcome.reason = None
            break

        refined: LinkedStore | None = None
        for j in range(realized.index, -1, -1):
            attempt = refine_once(store, Spurious(j, result.witness.path.states[j]), cfg)
            if isinstance(attempt, SplitRejected):
                continue
            refined, split = attempt
            entry["action"] = "split"
            entry["leaf_split"] = split.parent_abstract
            entry["predicate"] = str(split.predicate)
            break
        if refined is None:
            entry["action"] = "stop"
            record(entry)
            outcome.reason = "no_beneficial_split"
            break

        record(entry)
        store = refined

    outcome.store = store
    return outcome
