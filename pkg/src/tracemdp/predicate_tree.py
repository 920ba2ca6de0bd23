"""Predicate grammar, entropy / information gain, and decision-tree abstraction.

A predicate tree routes a concrete state from the root to a leaf by
evaluating one predicate per internal node (false -> child 0, true ->
child 1).  Leaves are the abstract states.  Trees are immutable values:
construction and splitting return new trees, and abstract-state ids are
never reused after a split retires them.

Splits are chosen greedily by information gain of the next-action label
distribution, computed with base-2 entropy.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyBatch, EmptyLog, SchemaViolation, UnknownLeaf
from .trace_model import (
    BOOLEAN,
    COLLECTION,
    INTEGER,
    NUMBER,
    TEXT,
    ConcreteState,
    TraceLog,
    Value,
)

# Class label assigned to a trace's final state, which has no next action.
END_LABEL = "⊥"  # ⊥


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Predicate:
    """Base predicate over one variable.  Subclasses define the test."""

    var: str

    kind = "abstract"

    def test(self, value: Value) -> bool:
        raise NotImplementedError

    def evaluate(self, state: ConcreteState) -> bool:
        """Total and deterministic on any schema-conforming state."""
        return self.test(state.value(self.var))

    def mask(self, column: np.ndarray) -> np.ndarray:
        """Vectorized test over a feature column (see LabeledBatch.column)."""
        raise NotImplementedError

    def sort_key(self) -> tuple:
        """Deterministic tie-break order: (variable, kind, parameter)."""
        raise NotImplementedError

    def key(self) -> tuple:
        """Identity used for exclusion along a tree path."""
        return self.sort_key()


@dataclass(frozen=True)
class ScalarThreshold(Predicate):
    """value(var) > threshold, for numeric variables."""

    threshold: float = 0.0
    kind = "num_gt"

    def test(self, value: Value) -> bool:
        return value.numeric > self.threshold

    def mask(self, column: np.ndarray) -> np.ndarray:
        return column > self.threshold

    def sort_key(self) -> tuple:
        return (self.var, self.kind, float(self.threshold), "")

    def __str__(self) -> str:
        return f"{self.var} > {self.threshold:g}"


@dataclass(frozen=True)
class BooleanEq(Predicate):
    """value(var) == expected, for boolean flags."""

    expected: bool = True
    kind = "bool_eq"

    def test(self, value: Value) -> bool:
        if value.kind != BOOLEAN:
            raise SchemaViolation(f"{self.var!r} is not boolean")
        return bool(value.data) == self.expected

    def mask(self, column: np.ndarray) -> np.ndarray:
        return column == self.expected

    def sort_key(self) -> tuple:
        return (self.var, self.kind, float(self.expected), "")

    def __str__(self) -> str:
        return f"{self.var} == {str(self.expected).lower()}"


@dataclass(frozen=True)
class TextEq(Predicate):
    """value(var) == expected, for text variables (identity only)."""

    expected: str = ""
    kind = "text_eq"

    def test(self, value: Value) -> bool:
        if value.kind != TEXT:
            raise SchemaViolation(f"{self.var!r} is not text")
        return value.data == self.expected

    def mask(self, column: np.ndarray) -> np.ndarray:
        return np.asarray([x == self.expected for x in column], dtype=bool)

    def sort_key(self) -> tuple:
        return (self.var, self.kind, math.inf, self.expected)

    def __str__(self) -> str:
        return f"{self.var} == {self.expected!r}"


@dataclass(frozen=True)
class StructEmpty(Predicate):
    """Collection var is empty (cardinality == 0)."""

    kind = "coll_empty"

    def test(self, value: Value) -> bool:
        return value.cardinality == 0

    def mask(self, column: np.ndarray) -> np.ndarray:
        return column == 0

    def sort_key(self) -> tuple:
        return (self.var, self.kind, 0.0, "")

    def __str__(self) -> str:
        return f"empty({self.var})"


@dataclass(frozen=True)
class StructCardThreshold(Predicate):
    """Collection cardinality > threshold (integer threshold)."""

    threshold: int = 0
    kind = "coll_card_gt"

    def test(self, value: Value) -> bool:
        return value.cardinality > self.threshold

    def mask(self, column: np.ndarray) -> np.ndarray:
        return column > self.threshold

    def sort_key(self) -> tuple:
        return (self.var, self.kind, float(self.threshold), "")

    def __str__(self) -> str:
        return f"card({self.var}) > {self.threshold}"


def _column_value(value: Value) -> object:
    """Feature projection of a Value for column storage."""
    if value.kind in (NUMBER, INTEGER):
        return value.numeric
    if value.kind == BOOLEAN:
        return bool(value.data)
    if value.kind == TEXT:
        return value.data
    return value.cardinality


def predicate_to_json(pred: Predicate) -> dict:
    out: dict[str, object] = {"type": pred.kind, "var": pred.var}
    if isinstance(pred, ScalarThreshold):
        out["threshold"] = pred.threshold
    elif isinstance(pred, (BooleanEq, TextEq)):
        out["expected"] = pred.expected
    elif isinstance(pred, StructCardThreshold):
        out["threshold"] = pred.threshold
    return out


def predicate_from_json(raw: Mapping) -> Predicate:
    kind = raw["type"]
    var = raw["var"]
    if kind == "num_gt":
        return ScalarThreshold(var, float(raw["threshold"]))
    if kind == "bool_eq":
        return BooleanEq(var, bool(raw["expected"]))
    if kind == "text_eq":
        return TextEq(var, str(raw["expected"]))
    if kind == "coll_empty":
        return StructEmpty(var)
    if kind == "coll_card_gt":
        return StructCardThreshold(var, int(raw["threshold"]))
    raise ValueError(f"unknown predicate type {kind!r}")


# ---------------------------------------------------------------------------
# Labeled batches
# ---------------------------------------------------------------------------

class LabeledBatch:
    """Concrete states paired with their next-action class labels.

    Columns (per-variable feature arrays) are materialized lazily and cached,
    so repeated gain computations over one batch stay cheap.
    """

    def __init__(self, states: Sequence[ConcreteState], labels: Sequence[str]):
        if len(states) != len(labels):
            raise ValueError("states and labels must have equal length")
        self.states = list(states)
        self.labels = list(labels)
        self._columns: dict[str, np.ndarray] = {}
        self._codes: np.ndarray | None = None
        self._label_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.states)

    @property
    def var_catalog(self) -> dict[str, tuple[str, str]]:
        if not self.states:
            return {}
        return self.states[0].schema()

    def column(self, var: str) -> np.ndarray:
        col = self._columns.get(var)
        if col is None:
            kind = self.var_catalog[var][1]
            values = [_column_value(s.value(var)) for s in self.states]
            if kind in (NUMBER, INTEGER):
                col = np.asarray(values, dtype=np.float64)
            elif kind == BOOLEAN:
                col = np.asarray(values, dtype=bool)
            elif kind == COLLECTION:
                col = np.asarray(values, dtype=np.int64)
            else:
                col = np.asarray(values, dtype=object)
            self._columns[var] = col
        return col

    def label_codes(self) -> tuple[np.ndarray, list[str]]:
        if self._codes is None:
            names = sorted(set(self.labels))
            index = {name: i for i, name in enumerate(names)}
            self._codes = np.asarray([index[l] for l in self.labels], dtype=np.int64)
            self._label_names = names
        return self._codes, self._label_names  # type: ignore[return-value]

    def label_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for label in self.labels:
            counts[label] = counts.get(label, 0) + 1
        return counts

    def is_pure(self) -> bool:
        return len(set(self.labels)) <= 1

    def subset(self, mask: np.ndarray) -> "LabeledBatch":
        idx = np.flatnonzero(mask)
        sub = LabeledBatch([self.states[i] for i in idx], [self.labels[i] for i in idx])
        for var, col in self._columns.items():
            sub._columns[var] = col[idx]
        return sub


def labeled_batch_from_log(log: TraceLog) -> LabeledBatch:
    """All observed states of a log, labeled by the next action (⊥ at ends)."""
    states: list[ConcreteState] = []
    labels: list[str] = []
    for trace in log:
        for i in range(trace.n_states):
            states.append(trace.state_at(i))
            labels.append(trace.steps[i].action.name if i < len(trace.steps) else END_LABEL)
    return LabeledBatch(states, labels)


# ---------------------------------------------------------------------------
# Entropy and information gain
# ---------------------------------------------------------------------------

def entropy(class_counts: Mapping[str, int]) -> float:
    """Shannon entropy in bits of an empirical class distribution."""
    total = 0
    for label, count in class_counts.items():
        if count < 0:
            raise ValueError(f"negative count for class {label!r}")
        total += count
    if total == 0:
        raise EmptyBatch("entropy of an empty batch is undefined")
    h = 0.0
    for count in class_counts.values():
        if count:
            p = count / total
            h -= p * math.log2(p)
    return h


def _entropy_from_bincount(counts: np.ndarray) -> float:
    total = int(counts.sum())
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def information_gain(batch: LabeledBatch, predicate: Predicate) -> float:
    """Entropy reduction of the label distribution under a predicate split.

    Degenerate splits (one side empty) get gain 0 by convention and are
    never selected.
    """
    if len(batch) == 0:
        raise EmptyBatch("information gain over an empty batch is undefined")
    codes, names = batch.label_codes()
    mask = predicate.mask(batch.column(predicate.var))
    n_true = int(mask.sum())
    n = len(batch)
    if n_true == 0 or n_true == n:
        return 0.0
    n_labels = len(names)
    parent = _entropy_from_bincount(np.bincount(codes, minlength=n_labels))
    h_true = _entropy_from_bincount(np.bincount(codes[mask], minlength=n_labels))
    h_false = _entropy_from_bincount(np.bincount(codes[~mask], minlength=n_labels))
    return parent - (n_true / n) * h_true - ((n - n_true) / n) * h_false


# ---------------------------------------------------------------------------
# Candidate generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeConfig:
    """Knobs for tree construction and leaf splitting.

    ``min_gain`` is the gamma threshold in bits below which a node stays a
    leaf.  ``threshold_mode`` picks numeric thresholds from midpoints between
    sorted distinct observed values (default) or from quantiles of the
    observed values.  ``strict_variable_exclusion`` forbids re-splitting a
    variable anywhere below its first use instead of only forbidding the
    identical predicate.
    """

    min_gain: float = 0.01
    max_depth: int = 12
    max_leaves: int = 256
    min_leaf_size: int = 5
    min_text_freq: int = 1
    threshold_mode: str = "midpoints"  # or "quantiles"
    quantile_grid: tuple[float, ...] = (0.1, 0.25, 0.5, 0.75, 0.9)
    strict_variable_exclusion: bool = False
    feature_partitions: tuple[str, ...] = ("goal", "check", "state")

    def __post_init__(self) -> None:
        if self.max_depth <= 0 or self.max_leaves <= 0 or self.min_leaf_size <= 0:
            raise ValueError("tree bounds must be positive")
        if self.threshold_mode not in ("midpoints", "quantiles"):
            raise ValueError(f"unknown threshold mode {self.threshold_mode!r}")


def _numeric_thresholds(values: np.ndarray, cfg: TreeConfig) -> list[float]:
    distinct = np.unique(values)
    if distinct.size < 2:
        return []
    if cfg.threshold_mode == "quantiles":
        qs = np.quantile(distinct, cfg.quantile_grid)
        return sorted({float(q) for q in qs if distinct[0] <= q < distinct[-1]})
    return [float((a + b) / 2.0) for a, b in zip(distinct[:-1], distinct[1:])]


def candidate_predicates(
    batch: LabeledBatch,
    excluded: Iterable = (),
    cfg: TreeConfig | None = None,
) -> list[Predicate]:
    """Candidate splits for a batch, in deterministic sort order.

    Numeric variables yield thresholds between observed values, booleans one
    equality test, text variables equality against sufficiently frequent
    observed values, collections emptiness plus cardinality thresholds.
    ``excluded`` filters by predicate key, or by variable name when strict
    variable exclusion is active.
    """
    if len(batch) == 0:
        raise EmptyBatch("cannot derive candidates from an empty batch")
    cfg = cfg or TreeConfig()
    excluded = set(excluded)
    out: list[Predicate] = []
    for var, (partition, kind) in sorted(batch.var_catalog.items()):
        if partition not in cfg.feature_partitions:
            continue
        if cfg.strict_variable_exclusion and var in excluded:
            continue
        if kind in (NUMBER, INTEGER):
            for theta in _numeric_thresholds(batch.column(var), cfg):
                out.append(ScalarThreshold(var, theta))
        elif kind == BOOLEAN:
            out.append(BooleanEq(var, True))
        elif kind == TEXT:
            freq: dict[str, int] = {}
            for text in batch.column(var):
                freq[text] = freq.get(text, 0) + 1
            for text in sorted(t for t, n in freq.items() if n >= cfg.min_text_freq):
                out.append(TextEq(var, text))
        elif kind == COLLECTION:
            out.append(StructEmpty(var))
            cards = np.unique(batch.column(var))
            for a, b in zip(cards[:-1], cards[1:]):
                out.append(StructCardThreshold(var, (int(a) + int(b)) // 2))
    if not cfg.strict_variable_exclusion:
        out = [p for p in out if p.key() not in excluded]
    out.sort(key=lambda p: p.sort_key())
    return out


# ---------------------------------------------------------------------------
# The tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafNode:
    abstract_id: int


@dataclass(frozen=True)
class InternalNode:
    predicate: Predicate
    ch0: int
    ch1: int


class PredicateTree:
    """Immutable binary decision tree whose leaves are abstract states."""

    def __init__(
        self,
        nodes: dict[int, LeafNode | InternalNode],
        root: int,
        next_node_id: int,
        next_abstract_id: int,
    ):
        self.nodes = nodes
        self.root = root
        self._next_node_id = next_node_id
        self._next_abstract_id = next_abstract_id
        self._leaf_index: dict[int, int] | None = None

    @staticmethod
    def single_leaf() -> "PredicateTree":
        return PredicateTree({0: LeafNode(0)}, root=0, next_node_id=1, next_abstract_id=1)

    # -- structure ---------------------------------------------------------

    def node(self, node_id: int) -> LeafNode | InternalNode:
        return self.nodes[node_id]

    def leaves(self) -> dict[int, int]:
        """Maps abstract-state id to its leaf node id."""
        if self._leaf_index is None:
            self._leaf_index = {
                n.abstract_id: nid for nid, n in self.nodes.items() if isinstance(n, LeafNode)
            }
        return self._leaf_index

    @property
    def n_leaves(self) -> int:
        return len(self.leaves())

    def abstract_ids(self) -> list[int]:
        return sorted(self.leaves())

    def leaf_node_of(self, abstract_id: int) -> int:
        try:
            return self.leaves()[abstract_id]
        except KeyError:
            raise UnknownLeaf(f"no leaf with abstract-state id {abstract_id}") from None

    def parent_map(self) -> dict[int, int]:
        return {
            child: nid
            for nid, n in self.nodes.items()
            if isinstance(n, InternalNode)
            for child in (n.ch0, n.ch1)
        }

    def depth_of(self, node_id: int) -> int:
        parents = self.parent_map()
        depth = 0
        while node_id in parents:
            node_id = parents[node_id]
            depth += 1
        return depth

    def path_predicates(self, node_id: int) -> list[Predicate]:
        """Predicates on the root-to-node path (node excluded)."""
        parents = self.parent_map()
        preds: list[Predicate] = []
        while node_id in parents:
            node_id = parents[node_id]
            preds.append(self.nodes[node_id].predicate)  # type: ignore[union-attr]
        preds.reverse()
        return preds

    # -- abstraction -------------------------------------------------------

    def abstract(self, state: ConcreteState) -> int:
        """Routes a concrete state to its abstract-state id (deterministic)."""
        node = self.nodes[self.root]
        while isinstance(node, InternalNode):
            node = self.nodes[node.ch1 if node.predicate.evaluate(state) else node.ch0]
        return node.abstract_id

    def abstract_leaf_node(self, state: ConcreteState) -> int:
        return self.leaf_node_of(self.abstract(state))

    # -- splitting ---------------------------------------------------------

    def split(self, leaf_node_id: int, predicate: Predicate) -> tuple["PredicateTree", int, int]:
        """Replaces a leaf by an internal node with two fresh leaves.

        Returns (new tree, abstract id of false child, abstract id of true
        child).  The retired abstract id is never minted again.
        """
        node = self.nodes.get(leaf_node_id)
        if not isinstance(node, LeafNode):
            raise UnknownLeaf(f"node {leaf_node_id} is not a leaf")
        nodes = dict(self.nodes)
        n0, n1 = self._next_node_id, self._next_node_id + 1
        a0, a1 = self._next_abstract_id, self._next_abstract_id + 1
        nodes[n0] = LeafNode(a0)
        nodes[n1] = LeafNode(a1)
        nodes[leaf_node_id] = InternalNode(predicate, n0, n1)
        return PredicateTree(nodes, self.root, n0 + 2, a1 + 1), a0, a1

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        items = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            if isinstance(n, LeafNode):
                items.append({"id": nid, "kind": "leaf", "abstract_state_id": n.abstract_id})
            else:
                items.append(
                    {
                        "id": nid,
                        "kind": "internal",
                        "predicate": predicate_to_json(n.predicate),
                        "ch0": n.ch0,
                        "ch1": n.ch1,
                    }
                )
        return {
            "root": self.root,
            "next_node_id": self._next_node_id,
            "next_abstract_id": self._next_abstract_id,
            "nodes": items,
        }

    @staticmethod
    def from_json_dict(raw: Mapping) -> "PredicateTree":
        nodes: dict[int, LeafNode | InternalNode] = {}
        for item in raw["nodes"]:
            if item["kind"] == "leaf":
                nodes[int(item["id"])] = LeafNode(int(item["abstract_state_id"]))
            else:
                nodes[int(item["id"])] = InternalNode(
                    predicate_from_json(item["predicate"]), int(item["ch0"]), int(item["ch1"])
                )
        return PredicateTree(
            nodes, int(raw["root"]), int(raw["next_node_id"]), int(raw["next_abstract_id"])
        )

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "PredicateTree":
        return PredicateTree.from_json_dict(json.loads(text))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path: str) -> "PredicateTree":
        with open(path, "r", encoding="utf-8") as fh:
            return PredicateTree.from_json(fh.read())

    def structurally_equal(self, other: "PredicateTree") -> bool:
        return (
            self.root == other.root
            and self.nodes == other.nodes
            and self._next_node_id == other._next_node_id
            and self._next_abstract_id == other._next_abstract_id
        )


# ---------------------------------------------------------------------------
# Greedy construction and leaf splitting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LeafSplit:
    """A committed split of one leaf, carrying the tree it produced."""

    tree: PredicateTree
    base_tree: PredicateTree
    parent_abstract: int
    children: tuple[int, int]
    predicate: Predicate


@dataclass(frozen=True)
class SplitRejected:
    """Signal that no beneficial split exists for a leaf (not a failure)."""

    reason: str  # pure | size | depth | leaves | no_candidates | min_gain

    def __bool__(self) -> bool:
        return False


def _best_candidate(
    batch: LabeledBatch, excluded: set, cfg: TreeConfig
) -> tuple[Predicate | None, float]:
    best: Predicate | None = None
    best_gain = -math.inf
    for cand in candidate_predicates(batch, excluded, cfg):
        gain = information_gain(batch, cand)
        if gain > best_gain:
            best, best_gain = cand, gain
    return best, best_gain


def _exclusion_entry(pred: Predicate, cfg: TreeConfig):
    return pred.var if cfg.strict_variable_exclusion else pred.key()


def split_leaf(
    tree: PredicateTree,
    leaf: int,
    batch: LabeledBatch,
    excluded: Iterable = (),
    cfg: TreeConfig | None = None,
) -> LeafSplit | SplitRejected:
    """Splits the leaf with the max-gain candidate, or reports why not.

    ``leaf`` is the abstract-state id; ``batch`` must hold the concrete
    states currently mapped to it.  The returned LeafSplit references the
    tree it was derived from so stale applications can be detected.
    """
    cfg = cfg or TreeConfig()
    leaf_node = tree.leaf_node_of(leaf)  # raises UnknownLeaf
    if len(batch) == 0 or batch.is_pure():
        return SplitRejected("pure")
    if len(batch) < 2 * cfg.min_leaf_size:
        return SplitRejected("size")
    if tree.depth_of(leaf_node) >= cfg.max_depth:
        return SplitRejected("depth")
    if tree.n_leaves + 1 > cfg.max_leaves:
        return SplitRejected("leaves")
    best, best_gain = _best_candidate(batch, set(excluded), cfg)
    if best is None:
        return SplitRejected("no_candidates")
    if best_gain <= cfg.min_gain:
        return SplitRejected("min_gain")
    new_tree, a0, a1 = tree.split(leaf_node, best)
    return LeafSplit(new_tree, tree, leaf, (a0, a1), best)


def build_initial_tree(log: TraceLog, cfg: TreeConfig | None = None) -> PredicateTree:
    """Greedy top-down tree construction over all states of a log.

    Recursion stops at a node when the batch is pure, the best gain does not
    exceed ``min_gain``, or a depth / leaf-count / batch-size bound is hit.
    A predicate used on the path is not offered again below it (the whole
    variable is withheld in strict mode).
    """
    cfg = cfg or TreeConfig()
    if log.n_transitions == 0:
        raise EmptyLog("tree construction needs at least one recorded transition")
    batch = labeled_batch_from_log(log)

    tree = PredicateTree.single_leaf()
    # Depth-first growth; each successful split adds one leaf to the total,
    # so the max_leaves check inside split_leaf sees the true global count.
    stack: list[tuple[int, LabeledBatch, frozenset]] = [
        (tree.leaf_node_of(0), batch, frozenset())
    ]
    while stack:
        leaf_node, node_batch, excluded = stack.pop()
        abstract_id = tree.node(leaf_node).abstract_id  # type: ignore[union-attr]
        result = split_leaf(tree, abstract_id, node_batch, excluded, cfg)
        if isinstance(result, SplitRejected):
            continue
        tree = result.tree
        pred = result.predicate
        mask = pred.mask(node_batch.column(pred.var))
        child_excluded = excluded | {_exclusion_entry(pred, cfg)}
        n0 = tree.leaf_node_of(result.children[0])
        n1 = tree.leaf_node_of(result.children[1])
        # Push true side last so the false branch grows first (deterministic).
        stack.append((n1, node_batch.subset(mask), child_excluded))
        stack.append((n0, node_batch.subset(~mask), child_excluded))
    return tree
