"""Handles tying tree leaves, MDP vertices, and trie endpoints together.

Every abstract state owns one handle <tree leaf, graph vertex, trie
endpoints>.  The store keeps the three structures and the handle maps
consistent under four invariants:

* I1  every handle's leaf and vertex resolve, and both maps round-trip;
* I2  every endpoint maps back to its handle and its concrete records
      re-abstract to the handle's leaf;
* I3  leaves and vertices are each in bijection with the handles;
* I4  the MDP's state set is exactly the handles' vertex set.

The synthetic trie root carries no abstract state and stays outside the
endpoint accounting.  apply_split currently realizes the refined store by a
full rebuild, which the equality-with-rebuild property keeps honest if an
incremental path is added later.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from . import amdp as amdp_mod
from . import trace_trie as trie_mod
from .amdp import Amdp, LabelReport, LabelRule
from .errors import StaleSplit
from .predicate_tree import LeafSplit, PredicateTree
from .trace_model import ConcreteState, TraceLog, read_trace_log


@dataclass(frozen=True)
class Handle:
    tree: int  # leaf node id in the predicate tree
    graph: int  # vertex id in the MDP (= abstract-state id)
    endpoints: frozenset[int]  # trie node ids


@dataclass(frozen=True)
class LabelingConfig:
    """How abstract states get their success/failure/custom labels."""

    terminal_labels: bool = True
    success_mode: str = "all"
    failure_mode: str = "any"
    rules: tuple[LabelRule, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "terminal_labels": self.terminal_labels,
            "success_mode": self.success_mode,
            "failure_mode": self.failure_mode,
            "rules": [
                {
                    "name": r.name,
                    "mode": r.mode,
                    "atoms": [
                        {
                            "type": a.kind,
                            "var": a.var,
                            **(
                                {"expected": a.expected}
                                if a.kind == "bool_eq"
                                else {"threshold": a.threshold}
                            ),
                        }
                        for a in r.atoms
                    ],
                }
                for r in self.rules
            ],
        }

    @staticmethod
    def from_json_dict(raw: dict) -> "LabelingConfig":
        from .predicate_tree import BooleanEq, ScalarThreshold

        rules = []
        for r in raw.get("rules", []):
            atoms = []
            for a in r["atoms"]:
                if a["type"] == "bool_eq":
                    atoms.append(BooleanEq(a["var"], bool(a["expected"])))
                else:
                    atoms.append(ScalarThreshold(a["var"], float(a["threshold"])))
            rules.append(LabelRule(r["name"], tuple(atoms), r["mode"]))
        return LabelingConfig(
            terminal_labels=bool(raw.get("terminal_labels", True)),
            success_mode=raw.get("success_mode", "all"),
            failure_mode=raw.get("failure_mode", "any"),
            rules=tuple(rules),
        )


@dataclass
class LinkedStore:
    tree: PredicateTree
    amdp: Amdp
    trie: trie_mod.TraceTrie
    log: TraceLog
    handles: tuple[Handle, ...]
    map_tree: dict[int, Handle]
    map_graph: dict[int, Handle]
    map_trie: dict[int, Handle]
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    label_report: LabelReport = field(default_factory=LabelReport)

    def handle_for_leaf(self, abstract_id: int) -> Handle:
        return self.map_graph[abstract_id]

    def evidence_by_state(self) -> dict[int, list[ConcreteState]]:
        """Concrete states observed per abstract state, via trie endpoints."""
        out: dict[int, list[ConcreteState]] = {}
        for handle in self.handles:
            states: list[ConcreteState] = []
            for node_id in sorted(handle.endpoints):
                for trace_idx, state_idx in sorted(self.trie.nodes[node_id].record_refs):
                    states.append(self.log.state_at(trace_idx, state_idx))
            out[handle.graph] = states
        return out


def build(
    log: TraceLog,
    tree: PredicateTree,
    labeling: LabelingConfig | None = None,
) -> LinkedStore:
    """Assembles trie, MDP, handles, and labels for a log under a tree."""
    labeling = labeling or LabelingConfig()
    trie = trie_mod.rebuild(log, tree)
    mdp = amdp_mod.induce(log, tree)

    handles: list[Handle] = []
    map_tree: dict[int, Handle] = {}
    map_graph: dict[int, Handle] = {}
    map_trie: dict[int, Handle] = {}
    for abstract_id, leaf_node in sorted(tree.leaves().items()):
        handle = Handle(leaf_node, abstract_id, frozenset(trie.endpoints_for(abstract_id)))
        handles.append(handle)
        map_tree[leaf_node] = handle
        map_graph[abstract_id] = handle
        for node_id in handle.endpoints:
            map_trie[node_id] = handle

    store = LinkedStore(
        tree=tree,
        amdp=mdp,
        trie=trie,
        log=log,
        handles=tuple(handles),
        map_tree=map_tree,
        map_graph=map_graph,
        map_trie=map_trie,
        labeling=labeling,
    )

    report = LabelReport()
    if labeling.terminal_labels:
        report = amdp_mod.label_by_terminal(
            mdp, log, tree, labeling.success_mode, labeling.failure_mode
        )
    if labeling.rules:
        rule_report = amdp_mod.label_states(mdp, labeling.rules, store.evidence_by_state())
        report.labeled.update(rule_report.labeled)
        report.mixed.update(rule_report.mixed)
    store.label_report = report
    return store


def check_invariants(store: LinkedStore) -> list[str]:
    """Verifies I1-I4; returns a list of violation descriptions (empty = ok)."""
    violations: list[str] = []
    tree_leaves = store.tree.leaves()  # abstract id -> leaf node id
    leaf_nodes = set(tree_leaves.values())

    # I1: handles resolve and both maps round-trip.
    for h in store.handles:
        if h.tree not in leaf_nodes:
            violations.append(f"I1: handle for vertex {h.graph} points at non-leaf node {h.tree}")
        if h.graph not in store.amdp.states:
            violations.append(f"I1: handle vertex {h.graph} missing from the MDP state set")
        if store.map_tree.get(h.tree) is not h:
            violations.append(f"I1: map_tree does not round-trip for leaf node {h.tree}")
        if store.map_graph.get(h.graph) is not h:
            violations.append(f"I1: map_graph does not round-trip for vertex {h.graph}")

    # I2: endpoints map back and their concrete records re-abstract correctly.
    for h in store.handles:
        for node_id in sorted(h.endpoints):
            node = store.trie.nodes.get(node_id)
            if node is None:
                violations.append(f"I2: endpoint {node_id} of vertex {h.graph} is not a trie node")
                continue
            if store.map_trie.get(node_id) is not h:
                violations.append(f"I2: map_trie does not point endpoint {node_id} at its handle")
            if node.abstract_state != h.graph:
                violations.append(
                    f"I2: trie node {node_id} carries state {node.abstract_state}, handle has {h.graph}"
                )
            for trace_idx, state_idx in sorted(node.record_refs):
                concrete = store.log.state_at(trace_idx, state_idx)
                if store.tree.abstract(concrete) != h.graph:
                    violations.append(
                        f"I2: record ({trace_idx},{state_idx}) at node {node_id} "
                        f"re-abstracts away from vertex {h.graph}"
                    )
    for node_id, h in store.map_trie.items():
        if node_id not in h.endpoints:
            violations.append(f"I2: map_trie entry {node_id} is not among its handle's endpoints")
    # Every non-root trie node belongs to exactly one handle's endpoints.
    covered: set[int] = set()
    for h in store.handles:
        overlap = covered & h.endpoints
        if overlap:
            violations.append(f"I2: endpoints {sorted(overlap)} shared by several handles")
        covered |= h.endpoints
    all_nodes = set(store.trie.nodes) - {trie_mod.ROOT_ID}
    if covered != all_nodes:
        stray = sorted(all_nodes - covered) + sorted(covered - all_nodes)
        violations.append(f"I2: endpoint coverage mismatch around nodes {stray[:5]}")

    # I3: bijections between leaves/vertices and handles.
    handle_leaves = [h.tree for h in store.handles]
    handle_vertices = [h.graph for h in store.handles]
    if sorted(handle_leaves) != sorted(leaf_nodes):
        violations.append("I3: tree leaves and handles are not in bijection")
    if len(set(handle_vertices)) != len(handle_vertices):
        violations.append("I3: several handles share one vertex")

    # I4: the MDP state set is exactly the handles' vertex set.
    if store.amdp.states != set(handle_vertices):
        violations.append("I4: MDP state set differs from the handles' vertex set")

    return violations


def apply_split(store: LinkedStore, split: LeafSplit) -> LinkedStore:
    """Applies a leaf split, retiring the old handle and minting two.

    Realized as a full rebuild over the refined tree, so the result equals
    build(log, split.tree) exactly.  A split computed against a tree the
    store no longer holds raises StaleSplit.
    """
    if split.base_tree is not store.tree:
        raise StaleSplit(
            f"split of leaf {split.parent_abstract} was computed against a replaced tree"
        )
    return build(store.log, split.tree, store.labeling)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

TREE_FILE = "tree.json"
TRA_FILE = "model.tra"
LAB_FILE = "model.lab"
MANIFEST_FILE = "manifest.json"


def _sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_store(store: LinkedStore, directory: str, log_path: str) -> None:
    """Writes tree JSON, explicit-state export, and a rebuild manifest."""
    os.makedirs(directory, exist_ok=True)
    store.tree.save(os.path.join(directory, TREE_FILE))
    tra, lab = amdp_mod.export_explicit(store.amdp)
    with open(os.path.join(directory, TRA_FILE), "w", encoding="utf-8") as fh:
        fh.write(tra)
    with open(os.path.join(directory, LAB_FILE), "w", encoding="utf-8") as fh:
        fh.write(lab)
    manifest = {
        "log": os.path.abspath(log_path),
        "log_sha256": _sha256_file(log_path),
        "tree_file": TREE_FILE,
        "labeling": store.labeling.to_json_dict(),
    }
    with open(os.path.join(directory, MANIFEST_FILE), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_store(directory: str, log_path: str | None = None) -> LinkedStore:
    """Rebuilds the store from a saved directory (bit-identical inputs)."""
    with open(os.path.join(directory, MANIFEST_FILE), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    tree = PredicateTree.load(os.path.join(directory, manifest["tree_file"]))
    labeling = LabelingConfig.from_json_dict(manifest.get("labeling", {}))
    log = read_trace_log(log_path or manifest["log"])
    return build(log, tree, labeling)
