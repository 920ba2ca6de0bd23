#!/usr/bin/env python3
"""Walkthrough: from raw JSONL tool-call events to a learned state abstraction.

Generates a small synthetic file-ops corpus, ingests it into typed traces,
learns a predicate tree by information gain over next actions, and shows how
concrete snapshots route to abstract states.
"""

import tempfile

from tracemdp import (
    GeneratorConfig,
    TreeConfig,
    build_initial_tree,
    generate_corpus,
    read_trace_log,
)
from tracemdp.trace_trie import rebuild

workdir = tempfile.mkdtemp(prefix="tracemdp-demo1-")
paths = generate_corpus(GeneratorConfig(seed=42, n_baseline=200, n_anomalous=0), workdir)
print(f"wrote corpus under {workdir}")

log = read_trace_log(paths.baseline)
print(f"\ningested {len(log)} traces, {log.n_transitions} transitions")
print("schema:")
for name, (partition, kind) in sorted(log.schema.items()):
    print(f"  {name:<18} {partition:<6} {kind}")

tree = build_initial_tree(log, TreeConfig())
print(f"\nlearned predicate tree with {tree.n_leaves} leaves:")
print(tree.to_json())

sample = log[0]
print(f"trace {sample.trace_id!r} routes through abstract states:")
path_states = [tree.abstract(sample.state_at(i)) for i in range(sample.n_states)]
actions = [step.action.name for step in sample.steps]
rendered = str(path_states[0])
for state, action in zip(path_states[1:], actions):
    rendered += f" -{action}-> {state}"
print(" ", rendered)

trie = rebuild(log, tree)
print(f"\nprefix trie over all {len(log)} abstracted traces: {trie.node_count} nodes")
print("first lines of the debug dump:")
print("\n".join(trie.dump().splitlines()[:8]))
