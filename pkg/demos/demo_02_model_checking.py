#!/usr/bin/env python3
"""Walkthrough: induce the behavioral MDP and check reachability bounds.

Builds the linked store (tree + trie + MDP with terminal-status labels),
evaluates Pmax/Pmin reachability templates, inspects the diagnostic witness,
and exports the model in the PRISM explicit-state text format.
"""

import tempfile

from tracemdp import (
    GeneratorConfig,
    TreeConfig,
    build,
    build_initial_tree,
    check,
    export_explicit,
    generate_corpus,
    parse_property,
    read_trace_log,
)

workdir = tempfile.mkdtemp(prefix="tracemdp-demo2-")
paths = generate_corpus(GeneratorConfig(seed=7, n_baseline=300, n_anomalous=0), workdir)
log = read_trace_log(paths.baseline)
tree = build_initial_tree(log, TreeConfig())
store = build(log, tree)

print(f"MDP: {len(store.amdp.states)} states, {len(store.amdp.counts3)} transitions")
print(f"labels: { {k: sorted(v) for k, v in store.amdp.labels.items()} }")
print(f"initial states (multiset): {dict(store.amdp.initial)}")

for prop in ('Pmax=? [F "success"]', 'Pmin=? [F "success"]', 'Pmin<=0.05 [F "failure"]'):
    result = check(store.amdp, parse_property(prop))
    verdict = "" if result.verdict is None else f"  verdict={'ok' if result.verdict else 'VIOLATED'}"
    print(f"\n{prop}")
    print(f"  value at modal initial = {result.value:.6f}{verdict}")
    print(f"  per initial state: { {k: round(v, 6) for k, v in result.per_initial.items()} }")
    if result.witness is not None:
        print(f"  witness path: {result.witness.path} (p={result.witness.probability:.4f})")

tra, lab = export_explicit(store.amdp)
print("\nPRISM explicit-state transitions file:")
print(tra, end="")
print("labels file:")
print(lab, end="")
