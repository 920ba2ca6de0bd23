#!/usr/bin/env python3
"""Walkthrough: run-likelihood anomaly detection, offline and at checkpoints.

Trains the model on baseline runs, fits the one-sided low-likelihood
detector, scores a mixed corpus of injected anomalies, and reports recall
per anomaly class plus the false-positive rate on held-out baseline runs.
"""

import json
import tempfile

from tracemdp import (
    DetectorConfig,
    GeneratorConfig,
    OfflineDetector,
    TreeConfig,
    build,
    build_initial_tree,
    generate_corpus,
    prefix_stats,
    read_trace_log,
    run_loglik,
)
from tracemdp.anomaly import checkpoint_warnings
from tracemdp.trace_trie import abstract_trace

workdir = tempfile.mkdtemp(prefix="tracemdp-demo3-")
train = generate_corpus(GeneratorConfig(seed=0, n_baseline=500, n_anomalous=400), workdir + "/train")
held = generate_corpus(GeneratorConfig(seed=1, n_baseline=100, n_anomalous=0), workdir + "/held")

log = read_trace_log(train.baseline)
tree = build_initial_tree(log, TreeConfig())
store = build(log, tree)
model = store.amdp

train_runs = [abstract_trace(tree, t)[0] for t in log]
detector = OfflineDetector(DetectorConfig(alpha=0.05)).fit(
    run_loglik(model, run, t.trace_id) for run, t in zip(train_runs, log)
)
print(f"detector: mode={detector.effective_mode}  threshold={detector.threshold:.4f}")
print(f"training scores: mu={detector.stats.mu:.4f} sigma={detector.stats.sigma:.4f}")

truth = {}
with open(train.sidecar) as fh:
    for line in fh:
        record = json.loads(line)
        truth[record["trace_id"]] = record["anomaly"]

flagged: dict[str, list[bool]] = {}
for trace in read_trace_log(train.anomalous):
    score = run_loglik(model, abstract_trace(tree, trace)[0], trace.trace_id)
    verdict = detector.flag(score)
    flagged.setdefault(truth[trace.trace_id], []).append(verdict["verdict"] == "anomalous")

print(f"\n{'class':<16}{'n':>6}{'recall':>9}")
for kind, hits in sorted(flagged.items()):
    print(f"{kind:<16}{len(hits):>6}{sum(hits) / len(hits):>9.3f}")

held_log = read_trace_log(held.baseline)
false_positives = sum(
    detector.flag(run_loglik(model, abstract_trace(tree, t)[0]))["verdict"] == "anomalous"
    for t in held_log
)
print(f"{'held-out FPR':<16}{len(held_log):>6}{false_positives / len(held_log):>9.3f}")

# Prefix-conditioned warnings for one long anomalous run.
stats = prefix_stats(train_runs, model, checkpoints=range(5, 101, 5))
long_run = max(
    (abstract_trace(tree, t)[0] for t in read_trace_log(train.anomalous)),
    key=lambda run: run.n_transitions,
)
warnings, unseen_at = checkpoint_warnings(model, long_run, stats)
print(f"\nlongest anomalous run ({long_run.n_transitions} steps): "
      f"{len(warnings)} checkpoint warnings, first at k={warnings[0]['k'] if warnings else None}")
