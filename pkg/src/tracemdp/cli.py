"""Command-line front end.

Subcommands cover the whole pipeline: ``gen`` (synthetic corpus), ``learn``
(initial tree), ``build`` (linked store + explicit-state export), ``check``
(reachability query), ``score`` (offline anomaly report), ``monitor``
(streaming checkpoint warnings on a growing log), ``refine``
(verify-and-refine loop), ``export`` (re-export the model), and ``report``
(precision/recall/FPR against generator ground truth).

Exit codes: 0 ok, 1 a thresholded property is violated, 2 usage error,
3 data error.  Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import queue
import sys
import threading
import time

from . import __version__
from .amdp import export_explicit
from .anomaly import (
    DetectorConfig,
    OfflineDetector,
    RunMonitor,
    checkpoint_warnings,
    prefix_stats,
    run_loglik,
)
from .checker import check, parse_property
from .errors import PropertySyntaxError, TraceMdpError
from .generator import GeneratorConfig, generate_corpus
from .linked_store import LabelingConfig, LinkedStore, load_store, save_store
from .predicate_tree import PredicateTree, TreeConfig, build_initial_tree
from .refinement import RefinementConfig, verify_refine_loop
from .trace_model import parse_event_line, read_trace_log
from .trace_trie import abstract_trace

JSON_KW = {"sort_keys": True, "separators": (",", ":")}


def _print_json(obj: object, out=None) -> None:
    print(json.dumps(obj, **JSON_KW), file=out or sys.stdout)


def _tree_config(args: argparse.Namespace) -> TreeConfig:
    return TreeConfig(
        min_gain=args.gamma,
        max_depth=args.max_depth,
        max_leaves=args.max_leaves,
        min_leaf_size=args.min_leaf,
    )


def _labeling(args: argparse.Namespace) -> LabelingConfig:
    rules = ()
    if getattr(args, "labels", None):
        with open(args.labels, "r", encoding="utf-8") as fh:
            rules = tuple(LabelingConfig.from_json_dict({"rules": json.load(fh)}).rules)
    return LabelingConfig(
        terminal_labels=not args.no_terminal_labels,
        success_mode=args.success_mode,
        failure_mode=args.failure_mode,
        rules=rules,
    )


def _checkpoints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _abstract_runs(store: LinkedStore, log) -> list:
    return [abstract_trace(store.tree, trace)[0] for trace in log]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    cfg = GeneratorConfig()
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = GeneratorConfig.from_json_dict(json.load(fh))
    paths = generate_corpus(cfg, args.out)
    _print_json(
        {"baseline": paths.baseline, "anomalous": paths.anomalous, "sidecar": paths.sidecar}
    )
    return 0


def _cmd_learn(args) -> int:
    log = read_trace_log(args.log)
    tree = build_initial_tree(log, _tree_config(args))
    tree.save(args.out)
    _print_json({"tree": args.out, "leaves": tree.n_leaves})
    return 0


def _cmd_build(args) -> int:
    from .linked_store import build as build_store

    log = read_trace_log(args.log)
    tree = PredicateTree.load(args.tree)
    store = build_store(log, tree, _labeling(args))
    save_store(store, args.out, args.log)
    _print_json(
        {
            "store": args.out,
            "states": len(store.amdp.states),
            "transitions": len(store.amdp.counts3),
            "labels": {k: sorted(v) for k, v in sorted(store.amdp.labels.items())},
            "mixed": {k: sorted(v) for k, v in sorted(store.label_report.mixed.items()) if v},
        }
    )
    return 0


def _cmd_check(args) -> int:
    query = parse_property(args.prop)
    store = load_store(args.store, args.log)
    result = check(store.amdp, query, epsilon=args.epsilon)
    _print_json(result.to_json_dict())
    return 1 if result.verdict is False else 0


def _cmd_score(args) -> int:
    store = load_store(args.store)
    cfg = DetectorConfig(alpha=args.alpha, checkpoints=_checkpoints(args.checkpoints))
    train_runs = _abstract_runs(store, store.log)
    detector = OfflineDetector(cfg).fit(
        run_loglik(store.amdp, run, trace.trace_id)
        for run, trace in zip(train_runs, store.log)
    )
    stats = prefix_stats(train_runs, store.amdp, cfg.checkpoints)

    target_log = read_trace_log(args.log)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for trace in target_log:
            run, _refs = abstract_trace(store.tree, trace)
            score = run_loglik(store.amdp, run, trace.trace_id)
            verdict = detector.flag(score)
            warnings, unseen_at = checkpoint_warnings(store.amdp, run, stats, cfg)
            _print_json(
                {
                    "trace_id": trace.trace_id,
                    "loglik": score.loglik if score.finite else None,
                    "length": score.length,
                    "verdict": verdict["verdict"],
                    "checkpoint_warnings": warnings,
                    "unseen_transition_at": unseen_at,
                },
                out,
            )
    finally:
        if args.out:
            out.close()
    return 0


def _follow_lines(path: str, line_queue: "queue.Queue[str | None]", once: bool, interval: float) -> None:
    with open(path, "r", encoding="utf-8") as fh:
        while True:
            line = fh.readline()
            if line:
                if line.endswith("\n"):
                    line_queue.put(line)
                    continue
                # Partial trailing line: wait for the writer to finish it.
                buffered = line
                while not buffered.endswith("\n"):
                    if once:
                        break
                    time.sleep(interval)
                    more = fh.readline()
                    buffered += more
                line_queue.put(buffered)
                continue
            if once:
                break
            time.sleep(interval)
    line_queue.put(None)


def _cmd_monitor(args) -> int:
    store = load_store(args.store)
    cfg = DetectorConfig(alpha=args.alpha, checkpoints=_checkpoints(args.checkpoints))
    train_runs = _abstract_runs(store, store.log)
    stats = prefix_stats(train_runs, store.amdp, cfg.checkpoints)
    schema = store.log.schema

    # One reader thread tails the file; this thread evaluates.  The bounded
    # queue keeps memory flat and preserves event order.
    line_queue: "queue.Queue[str | None]" = queue.Queue(maxsize=1024)
    reader = threading.Thread(
        target=_follow_lines, args=(args.follow, line_queue, args.once, args.interval), daemon=True
    )
    reader.start()

    monitors: dict[str, RunMonitor] = {}
    prev_post: dict[str, object] = {}
    while True:
        line = line_queue.get()
        if line is None:
            break
        line = line.strip()
        if not line:
            continue
        event = parse_event_line(line, schema)
        if event.kind == "terminal":
            monitors.pop(event.trace_id, None)
            prev_post.pop(event.trace_id, None)
            continue
        if event.kind == "initial":
            prev_post[event.trace_id] = event.state
            continue
        pre = event.pre if event.pre is not None else prev_post.get(event.trace_id)
        if pre is None:
            raise TraceMdpError(f"trace {event.trace_id!r}: no pre snapshot available")
        prev_post[event.trace_id] = event.post
        monitor = monitors.get(event.trace_id)
        if monitor is None:
            monitor = monitors[event.trace_id] = RunMonitor(store.amdp, stats, cfg)
        src = store.tree.abstract(pre)
        dst = store.tree.abstract(event.post)
        for alert in monitor.feed(src, event.action, dst):
            _print_json({"trace_id": event.trace_id, **alert})
            sys.stdout.flush()
    return 0


def _cmd_refine(args) -> int:
    query = parse_property(args.prop)
    store = load_store(args.store)
    cfg = RefinementConfig(
        property=query,
        min_gain=args.gamma,
        max_depth=args.max_depth,
        max_leaves=args.max_leaves,
        max_iterations=args.max_iters,
        min_leaf_size=args.min_leaf,
    )
    outcome = verify_refine_loop(store.log, store.tree, cfg, store.labeling)
    if args.iteration_log:
        with open(args.iteration_log, "w", encoding="utf-8") as fh:
            for entry in outcome.iterations:
                fh.write(json.dumps(entry, **JSON_KW) + "\n")
    _print_json(
        {
            "outcome": outcome.kind,
            "reason": outcome.reason,
            "iterations": outcome.iterations,
            "witness": None
            if outcome.witness_path is None
            else {
                "states": list(outcome.witness_path.states),
                "actions": list(outcome.witness_path.actions),
                "refs": sorted(list(r) for r in (outcome.witness_refs or ())),
            },
        }
    )
    return 1 if outcome.kind == "real_counterexample" else 0


def _cmd_export(args) -> int:
    if args.format != "prism-explicit":
        raise TraceMdpError(f"unsupported export format {args.format!r}")
    store = load_store(args.store)
    os.makedirs(args.out, exist_ok=True)
    tra, lab = export_explicit(store.amdp)
    tra_path = os.path.join(args.out, "model.tra")
    lab_path = os.path.join(args.out, "model.lab")
    with open(tra_path, "w", encoding="utf-8") as fh:
        fh.write(tra)
    with open(lab_path, "w", encoding="utf-8") as fh:
        fh.write(lab)
    _print_json({"transitions": tra_path, "labels": lab_path})
    return 0


def _cmd_report(args) -> int:
    truth: dict[str, str] = {}
    with open(args.truth, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                record = json.loads(line)
                truth[record["trace_id"]] = record["anomaly"]

    per_kind: dict[str, dict[str, int]] = {}
    negatives = {"n": 0, "flagged": 0}
    flagged_total = 0
    true_positives = 0
    with open(args.scores, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            record = json.loads(line)
            flagged = record["verdict"] == "anomalous"
            kind = truth.get(record["trace_id"])
            if flagged:
                flagged_total += 1
            if kind is None:
                negatives["n"] += 1
                negatives["flagged"] += int(flagged)
            else:
                row = per_kind.setdefault(kind, {"n": 0, "flagged": 0})
                row["n"] += 1
                row["flagged"] += int(flagged)
                true_positives += int(flagged)

    summary = {
        "per_anomaly_recall": {
            kind: (row["flagged"] / row["n"] if row["n"] else None)
            for kind, row in sorted(per_kind.items())
        },
        "counts": {"per_anomaly": per_kind, "negatives": negatives},
        "precision": (true_positives / flagged_total) if flagged_total else None,
        "fpr": (negatives["flagged"] / negatives["n"]) if negatives["n"] else None,
    }
    if args.json:
        _print_json(summary)
    else:
        print(f"{'class':<16}{'n':>8}{'flagged':>10}{'recall':>10}")
        for kind, row in sorted(per_kind.items()):
            recall = row["flagged"] / row["n"] if row["n"] else float("nan")
            print(f"{kind:<16}{row['n']:>8}{row['flagged']:>10}{recall:>10.3f}")
        if negatives["n"]:
            fpr = negatives["flagged"] / negatives["n"]
            print(f"{'baseline':<16}{negatives['n']:>8}{negatives['flagged']:>10}{fpr:>10.3f}  (FPR)")
        if flagged_total:
            print(f"precision: {true_positives / flagged_total:.3f}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_tree_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma", type=float, default=0.01, help="min information gain in bits")
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--max-leaves", type=int, default=256)
    p.add_argument("--min-leaf", type=int, default=5)


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument(
        "--checkpoints",
        default=",".join(str(k) for k in range(10, 201, 10)),
        help="comma-separated prefix lengths",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracemdp", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic file-ops corpus")
    p.add_argument("--config", help="generator config JSON (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("learn", help="learn an initial predicate tree from a log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    _add_tree_flags(p)
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("build", help="build a linked store with PRISM export")
    p.add_argument("--log", required=True)
    p.add_argument("--tree", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--labels", help="JSON file with label rules")
    p.add_argument("--no-terminal-labels", action="store_true")
    p.add_argument("--success-mode", choices=["all", "any"], default="all")
    p.add_argument("--failure-mode", choices=["all", "any"], default="any")
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("check", help="evaluate a reachability property")
    p.add_argument("--store", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--log", help="override the manifest's log path")
    p.add_argument("--epsilon", type=float, default=1e-8)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("score", help="score runs against the stored model")
    p.add_argument("--store", required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--out", help="write the JSONL report here instead of stdout")
    _add_detector_flags(p)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("monitor", help="stream checkpoint warnings from a growing log")
    p.add_argument("--store", required=True)
    p.add_argument("--follow", required=True)
    p.add_argument("--once", action="store_true", help="stop at end of file")
    p.add_argument("--interval", type=float, default=0.2)
    _add_detector_flags(p)
    p.set_defaults(func=_cmd_monitor)

    p = sub.add_parser("refine", help="run the verify-and-refine loop")
    p.add_argument("--store", required=True)
    p.add_argument("--prop", required=True)
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--iteration-log", help="write per-iteration JSONL here")
    p.add_argument("--gamma", type=float, default=0.01)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--max-leaves", type=int, default=256)
    p.add_argument("--min-leaf", type=int, default=1)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("export", help="re-export the stored model")
    p.add_argument("--store", required=True)
    p.add_argument("--format", default="prism-explicit")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("report", help="precision/recall/FPR against ground truth")
    p.add_argument("--scores", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PropertySyntaxError as exc:
        _print_json({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 2
    except TraceMdpError as exc:
        _print_json({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 3
    except OSError as exc:
        _print_json({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
