"""Count-based MDP over abstract states with tool actions.

Transition probabilities are unsmoothed empirical frequencies
P(s,a,s') = C(s,a,s') / C(s,a); unobserved transitions are absent, and
states without an outgoing counted action are terminal.  The explicit-state
export/import pair speaks the PRISM text format described in
``export_explicit``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import SchemaViolation, UnknownVariable, UnobservedStateAction
from .predicate_tree import BooleanEq, Predicate, PredicateTree, ScalarThreshold
from .trace_model import CHECK, GOAL, ConcreteState, TerminalStatus, TraceLog

SUCCESS_LABEL = "success"
FAILURE_LABEL = "failure"


class Amdp:
    """Mutable during single-writer ingestion; snapshot() for readers."""

    def __init__(self) -> None:
        self.states: set[int] = set()
        self.actions: set[str] = set()
        self.counts3: dict[tuple[int, str, int], int] = {}
        self.counts2: dict[tuple[int, str], int] = {}
        self.initial: Counter[int] = Counter()
        self.labels: dict[str, set[int]] = {}

    # -- construction ------------------------------------------------------

    def add_state(self, state: int) -> None:
        self.states.add(state)

    def record_initial(self, state: int) -> None:
        self.add_state(state)
        self.initial[state] += 1

    def ingest(self, src: int, action: str, dst: int, weight: int = 1) -> None:
        self.states.add(src)
        self.states.add(dst)
        self.actions.add(action)
        self.counts3[(src, action, dst)] = self.counts3.get((src, action, dst), 0) + weight
        self.counts2[(src, action)] = self.counts2.get((src, action), 0) + weight

    # -- queries -----------------------------------------------------------

    def probability(self, src: int, action: str, dst: int) -> float:
        total = self.counts2.get((src, action), 0)
        if total == 0:
            raise UnobservedStateAction(f"no observations for state {src} action {action!r}")
        return self.counts3.get((src, action, dst), 0) / total

    def enabled_actions(self, state: int) -> list[str]:
        return sorted(a for (s, a), n in self.counts2.items() if s == state and n > 0)

    def successors(self, src: int, action: str) -> list[tuple[int, float]]:
        """(destination, probability) pairs, sorted by destination."""
        total = self.counts2.get((src, action), 0)
        if total == 0:
            raise UnobservedStateAction(f"no observations for state {src} action {action!r}")
        out = [
            (dst, n / total)
            for (s, a, dst), n in self.counts3.items()
            if s == src and a == action and n > 0
        ]
        out.sort()
        return out

    def terminal_states(self) -> set[int]:
        outgoing = {s for (s, _a), n in self.counts2.items() if n > 0}
        return self.states - outgoing

    def modal_initial(self) -> int | None:
        """Most frequent initial state; ties go to the smallest id."""
        if not self.initial:
            return None
        return min(self.initial, key=lambda s: (-self.initial[s], s))

    def label_set(self, name: str) -> set[int]:
        return self.labels.get(name, set())

    def snapshot(self) -> "Amdp":
        out = Amdp()
        out.states = set(self.states)
        out.actions = set(self.actions)
        out.counts3 = dict(self.counts3)
        out.counts2 = dict(self.counts2)
        out.initial = Counter(self.initial)
        out.labels = {k: set(v) for k, v in self.labels.items()}
        return out

    def equal_counts(self, other: "Amdp") -> bool:
        return (
            self.states == other.states
            and self.actions == other.actions
            and self.counts3 == other.counts3
            and self.counts2 == other.counts2
            and self.initial == other.initial
        )


def induce(log: TraceLog, tree: PredicateTree) -> Amdp:
    """MDP induction from a log abstracted under a tree.

    Every tree leaf becomes a vertex even when no trace visits it, so the
    state set stays aligned with the abstraction.
    """
    mdp = Amdp()
    for abstract_id in tree.abstract_ids():
        mdp.add_state(abstract_id)
    for trace in log:
        if trace.n_states == 0:
            continue
        abstracted = [tree.abstract(trace.state_at(i)) for i in range(trace.n_states)]
        mdp.record_initial(abstracted[0])
        for i, step in enumerate(trace.steps):
            mdp.ingest(abstracted[i], step.action.name, abstracted[i + 1])
    return mdp


def remap(mdp: Amdp, mapping: Mapping[int, int]) -> Amdp:
    """Re-aggregates all counts under a total state mapping.

    Merging several states into one sums their counts; the identity mapping
    reproduces the input.
    """
    missing = mdp.states - set(mapping)
    if missing:
        raise KeyError(f"mapping not total; missing states {sorted(missing)}")
    out = Amdp()
    for s in mdp.states:
        out.add_state(mapping[s])
    for (s, a, d), n in mdp.counts3.items():
        out.ingest(mapping[s], a, mapping[d], weight=n)
    for s, n in mdp.initial.items():
        out.add_state(mapping[s])
        out.initial[mapping[s]] += n
    for name, states in mdp.labels.items():
        out.labels[name] = {mapping[s] for s in states}
    return out


# ---------------------------------------------------------------------------
# Labeling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LabelRule:
    """Conjunction of flag/threshold atoms over checkpoint (or goal) variables.

    ``mode`` controls the lift to abstract states: "all" labels a state only
    when every observed concrete state satisfies the conjunction, "any" when
    at least one does.
    """

    name: str
    atoms: tuple[Predicate, ...]
    mode: str = "all"

    def __post_init__(self) -> None:
        if self.mode not in ("all", "any"):
            raise ValueError(f"unknown label mode {self.mode!r}")
        for atom in self.atoms:
            if not isinstance(atom, (BooleanEq, ScalarThreshold)):
                raise ValueError("label rules take BooleanEq / ScalarThreshold atoms only")

    def holds(self, state: ConcreteState) -> bool:
        for atom in self.atoms:
            try:
                partition = state.partition_of(atom.var)
            except SchemaViolation:
                raise UnknownVariable(
                    f"label rule {self.name!r} references unknown variable {atom.var!r}"
                ) from None
            if partition not in (CHECK, GOAL):
                raise UnknownVariable(
                    f"label rule {self.name!r} references {atom.var!r} outside check/goal"
                )
            if not atom.evaluate(state):
                return False
        return True


@dataclass
class LabelReport:
    """Outcome of a labeling pass; mixed states are refinement candidates."""

    labeled: dict[str, set[int]] = field(default_factory=dict)
    mixed: dict[str, set[int]] = field(default_factory=dict)


def label_states(
    mdp: Amdp,
    rules: Sequence[LabelRule],
    evidence: Mapping[int, Sequence[ConcreteState]],
) -> LabelReport:
    """Applies label rules to abstract states using their concrete evidence.

    Under mode "all", states whose evidence is split (some satisfy, some do
    not) stay unlabeled and are reported as mixed.
    """
    report = LabelReport()
    for rule in rules:
        labeled: set[int] = set()
        mixed: set[int] = set()
        for state_id in sorted(mdp.states):
            states = evidence.get(state_id, ())
            if not states:
                continue
            outcomes = [rule.holds(s) for s in states]
            if rule.mode == "all":
                if all(outcomes):
                    labeled.add(state_id)
                elif any(outcomes):
                    mixed.add(state_id)
            else:
                if any(outcomes):
                    labeled.add(state_id)
        mdp.labels.setdefault(rule.name, set()).update(labeled)
        report.labeled[rule.name] = labeled
        report.mixed[rule.name] = mixed
    return report


def label_by_terminal(
    mdp: Amdp,
    log: TraceLog,
    tree: PredicateTree,
    success_mode: str = "all",
    failure_mode: str = "any",
) -> LabelReport:
    """Labels abstract states from the terminal status of traces ending there.

    Success is lifted conservatively (mode "all" by default: every trace
    ending in the state succeeded), failure permissively (mode "any": some
    trace ending there failed).  Truncated traces contribute no evidence.
    """
    endings: dict[int, Counter[str]] = {}
    for trace in log:
        if trace.n_states == 0:
            continue
        if trace.terminal_status not in (TerminalStatus.SUCCESS, TerminalStatus.FAILURE):
            continue
        final = tree.abstract(trace.state_at(trace.n_states - 1))
        endings.setdefault(final, Counter())[trace.terminal_status.value] += 1

    report = LabelReport()
    for name, status, mode in (
        (SUCCESS_LABEL, "success", success_mode),
        (FAILURE_LABEL, "failure", failure_mode),
    ):
        labeled: set[int] = set()
        mixed: set[int] = set()
        for state_id, counts in endings.items():
            matching = counts.get(status, 0)
            others = sum(counts.values()) - matching
            if mode == "all":
                if matching and not others:
                    labeled.add(state_id)
                elif matching:
                    mixed.add(state_id)
            else:
                if matching:
                    labeled.add(state_id)
        mdp.labels.setdefault(name, set()).update(labeled)
        report.labeled[name] = labeled
        report.mixed[name] = mixed
    return report


# ---------------------------------------------------------------------------
# Explicit-state export / import
# ---------------------------------------------------------------------------

def state_index(mdp: Amdp) -> dict[int, int]:
    """Dense 0..n-1 indexing, deterministic by sorted stable id."""
    return {s: i for i, s in enumerate(sorted(mdp.states))}


def export_explicit(mdp: Amdp) -> tuple[str, str]:
    """Renders (transitions text, labels text) in PRISM explicit style.

    Transitions: a ``states choices transitions`` header, then one line per
    transition ``src choice dst prob action`` with per-state choice indices
    over the state's actions in name order.  Labels: a ``#DECLARATION ...
    #END`` header naming init plus every label, then ``state label...``
    lines.  Output is byte-deterministic for a given model.
    """
    index = state_index(mdp)
    lines: list[str] = []
    n_choices = 0
    n_transitions = 0
    for state in sorted(mdp.states):
        for choice, action in enumerate(mdp.enabled_actions(state)):
            n_choices += 1
            for dst, prob in mdp.successors(state, action):
                n_transitions += 1
                lines.append(f"{index[state]} {choice} {index[dst]} {prob!r} {action}")
    header = f"{len(mdp.states)} {n_choices} {n_transitions}"
    tra = "\n".join([header] + lines) + "\n"

    declared = ["init"] + sorted(mdp.labels)
    by_state: dict[int, list[str]] = {}
    for state in mdp.initial:
        if mdp.initial[state] > 0:
            by_state.setdefault(index[state], []).append("init")
    for name in sorted(mdp.labels):
        for state in mdp.labels[name]:
            by_state.setdefault(index[state], []).append(name)
    label_lines = [f"#DECLARATION {' '.join(declared)} #END"]
    for idx in sorted(by_state):
        names = by_state[idx]
        ordered = [n for n in ["init"] if n in names] + sorted(n for n in names if n != "init")
        label_lines.append(f"{idx} {' '.join(ordered)}")
    lab = "\n".join(label_lines) + "\n"
    return tra, lab


@dataclass
class ExplicitModel:
    """Parsed form of an explicit-state export (dense state indices)."""

    n_states: int
    probabilities: dict[tuple[int, str, int], float]
    labels: dict[str, set[int]]
    init: set[int]

    def probability(self, src: int, action: str, dst: int) -> float:
        key = (src, action, dst)
        if key in self.probabilities:
            return self.probabilities[key]
        if any(s == src and a == action for (s, a, _d) in self.probabilities):
            return 0.0
        raise UnobservedStateAction(f"no transitions for state {src} action {action!r}")


def parse_explicit(tra_text: str, lab_text: str) -> ExplicitModel:
    tra_lines = [ln for ln in tra_text.splitlines() if ln.strip()]
    n_states, n_choices, n_transitions = (int(x) for x in tra_lines[0].split())
    probabilities: dict[tuple[int, str, int], float] = {}
    for line in tra_lines[1:]:
        src, _choice, dst, prob, action = line.split(" ", 4)
        probabilities[(int(src), action, int(dst))] = float(prob)
    if len(probabilities) != n_transitions:
        raise ValueError("transition count does not match header")

    labels: dict[str, set[int]] = {}
    init: set[int] = set()
    lab_lines = [ln for ln in lab_text.splitlines() if ln.strip()]
    if not lab_lines or not lab_lines[0].startswith("#DECLARATION"):
        raise ValueError("labels file is missing its #DECLARATION header")
    declared = lab_lines[0].split()[1:-1]  # between #DECLARATION and #END
    for name in declared:
        if name != "init":
            labels[name] = set()
    for line in lab_lines[1:]:
        parts = line.split()
        idx = int(parts[0])
        for name in parts[1:]:
            if name == "init":
                init.add(idx)
            else:
                labels.setdefault(name, set()).add(idx)
    return ExplicitModel(n_states, probabilities, labels, init)
