"""Typed representation of agent execution traces and JSONL event ingestion.

A trace is a chain of tool-call transitions between concrete states.  Each
concrete state is a snapshot of three variable partitions:

* ``goal``  -- immutable task context,
* ``check`` -- low-dimensional workflow flags used for labeling,
* ``state`` -- execution statistics and artifacts used as features.

The wire format is JSONL, one event per line:

* tool_call: ``{"trace_id", "seq", "kind": "tool_call", "action",
  "pre": {"goal": {...}, "check": {...}, "state": {...}}, "post": {...}}``.
  ``pre`` may be omitted when the previous event's ``post`` (or an ``initial``
  record for the first step) supplies it.
* terminal: ``{"trace_id", "seq", "kind": "terminal", "status":
  "success"|"failure"}``.
* initial (optional): ``{"trace_id", "seq", "kind": "initial", "state":
  {"goal": ..., "check": ..., "state": ...}}``.

Unknown top-level keys are ignored.  The variable schema (names and type
tags) is frozen on first sight; any later event that disagrees is rejected
with :class:`~tracemdp.errors.SchemaViolation`, never coerced.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Mapping

from .errors import (
    ChainBreak,
    DuplicateSeq,
    MalformedRecord,
    SchemaViolation,
)

# Value type tags.
NUMBER = "number"
INTEGER = "integer"
BOOLEAN = "boolean"
TEXT = "text"
COLLECTION = "collection"

# Variable partitions.
GOAL = "goal"
CHECK = "check"
STATE = "state"
PARTITIONS = (GOAL, CHECK, STATE)


@dataclass(frozen=True)
class Value:
    """Immutable tagged value.

    ``kind`` is one of number/integer/boolean/text/collection and never
    changes after construction.  Collections hold a tuple of nested Values.
    """

    kind: str
    data: float | int | bool | str | tuple["Value", ...]

    @staticmethod
    def number(x: float) -> "Value":
        return Value(NUMBER, float(x))

    @staticmethod
    def integer(n: int) -> "Value":
        return Value(INTEGER, int(n))

    @staticmethod
    def boolean(b: bool) -> "Value":
        return Value(BOOLEAN, bool(b))

    @staticmethod
    def text(s: str) -> "Value":
        return Value(TEXT, str(s))

    @staticmethod
    def collection(items: Iterable["Value"]) -> "Value":
        return Value(COLLECTION, tuple(items))

    @staticmethod
    def from_json(raw: object) -> "Value":
        # bool must be tested before int: bool is a subclass of int.
        if isinstance(raw, bool):
            return Value(BOOLEAN, raw)
        if isinstance(raw, int):
            return Value(INTEGER, raw)
        if isinstance(raw, float):
            return Value(NUMBER, raw)
        if isinstance(raw, str):
            return Value(TEXT, raw)
        if isinstance(raw, list):
            return Value(COLLECTION, tuple(Value.from_json(x) for x in raw))
        raise MalformedRecord(f"unsupported JSON value: {raw!r}")

    def to_json(self) -> object:
        if self.kind == COLLECTION:
            return [v.to_json() for v in self.data]  # type: ignore[union-attr]
        return self.data

    @property
    def numeric(self) -> float:
        """Numeric payload of a number/integer value."""
        if self.kind not in (NUMBER, INTEGER):
            raise SchemaViolation(f"value of kind {self.kind!r} is not numeric")
        return float(self.data)  # type: ignore[arg-type]

    @property
    def cardinality(self) -> int:
        if self.kind != COLLECTION:
            raise SchemaViolation(f"value of kind {self.kind!r} has no cardinality")
        return len(self.data)  # type: ignore[arg-type]

    @property
    def is_empty(self) -> bool:
        return self.cardinality == 0


def derive_features(value: Value) -> dict[str, object]:
    """Features exposed to the predicate grammar for one value.

    Collections contribute their derived features (cardinality, emptiness);
    text contributes only its identity (no embeddings).
    """
    if value.kind in (NUMBER, INTEGER):
        return {"value": value.numeric}
    if value.kind == BOOLEAN:
        return {"value": bool(value.data)}
    if value.kind == TEXT:
        return {"value": value.data}
    return {"cardinality": value.cardinality, "empty": value.is_empty}


@dataclass(frozen=True)
class ConcreteState:
    """Snapshot of goal/check/state variables at one point of a run."""

    goal_vars: dict[str, Value]
    check_vars: dict[str, Value]
    state_vars: dict[str, Value]

    def __post_init__(self) -> None:
        names = list(self.goal_vars) + list(self.check_vars) + list(self.state_vars)
        if len(names) != len(set(names)):
            raise SchemaViolation("variable names must be unique across partitions")

    def partition_of(self, name: str) -> str:
        if name in self.goal_vars:
            return GOAL
        if name in self.check_vars:
            return CHECK
        if name in self.state_vars:
            return STATE
        raise SchemaViolation(f"unknown variable {name!r}")

    def value(self, name: str) -> Value:
        for part in (self.goal_vars, self.check_vars, self.state_vars):
            if name in part:
                return part[name]
        raise SchemaViolation(f"unknown variable {name!r}")

    def variables(self) -> Iterator[tuple[str, str, Value]]:
        """Yields (name, partition, value) in a deterministic order."""
        for part_name, part in ((GOAL, self.goal_vars), (CHECK, self.check_vars), (STATE, self.state_vars)):
            for name in sorted(part):
                yield name, part_name, part[name]

    def schema(self) -> dict[str, tuple[str, str]]:
        """Maps variable name to (partition, type tag)."""
        return {name: (part, val.kind) for name, part, val in self.variables()}

    def to_json(self) -> dict[str, dict[str, object]]:
        return {
            "goal": {k: v.to_json() for k, v in sorted(self.goal_vars.items())},
            "check": {k: v.to_json() for k, v in sorted(self.check_vars.items())},
            "state": {k: v.to_json() for k, v in sorted(self.state_vars.items())},
        }

    @staticmethod
    def from_json(raw: Mapping[str, object]) -> "ConcreteState":
        if not isinstance(raw, Mapping):
            raise MalformedRecord(f"snapshot must be an object, got {type(raw).__name__}")

        def part(key: str) -> dict[str, Value]:
            sub = raw.get(key, {})
            if not isinstance(sub, Mapping):
                raise MalformedRecord(f"snapshot partition {key!r} must be an object")
            return {str(k): Value.from_json(v) for k, v in sub.items()}

        return ConcreteState(part("goal"), part("check"), part("state"))


@dataclass(frozen=True, eq=False)
class ActionSymbol:
    """A tool type.  Equality and hashing are by name only."""

    name: str
    args_digest: str | None = None

    def __post_init__(self) -> None:
        if not self.name:
            raise MalformedRecord("action name must be non-empty")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ActionSymbol) and other.name == self.name

    def __hash__(self) -> int:
        return hash(self.name)


@dataclass(frozen=True)
class Transition:
    pre: ConcreteState
    action: ActionSymbol
    post: ConcreteState

    def __post_init__(self) -> None:
        if self.pre.schema() != self.post.schema():
            raise SchemaViolation("pre and post snapshots of a transition must share one schema")


class TerminalStatus(Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    TRUNCATED = "truncated"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Trace:
    """An ordered chain of transitions plus how the run ended."""

    trace_id: str
    steps: tuple[Transition, ...]
    terminal_status: TerminalStatus = TerminalStatus.TRUNCATED

    def __post_init__(self) -> None:
        for i in range(len(self.steps) - 1):
            if self.steps[i].post != self.steps[i + 1].pre:
                raise ChainBreak(
                    f"trace {self.trace_id!r}: post of step {i} differs from pre of step {i + 1}"
                )

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def n_states(self) -> int:
        """Number of concrete snapshots (0 for an empty trace)."""
        return len(self.steps) + 1 if self.steps else 0

    def state_at(self, index: int) -> ConcreteState:
        """Snapshot number ``index``; index n is the final post state."""
        if not 0 <= index < self.n_states:
            raise IndexError(f"state index {index} out of range for trace of {len(self)} steps")
        if index < len(self.steps):
            return self.steps[index].pre
        return self.steps[-1].post

    def states(self) -> Iterator[ConcreteState]:
        for i in range(self.n_states):
            yield self.state_at(i)

    def schema(self) -> dict[str, tuple[str, str]] | None:
        return self.steps[0].pre.schema() if self.steps else None


class TraceLog:
    """Append-only collection of traces sharing one schema.

    Stored (trace index, state index) pairs are stable identifiers: appends
    never change the meaning of earlier indices.
    """

    def __init__(self, schema: dict[str, tuple[str, str]] | None = None):
        self._traces: list[Trace] = []
        self.schema = schema

    def __len__(self) -> int:
        return len(self._traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self._traces)

    def __getitem__(self, index: int) -> Trace:
        return self._traces[index]

    @property
    def traces(self) -> tuple[Trace, ...]:
        return tuple(self._traces)

    @property
    def n_transitions(self) -> int:
        return sum(len(t) for t in self._traces)

    def append(self, trace: Trace) -> int:
        """Adds a trace, freezing the schema on first use.  Returns its index."""
        ts = trace.schema()
        if ts is not None:
            if self.schema is None:
                self.schema = ts
            elif ts != self.schema:
                raise SchemaViolation(
                    f"trace {trace.trace_id!r} does not match the frozen schema"
                )
        self._traces.append(trace)
        return len(self._traces) - 1

    def state_at(self, trace_index: int, state_index: int) -> ConcreteState:
        return self._traces[trace_index].state_at(state_index)


# ---------------------------------------------------------------------------
# Event parsing and stream segmentation
# ---------------------------------------------------------------------------

TOOL_CALL = "tool_call"
TERMINAL = "terminal"
INITIAL = "initial"


@dataclass(frozen=True)
class Event:
    kind: str
    trace_id: str
    seq: int
    action: str | None = None
    args_digest: str | None = None
    pre: ConcreteState | None = None
    post: ConcreteState | None = None
    status: str | None = None
    state: ConcreteState | None = None


def _digest_args(raw: object) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _check_schema(state: ConcreteState, schema: dict[str, tuple[str, str]], where: str) -> None:
    actual = state.schema()
    if actual == schema:
        return
    extra = sorted(set(actual) - set(schema))
    missing = sorted(set(schema) - set(actual))
    if extra:
        raise SchemaViolation(f"{where}: unknown variable {extra[0]!r} after schema freeze")
    if missing:
        raise SchemaViolation(f"{where}: missing variable {missing[0]!r}")
    for name in sorted(schema):
        if actual[name] != schema[name]:
            raise SchemaViolation(
                f"{where}: variable {name!r} has {actual[name]}, schema requires {schema[name]}"
            )
    raise SchemaViolation(f"{where}: snapshot does not conform to schema")


def parse_event_line(line: str, schema: dict[str, tuple[str, str]] | None = None) -> Event:
    """Parses one JSONL record into a typed event.

    If ``schema`` is given, every snapshot in the record is validated against
    it (missing or retyped variables raise SchemaViolation).
    """
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedRecord(f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise MalformedRecord("event record must be a JSON object")

    kind = raw.get("kind")
    trace_id = raw.get("trace_id")
    seq = raw.get("seq")
    if not isinstance(trace_id, str) or not trace_id:
        raise MalformedRecord("missing or invalid 'trace_id'")
    if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
        raise MalformedRecord("missing or invalid 'seq'")

    if kind == TOOL_CALL:
        action = raw.get("action")
        if not isinstance(action, str) or not action:
            raise MalformedRecord("tool_call event needs a non-empty 'action'")
        if "post" not in raw:
            raise MalformedRecord("tool_call event needs a 'post' snapshot")
        pre = ConcreteState.from_json(raw["pre"]) if "pre" in raw else None
        post = ConcreteState.from_json(raw["post"])
        digest = raw.get("args_digest")
        if digest is None and "args" in raw:
            digest = _digest_args(raw["args"])
        if schema is not None:
            if pre is not None:
                _check_schema(pre, schema, f"{trace_id}#{seq} pre")
            _check_schema(post, schema, f"{trace_id}#{seq} post")
        return Event(TOOL_CALL, trace_id, seq, action=action, args_digest=digest, pre=pre, post=post)

    if kind == TERMINAL:
        status = raw.get("status")
        if status not in ("success", "failure"):
            raise MalformedRecord("terminal event needs status 'success' or 'failure'")
        return Event(TERMINAL, trace_id, seq, status=status)

    if kind == INITIAL:
        if "state" not in raw:
            raise MalformedRecord("initial event needs a 'state' snapshot")
        state = ConcreteState.from_json(raw["state"])
        if schema is not None:
            _check_schema(state, schema, f"{trace_id}#{seq} initial")
        return Event(INITIAL, trace_id, seq, state=state)

    raise MalformedRecord(f"unknown event kind: {kind!r}")


def segment_stream(events: Iterable[Event]) -> Trace:
    """Segments one trace's events (sorted by seq) into chained transitions.

    A tool_call without an explicit ``pre`` takes the previous post snapshot
    (or the ``initial`` record's state for the first step), so the chain
    property holds by construction in post-only logs.
    """
    events = list(events)
    if not events:
        raise MalformedRecord("cannot segment an empty event stream")
    trace_id = events[0].trace_id

    seen_seq: set[int] = set()
    last_seq: int | None = None
    for ev in events:
        if ev.trace_id != trace_id:
            raise MalformedRecord(
                f"mixed trace ids in one stream: {trace_id!r} and {ev.trace_id!r}"
            )
        if ev.seq in seen_seq:
            raise DuplicateSeq(f"trace {trace_id!r}: duplicate seq {ev.seq}")
        seen_seq.add(ev.seq)
        if last_seq is not None and ev.seq < last_seq:
            raise MalformedRecord(f"trace {trace_id!r}: events not sorted by seq")
        last_seq = ev.seq

    status = TerminalStatus.TRUNCATED
    steps: list[Transition] = []
    prev_post: ConcreteState | None = None

    for pos, ev in enumerate(events):
        if ev.kind == TERMINAL:
            if pos != len(events) - 1:
                raise MalformedRecord(f"trace {trace_id!r}: terminal event is not last")
            status = TerminalStatus(ev.status)
            continue
        if ev.kind == INITIAL:
            if steps or prev_post is not None:
                raise MalformedRecord(f"trace {trace_id!r}: initial record after first step")
            prev_post = ev.state
            continue

        pre = ev.pre
        if pre is None:
            if prev_post is None:
                raise MalformedRecord(
                    f"trace {trace_id!r}#{ev.seq}: no 'pre' snapshot and no prior state"
                )
            pre = prev_post
        elif prev_post is not None and pre != prev_post:
            raise ChainBreak(
                f"trace {trace_id!r}#{ev.seq}: pre snapshot differs from previous post"
            )
        assert ev.post is not None
        steps.append(Transition(pre, ActionSymbol(ev.action or "", ev.args_digest), ev.post))
        prev_post = ev.post

    return Trace(trace_id, tuple(steps), status)


def read_events(lines: Iterable[str]) -> TraceLog:
    """Builds a TraceLog from JSONL lines.

    Traces are ordered by first appearance of their id; events within a trace
    are ordered by seq.  The schema freezes at the first snapshot seen.
    """
    by_trace: dict[str, list[Event]] = {}
    schema: dict[str, tuple[str, str]] | None = None
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            event = parse_event_line(line, schema)
        except (MalformedRecord, SchemaViolation) as exc:
            raise type(exc)(f"line {lineno}: {exc}") from None
        if schema is None:
            snap = event.post or event.pre or event.state
            if snap is not None:
                schema = snap.schema()
                # Re-validate the freezing record itself against its own schema
                # (catches pre/post disagreement inside one event).
                try:
                    parse_event_line(line, schema)
                except SchemaViolation as exc:
                    raise SchemaViolation(f"line {lineno}: {exc}") from None
        by_trace.setdefault(event.trace_id, []).append(event)

    log = TraceLog(schema)
    for trace_id, events in by_trace.items():
        events.sort(key=lambda e: e.seq)
        log.append(segment_stream(events))
    return log


def read_trace_log(path: str) -> TraceLog:
    with open(path, "r", encoding="utf-8") as fh:
        return read_events(fh)


def trace_to_lines(trace: Trace) -> list[str]:
    """Serializes a trace back to JSONL event lines (inverse of ingestion)."""
    lines = []
    for i, step in enumerate(trace.steps):
        record: dict[str, object] = {
            "trace_id": trace.trace_id,
            "seq": i,
            "kind": TOOL_CALL,
            "action": step.action.name,
            "pre": step.pre.to_json(),
            "post": step.post.to_json(),
        }
        if step.action.args_digest is not None:
            record["args_digest"] = step.action.args_digest
        lines.append(json.dumps(record, sort_keys=True, separators=(",", ":")))
    if trace.terminal_status in (TerminalStatus.SUCCESS, TerminalStatus.FAILURE):
        lines.append(
            json.dumps(
                {
                    "trace_id": trace.trace_id,
                    "seq": len(trace.steps),
                    "kind": TERMINAL,
                    "status": trace.terminal_status.value,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
        )
    return lines


def write_trace_log(log: TraceLog, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in log:
            for line in trace_to_lines(trace):
                fh.write(line + "\n")
