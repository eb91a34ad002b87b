"""Stage graph, scheduler, and execution traces.

A pipeline is a linear chain of per-item stages (encode -> decode) followed
by at most one aggregate stage that sees every per-item result. ``execute``
runs it in one of two modes:

* sequential: one event at a time, modules loaded at load-group boundaries
  and released afterwards (the no-reuse baseline);
* reuse: every module loaded once up front and kept resident; stages on
  distinct modules overlap, each module handles one item at a time.
"""
from __future__ import annotations

import enum
import json
import threading
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Sequence, Union

from .clock import Clock, MonotonicClock
from .registry import ExecutionMode, LoadedNow, ModuleRegistry


class StageKind(str, enum.Enum):
    PER_ITEM = "PerItem"
    AGGREGATE = "Aggregate"


class Task(str, enum.Enum):
    RETRIEVAL = "retrieval"
    ASSEMBLY = "assembly"

    @classmethod
    def parse(cls, value) -> "Task":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown task {value!r} (expected 'retrieval' or 'assembly')") from None


class EventKind(str, enum.Enum):
    LOAD = "Load"
    EXEC = "Exec"


LOAD_STAGE = "load"
GROUP_SEP = "+"


@dataclass(frozen=True)
class StageSpec:
    name: str
    module_id: str
    kind: StageKind = StageKind.PER_ITEM
    order: Optional[int] = None  # position in the per-item chain; None for the aggregate

    def __post_init__(self):
        object.__setattr__(self, "kind", StageKind(self.kind))


@dataclass(frozen=True)
class LoadGroup:
    """Modules brought in together at one no-reuse load point.

    ``charge_s`` is the latency billed for the whole point; when None the
    members' own load latencies are summed.
    """

    modules: tuple
    charge_s: Optional[float] = None


@dataclass(frozen=True)
class PipelineSpec:
    stages: tuple
    task: Task = Task.RETRIEVAL
    load_groups: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "task", Task.parse(self.task))
        if self.load_groups is not None:
            object.__setattr__(self, "load_groups", tuple(self.load_groups))

    @property
    def chain(self) -> list:
        """Per-item stages in chain order."""
        per_item = [s for s in self.stages if s.kind is StageKind.PER_ITEM]
        return sorted(per_item, key=lambda s: (s.order is None, s.order if s.order is not None else 0))

    @property
    def aggregate(self) -> Optional[StageSpec]:
        aggs = [s for s in self.stages if s.kind is StageKind.AGGREGATE]
        return aggs[0] if aggs else None

    def modules_used(self) -> list:
        seen = []
        for s in self.chain + ([self.aggregate] if self.aggregate else []):
            if s.module_id not in seen:
                seen.append(s.module_id)
        return seen

    def groups(self) -> tuple:
        """Load groups for the no-reuse baseline.

        Default: the per-item modules as one group, then the aggregate's
        module as a second, i.e. two load points.
        """
        if self.load_groups is not None:
            return self.load_groups
        groups = []
        per_item = []
        for s in self.chain:
            if s.module_id not in per_item:
                per_item.append(s.module_id)
        if per_item:
            groups.append(LoadGroup(tuple(per_item)))
        if self.aggregate is not None:
            groups.append(LoadGroup((self.aggregate.module_id,)))
        return tuple(groups)


@dataclass(frozen=True)
class WorkItem:
    item_id: str
    payload: Any = None


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    stage: str
    module_id: str
    item_id: Optional[str]
    t_start_s: Any
    t_end_s: Any

    def __post_init__(self):
        object.__setattr__(self, "kind", EventKind(self.kind))

    @property
    def modules(self) -> tuple:
        return tuple(self.module_id.split(GROUP_SEP))


class ExecutorFailure(RuntimeError):
    def __init__(self, stage: str, item_id: Optional[str], cause: BaseException):
        super().__init__(f"executor for stage {stage!r} failed on item {item_id!r}: {cause!r}")
        self.stage = stage
        self.item_id = item_id
        self.cause = cause


class EmptyTrace(ValueError):
    pass


@dataclass
class ExecutionTrace:
    mode: ExecutionMode
    events: list = field(default_factory=list)
    failed: bool = False
    failure: Optional[ExecutorFailure] = None
    result: Any = None  # aggregate output, or per-item outputs when there is no aggregate

    @property
    def makespan_s(self):
        return makespan(self)

    def exec_events(self) -> list:
        return [e for e in self.events if e.kind is EventKind.EXEC]

    def load_events(self) -> list:
        return [e for e in self.events if e.kind is EventKind.LOAD]


def makespan(trace: Union[ExecutionTrace, Sequence[TraceEvent]]):
    events = trace.events if isinstance(trace, ExecutionTrace) else list(trace)
    if not events:
        raise EmptyTrace("makespan of an empty trace")
    return max(e.t_end_s for e in events) - min(e.t_start_s for e in events)


def validate_spec(spec: PipelineSpec, registry: ModuleRegistry) -> list:
    problems = []
    names = [s.name for s in spec.stages]
    for n in sorted({n for n in names if names.count(n) > 1}):
        problems.append(f"duplicate stage name {n!r}")
    for s in spec.stages:
        if s.module_id not in registry:
            problems.append(f"stage {s.name!r} references unregistered module {s.module_id!r}")
    n_agg = sum(s.kind is StageKind.AGGREGATE for s in spec.stages)
    if n_agg > 1:
        problems.append(f"{n_agg} aggregate stages; at most one allowed")
    orders = [s.order for s in spec.stages if s.kind is StageKind.PER_ITEM]
    if any(o is None for o in orders):
        problems.append("per-item stage without a chain position")
    elif sorted(orders) != list(range(len(orders))):
        problems.append(f"per-item stages do not form a single linear chain: orders {sorted(orders)}")
    for g in spec.groups() if spec.load_groups is not None else ():
        for m in g.modules:
            if m not in registry:
                problems.append(f"load group references unregistered module {m!r}")
    return problems


class _Sink:
    """Append-only, lock-protected event list."""

    def __init__(self):
        self._events = []
        self._lock = threading.Lock()

    def append(self, ev: TraceEvent):
        with self._lock:
            self._events.append(ev)

    def events(self) -> list:
        with self._lock:
            return sorted(self._events, key=lambda e: (e.t_start_s, e.t_end_s))


def _cost_of(costs, stage: str, item_id):
    if costs is None:
        return 0
    c = costs.get(stage, 0) if isinstance(costs, Mapping) else costs(stage, item_id)
    return c(item_id) if callable(c) else c


def execute(
    spec: PipelineSpec,
    items: Sequence[WorkItem],
    mode,
    executors: Mapping[str, Callable],
    registry: ModuleRegistry,
    clock: Optional[Clock] = None,
    costs=None,
) -> ExecutionTrace:
    """Run ``spec`` over ``items``.

    ``executors`` maps stage name to a callable taking the previous stage's
    payload and returning the next one; the aggregate executor receives the
    list of final per-item payloads in input order. ``costs`` is only read by
    a virtual clock: stage name -> seconds, or -> callable(item_id) -> seconds.
    """
    mode = ExecutionMode.parse(mode)
    clock = clock if clock is not None else MonotonicClock()
    problems = validate_spec(spec, registry)
    if problems:
        raise ValueError("invalid pipeline spec: " + "; ".join(problems))
    missing = [s.name for s in spec.stages if s.name not in executors]
    if missing:
        raise ValueError(f"no executor for stages {missing}")
    ids = [it.item_id for it in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate item ids in one run")

    sink = _Sink()
    chain = spec.chain
    agg = spec.aggregate
    sequential = mode is ExecutionMode.SEQUENTIAL_NO_REUSE

    def load(group_modules, charge=None):
        t0 = clock.now()
        loaded = []
        share = None if charge is None else charge / len(group_modules)
        for m in group_modules:
            out = registry.acquire(m, mode, clock, duration_s=share)
            if isinstance(out, LoadedNow):
                loaded.append(m)
        if loaded:
            sink.append(TraceEvent(EventKind.LOAD, LOAD_STAGE, GROUP_SEP.join(loaded), None, t0, clock.now()))

    def reuse_loads(modules):
        for m in modules:
            out = registry.acquire(m, mode, clock)
            if isinstance(out, LoadedNow):
                sink.append(TraceEvent(EventKind.LOAD, LOAD_STAGE, m, None, out.t_start_s, out.t_end_s))

    groups = spec.groups()
    agg_group = None
    if agg is not None:
        agg_group = next((g for g in reversed(groups) if agg.module_id in g.modules), None)
    item_groups = [g for g in groups if g is not agg_group]

    if sequential:
        for g in item_groups:
            load(g.modules, g.charge_s)
    else:
        reuse_loads(spec.modules_used())

    outputs = {}
    failure = None
    if chain and items:
        failure = _run_chain(chain, items, executors, clock, costs, sink, sequential, outputs)

    if sequential and failure is None:
        for g in item_groups:
            for m in g.modules:
                registry.release(m, mode)

    result = None
    if failure is None and agg is not None:
        if sequential and agg_group is not None:
            load(agg_group.modules, agg_group.charge_s)
        per_item = [outputs[it.item_id] if chain else it.payload for it in items]
        with clock.runner(1) as runner:
            runner.start((agg.name, None), executors[agg.name], per_item, _cost_of(costs, agg.name, None))
            job = runner.wait_any()
        sink.append(TraceEvent(EventKind.EXEC, agg.name, agg.module_id, None, job.t_start, job.t_end))
        if job.error is not None:
            failure = ExecutorFailure(agg.name, None, job.error)
        else:
            result = job.result
        if sequential and agg_group is not None:
            for m in agg_group.modules:
                registry.release(m, mode)
    elif failure is None:
        result = [outputs[it.item_id] for it in items] if chain else [it.payload for it in items]

    return ExecutionTrace(mode, sink.events(), failed=failure is not None, failure=failure, result=result)


def _run_chain(chain, items, executors, clock, costs, sink, sequential, outputs):
    """Drive the per-item chain to completion; returns an ExecutorFailure or None."""
    depth = len(chain)
    # queue per chain position; position 0 is fed in input order, later ones in completion order
    queues = [deque() for _ in range(depth)]
    for it in items:
        queues[0].append((it.item_id, it.payload))
    busy = [False] * depth
    in_flight = 0
    failure = None

    with clock.runner(depth) as runner:
        while True:
            if failure is None:
                # sequential: deepest ready stage first, so each item finishes before the next starts
                for k in (reversed(range(depth)) if sequential else range(depth)):
                    if sequential and in_flight:
                        break
                    if busy[k] or not queues[k]:
                        continue
                    item_id, payload = queues[k].popleft()
                    st = chain[k]
                    runner.start((k, item_id), executors[st.name], payload, _cost_of(costs, st.name, item_id))
                    busy[k] = True
                    in_flight += 1
            if not in_flight:
                break
            job = runner.wait_any()
            in_flight -= 1
            k, item_id = job.tag
            busy[k] = False
            st = chain[k]
            sink.append(TraceEvent(EventKind.EXEC, st.name, st.module_id, item_id, job.t_start, job.t_end))
            if job.error is not None:
                if failure is None:
                    failure = ExecutorFailure(st.name, item_id, job.error)
                continue
            if k + 1 < depth:
                queues[k + 1].append((item_id, job.result))
            else:
                outputs[item_id] = job.result
    return failure


def _overlap(a: TraceEvent, b: TraceEvent) -> bool:
    return a.t_start_s < b.t_end_s and b.t_start_s < a.t_end_s


def verify_trace(trace: ExecutionTrace, spec: PipelineSpec, mode=None) -> list:
    """Mechanical check of the execution contract; empty list means valid."""
    mode = ExecutionMode.parse(mode if mode is not None else trace.mode)
    v = []
    events = list(trace.events)
    by_name = {s.name: s for s in spec.stages}
    chain = spec.chain
    pos = {s.name: i for i, s in enumerate(chain)}
    agg = spec.aggregate

    for e in events:
        if e.t_end_s < e.t_start_s or e.t_start_s < 0:
            v.append(f"bad interval on {e.kind.value} {e.stage}/{e.item_id}: [{e.t_start_s}, {e.t_end_s}]")
        if e.kind is EventKind.EXEC:
            st = by_name.get(e.stage)
            if st is None:
                v.append(f"exec event for unknown stage {e.stage!r}")
            elif st.module_id != e.module_id:
                v.append(f"stage {e.stage!r} ran on {e.module_id!r}, expected {st.module_id!r}")

    execs = [e for e in events if e.kind is EventKind.EXEC and e.stage in by_name]
    loads = [e for e in events if e.kind is EventKind.LOAD]

    # (a) dependencies
    per_item = {}
    for e in execs:
        if e.stage in pos:
            per_item.setdefault(e.item_id, {})[pos[e.stage]] = e
    for item_id, stages in per_item.items():
        for k, e in stages.items():
            if k == 0:
                continue
            prev = stages.get(k - 1)
            if prev is None:
                v.append(f"dependency: {e.stage}({item_id}) ran without {chain[k - 1].name}({item_id})")
            elif e.t_start_s < prev.t_end_s:
                v.append(f"dependency: {e.stage}({item_id}) started before {prev.stage}({item_id}) ended")
    if agg is not None:
        for a in (e for e in execs if e.stage == agg.name):
            late = [e for e in execs if e.stage in pos and e.t_end_s > a.t_start_s]
            if late:
                v.append(f"dependency: aggregate {agg.name} started before {len(late)} per-item stage(s) ended")

    # (b) one in-flight event per module, loads included
    for i, a in enumerate(execs):
        for b in execs[i + 1:]:
            if a.module_id == b.module_id and _overlap(a, b):
                v.append(f"serialization: {a.stage}({a.item_id}) overlaps {b.stage}({b.item_id}) on {a.module_id}")
    for ld in loads:
        for e in execs:
            if e.module_id in ld.modules and _overlap(ld, e):
                v.append(f"load of {e.module_id} overlaps {e.stage}({e.item_id})")

    # (c) mode semantics
    if mode is ExecutionMode.SEQUENTIAL_NO_REUSE:
        for i, a in enumerate(events):
            for b in events[i + 1:]:
                if _overlap(a, b):
                    v.append(f"sequential mode: {a.stage}({a.item_id}) overlaps {b.stage}({b.item_id})")
    else:
        counts = {}
        for ld in loads:
            for m in ld.modules:
                counts[m] = counts.get(m, 0) + 1
        for m, c in sorted(counts.items()):
            if c > 1:
                v.append(f"reuse mode: module {m} loaded {c} times")
        for e in execs:
            own = [ld for ld in loads if e.module_id in ld.modules]
            if own and not any(ld.t_end_s <= e.t_start_s for ld in own):
                v.append(f"{e.stage}({e.item_id}) started before {e.module_id} finished loading")
    return v


# -- trace files: one JSON object per line --

_FIELDS = ("kind", "stage", "module_id", "item_id", "t_start_s", "t_end_s")


def format_event(e: TraceEvent) -> str:
    head = json.dumps({"kind": e.kind.value, "stage": e.stage, "module_id": e.module_id, "item_id": e.item_id})
    # hand-formatted times: fixed 9 fractional digits, no exponent
    return head[:-1] + f', "t_start_s": {float(e.t_start_s):.9f}, "t_end_s": {float(e.t_end_s):.9f}}}'


def write_trace(trace: ExecutionTrace, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for e in trace.events:
            f.write(format_event(e) + "\n")
    return path


def parse_event(line: str) -> TraceEvent:
    d = json.loads(line)
    missing = [k for k in _FIELDS if k not in d]
    if missing:
        raise ValueError(f"trace line missing fields {missing}: {line.strip()}")
    return TraceEvent(d["kind"], d["stage"], d["module_id"], d["item_id"], float(d["t_start_s"]), float(d["t_end_s"]))


def read_trace(path, mode) -> ExecutionTrace:
    with open(path, encoding="utf-8") as f:
        events = [parse_event(line) for line in f if line.strip()]
    return ExecutionTrace(ExecutionMode.parse(mode), events)
