"""Virtual-time evaluation of both execution modes from device profiles."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from scipy.optimize import brentq

from .clock import VirtualClock
from .pipeline import (
    ExecutionTrace,
    LoadGroup,
    PipelineSpec,
    StageKind,
    StageSpec,
    Task,
    WorkItem,
    execute,
)
from .profiles import DeviceProfile, InvalidProfile, MissingReportedData, validate_profile
from .registry import ExecutionMode, ModuleDescriptor, ModuleRegistry, Role

ENCODER = "video-encoder"
DECODER = "text-decoder"
EMBEDDER = "sentence-embedder"


class AggregateScaling(str, enum.Enum):
    BATCH = "batch"
    PER_ITEM = "per_item"


class Source(str, enum.Enum):
    SIMULATED = "Simulated"
    REPORTED = "Reported"


@dataclass(frozen=True)
class SimConfig:
    n_items: int = 5
    per_item_overhead_s: float = 0.0
    aggregate_scaling: AggregateScaling = AggregateScaling.BATCH

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError(f"n_items must be >= 1, got {self.n_items}")
        if self.per_item_overhead_s < 0:
            raise ValueError("per_item_overhead_s must be >= 0")
        object.__setattr__(self, "aggregate_scaling", AggregateScaling(self.aggregate_scaling))


@dataclass(frozen=True)
class ComparisonReport:
    task: str
    baseline_s: float
    reuse_s: float
    reduction_pct: float
    source: Source

    @classmethod
    def of(cls, task, baseline_s, reuse_s, source) -> "ComparisonReport":
        red = 100.0 * (baseline_s - reuse_s) / baseline_s if baseline_s > 0 else 0.0
        return cls(str(task), baseline_s, reuse_s, red, Source(source))


def task_spec(task, agg_charge: Optional[float] = None, item_charge: Optional[float] = None) -> PipelineSpec:
    """encode -> caption per item, then indexing (retrieval) or script generation (assembly).

    Script generation runs on the text decoder, so in the no-reuse baseline
    that second load point brings the decoder back after it was released.
    """
    task = Task.parse(task)
    if task is Task.RETRIEVAL:
        agg = StageSpec("indexing", EMBEDDER, StageKind.AGGREGATE)
    else:
        agg = StageSpec("script_generation", DECODER, StageKind.AGGREGATE)
    stages = (
        StageSpec("video_encode", ENCODER, StageKind.PER_ITEM, 0),
        StageSpec("caption_decode", DECODER, StageKind.PER_ITEM, 1),
        agg,
    )
    groups = (LoadGroup((ENCODER, DECODER), item_charge), LoadGroup((agg.module_id,), agg_charge))
    return PipelineSpec(stages, task, groups)


def _registry(weights_mb=None, reuse_load_each=0) -> ModuleRegistry:
    weights_mb = weights_mb or {}
    reg = ModuleRegistry()
    for mid, role in ((ENCODER, Role.VIDEO_ENCODER), (DECODER, Role.TEXT_DECODER), (EMBEDDER, Role.EMBEDDER)):
        reg.register_module(ModuleDescriptor(mid, role, weights_mb.get(mid, 0.0), reuse_load_each))
    return reg


def _identity(x):
    return x


def _run(task, mode, n, load_total, enc, dec, agg_cost, point_weights=(1, 1)) -> ExecutionTrace:
    mode = ExecutionMode.parse(mode)
    task = Task.parse(task)
    if mode is ExecutionMode.SEQUENTIAL_NO_REUSE:
        wsum = sum(point_weights)
        # load_total is what gets billed across both points
        charges = [load_total * w / wsum for w in point_weights] if wsum else [0, 0]
        if len(charges) != 2:
            raise InvalidProfile("load_s.baseline_point_weights", "the task pipelines have exactly two load points")
        spec = task_spec(task, agg_charge=charges[1], item_charge=charges[0])
        reg = _registry()
    else:
        spec = task_spec(task)
        used = spec.modules_used()
        reg = _registry(reuse_load_each=load_total / len(used))
    executors = {s.name: _identity for s in spec.stages}
    costs = {"video_encode": enc, "caption_decode": dec, spec.aggregate.name: agg_cost}
    items = [WorkItem(f"clip{i:03d}", i) for i in range(n)]
    return execute(spec, items, mode, executors, reg, VirtualClock(), costs)


def simulate(profile: DeviceProfile, task, config: SimConfig = SimConfig(), mode="reuse") -> ExecutionTrace:
    """Deterministic virtual-clock run of ``task`` on ``profile``."""
    validate_profile(profile)
    mode = ExecutionMode.parse(mode)
    task = Task.parse(task)
    s = profile.stage_s
    agg = s.indexing if task is Task.RETRIEVAL else s.script_generation
    if config.aggregate_scaling is AggregateScaling.PER_ITEM:
        agg = agg * config.n_items
    o = config.per_item_overhead_s
    if mode is ExecutionMode.SEQUENTIAL_NO_REUSE:
        w = profile.load_s.baseline_point_weights
        load_total = profile.load_s.baseline_total * sum(w)
    else:
        w = (1, 1)
        load_total = profile.load_s.reuse_total
    return _run(task, mode, config.n_items, load_total, s.video_encode + o, s.caption_decode + o, agg, w)


def simulate_params(L, e, d, N, A, mode, task="retrieval") -> ExecutionTrace:
    """Virtual-clock run with raw constants; ``L`` is the total load charge for the mode."""
    return _run(task, mode, N, L, e, d, A)


def analytic_makespan(L, e, d, N, A, mode):
    """Closed-form makespan for constant stage times.

    sequential: every event back to back. reuse: the encoder runs items
    back to back and the slower of the two stages sets the pace.
    Works on any numeric type; pass Fractions for exact results.
    """
    mode = ExecutionMode.parse(mode)
    if N < 1:
        raise ValueError("N must be >= 1")
    if min(L, e, d, A) < 0:
        raise ValueError("times must be nonnegative")
    if mode is ExecutionMode.SEQUENTIAL_NO_REUSE:
        return L + N * (e + d) + A
    return L + e + (N - 1) * max(e, d) + d + A


def reported_reduction(profile: DeviceProfile, task) -> ComparisonReport:
    """Reduction from the profile's published figures; ``task`` may also be 'loading'."""
    if str(task).lower() == "loading":
        return ComparisonReport.of("loading", profile.load_s.baseline_total, profile.load_s.reuse_total,
                                   Source.REPORTED)
    t = Task.parse(task).value
    r = profile.reported_e2e_s.get(t)
    if r is None:
        raise MissingReportedData(f"{profile.name} has no reported end-to-end figures for {t}")
    return ComparisonReport.of(t, r.baseline, r.reuse, Source.REPORTED)


def compare_modes(profile: DeviceProfile, task, config: SimConfig = SimConfig()) -> ComparisonReport:
    base = simulate(profile, task, config, ExecutionMode.SEQUENTIAL_NO_REUSE).makespan_s
    reuse = simulate(profile, task, config, ExecutionMode.REUSE_PARALLEL).makespan_s
    return ComparisonReport.of(Task.parse(task).value, base, reuse, Source.SIMULATED)


@dataclass(frozen=True)
class Calibration:
    per_item_overhead_s: float
    simulated_reuse_s: float
    reported_reuse_s: float
    residual_s: float  # simulated minus reported, after fitting


def calibrate_overhead(profile: DeviceProfile, task, config: SimConfig = SimConfig()) -> Calibration:
    """Fit ``per_item_overhead_s`` so simulated reuse end-to-end hits the reported one.

    If the ideal pipeline is already slower than reported the overhead stays
    at zero and the (negative) residual is returned as-is.
    """
    target = reported_reduction(profile, task).reuse_s

    def gap(o):
        cfg = SimConfig(config.n_items, o, config.aggregate_scaling)
        return float(simulate(profile, task, cfg, ExecutionMode.REUSE_PARALLEL).makespan_s) - target

    if gap(0.0) >= 0:
        o = 0.0
    else:
        hi = max(1.0, target)
        while gap(hi) < 0:
            hi *= 2
        o = brentq(gap, 0.0, hi, xtol=1e-12)
    sim = gap(o) + target
    return Calibration(o, sim, target, sim - target)


# -- latency comparison report --

COLUMNS = ("model_loading", "video_encode", "caption_decode", "indexing", "script_generation",
           "retrieval_e2e", "assembly_e2e")


def table3_rows(profile: DeviceProfile, config: SimConfig = SimConfig(), tasks=("retrieval", "assembly")) -> list:
    """Flat rows, one per (source, mode), with load, per-stage and end-to-end columns."""
    s = profile.stage_s
    rows = []
    sim = {}
    for mode in (ExecutionMode.SEQUENTIAL_NO_REUSE, ExecutionMode.REUSE_PARALLEL):
        for t in tasks:
            sim[(mode, t)] = float(simulate(profile, t, config, mode).makespan_s)
    for source in (Source.REPORTED, Source.SIMULATED):
        for mode in (ExecutionMode.SEQUENTIAL_NO_REUSE, ExecutionMode.REUSE_PARALLEL):
            base = mode is ExecutionMode.SEQUENTIAL_NO_REUSE
            if source is Source.REPORTED:
                load = profile.load_s.baseline_total if base else profile.load_s.reuse_total
                e2e = {t: (getattr(profile.reported_e2e_s[t], "baseline" if base else "reuse")
                           if t in profile.reported_e2e_s else None) for t in ("retrieval", "assembly")}
            else:
                w = sum(profile.load_s.baseline_point_weights)
                load = profile.load_s.baseline_total * w if base else profile.load_s.reuse_total
                e2e = {t: sim.get((mode, t)) for t in ("retrieval", "assembly")}
            rows.append({
                "device": profile.name, "source": source.value, "mode": mode.value,
                "model_loading": load, "video_encode": s.video_encode, "caption_decode": s.caption_decode,
                "indexing": s.indexing, "script_generation": s.script_generation,
                "retrieval_e2e": e2e["retrieval"], "assembly_e2e": e2e["assembly"],
            })
    return rows


def reductions(profile: DeviceProfile, config: SimConfig = SimConfig()) -> list:
    out = [reported_reduction(profile, "loading")]
    for t in ("retrieval", "assembly"):
        if t in profile.reported_e2e_s:
            out.append(reported_reduction(profile, t))
        out.append(compare_modes(profile, t, config))
    return out
