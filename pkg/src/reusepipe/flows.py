"""Task pipelines wired onto the scheduler: sleep-based benches and a
stub-model assembly over a segmented video."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from .clock import MonotonicClock
from .pipeline import ExecutionTrace, PipelineSpec, StageKind, StageSpec, Task, WorkItem, execute, verify_trace
from .registry import ExecutionMode, ModuleDescriptor, ModuleRegistry, Role
from .simulator import DECODER, EMBEDDER, ENCODER, task_spec
from .tasks import (
    DEFAULT_EMBEDDER,
    AssemblyManifest,
    CatalogueEntry,
    PreprocessSpec,
    ScriptOrder,
    SegmentationParams,
    assemble,
    caption_clip,
    segment,
    stub_captioner,
)


def default_registry(load_s: float = 0.0) -> ModuleRegistry:
    reg = ModuleRegistry()
    reg.register_module(ModuleDescriptor(ENCODER, Role.VIDEO_ENCODER, load_latency_s=load_s))
    reg.register_module(ModuleDescriptor(DECODER, Role.TEXT_DECODER, load_latency_s=load_s))
    reg.register_module(ModuleDescriptor(EMBEDDER, Role.EMBEDDER, load_latency_s=load_s))
    return reg


def _sleeper(seconds: float):
    def run(payload):
        time.sleep(seconds)
        return payload
    return run


def bench_spec() -> PipelineSpec:
    return PipelineSpec((
        StageSpec("video_encode", ENCODER, StageKind.PER_ITEM, 0),
        StageSpec("caption_decode", DECODER, StageKind.PER_ITEM, 1),
    ), Task.RETRIEVAL)


@dataclass
class BenchRun:
    mode: ExecutionMode
    makespan_s: float
    violations: list
    trace: ExecutionTrace


def bench_once(encode_s: float, decode_s: float, n: int, mode, aggregate_s: float = 0.0,
               load_s: float = 0.0) -> BenchRun:
    """Wall-clock run of the real scheduler with sleeping executors."""
    if encode_s <= 0 or decode_s <= 0:
        raise ValueError("stage durations must be > 0")
    mode = ExecutionMode.parse(mode)
    if aggregate_s > 0:
        spec = task_spec(Task.RETRIEVAL)
        spec = PipelineSpec(spec.stages, spec.task)  # default groups: charge = descriptor latencies
    else:
        spec = bench_spec()
    executors = {"video_encode": _sleeper(encode_s), "caption_decode": _sleeper(decode_s),
                 "indexing": _sleeper(aggregate_s)}
    items = [WorkItem(f"item{i:03d}", i) for i in range(n)]
    trace = execute(spec, items, mode, executors, default_registry(load_s), MonotonicClock())
    return BenchRun(mode, trace.makespan_s, verify_trace(trace, spec, mode), trace)


def pipeline_assemble(duration_s: float, prompt: str, k: int = 5, mode="reuse",
                      captioner=stub_captioner, embedder=DEFAULT_EMBEDDER,
                      policy=ScriptOrder.SIMILARITY, seg: SegmentationParams = SegmentationParams(),
                      pre: PreprocessSpec = PreprocessSpec(), source_id: str = "video",
                      registry: Optional[ModuleRegistry] = None, clock=None) -> tuple:
    """Segment, caption every window through the scheduler, then script the top ``k``.

    The encode stage only tags the window with its input shape (no frames
    are decoded); captioning goes through ``captioner``. Returns
    (manifest, trace).
    """
    windows = segment(duration_s, seg, source_id)
    spec = task_spec(Task.ASSEMBLY)
    spec = PipelineSpec(spec.stages, spec.task)

    def encode(clip):
        return clip, pre.input_shape()

    def decode(encoded):
        clip, _ = encoded
        return CatalogueEntry(clip, caption_clip(clip, captioner, pre))

    def script(entries):
        return assemble(entries, prompt, k, policy, embedder)

    executors = {"video_encode": encode, "caption_decode": decode, "script_generation": script}
    items = [WorkItem(w.clip_id, w) for w in windows]
    trace = execute(spec, items, mode, executors, registry or default_registry(), clock or MonotonicClock())
    if trace.failed:
        raise trace.failure
    manifest: AssemblyManifest = trace.result
    return manifest, trace
