"""Reuse-centric multi-stage inference pipelines: residency, pipelined
scheduling, task logic, and latency/memory/energy cost models."""

from .clock import MonotonicClock, VirtualClock
from .pipeline import (
    ExecutionTrace,
    PipelineSpec,
    StageKind,
    StageSpec,
    Task,
    TraceEvent,
    WorkItem,
    execute,
    makespan,
    validate_spec,
    verify_trace,
)
from .registry import ExecutionMode, ModuleDescriptor, ModuleRegistry, Role

__version__ = "0.1.0"
