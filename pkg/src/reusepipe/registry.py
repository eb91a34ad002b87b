"""Module residency tracking: load-once under reuse, reload-per-stage without it."""
from __future__ import annotations

import enum
import math
import threading
from dataclasses import dataclass, field
from typing import Optional, Union

from .clock import Clock

MB_PER_GB = 1000.0


class ExecutionMode(str, enum.Enum):
    SEQUENTIAL_NO_REUSE = "sequential"
    REUSE_PARALLEL = "reuse"

    @classmethod
    def parse(cls, value: Union[str, "ExecutionMode"]) -> "ExecutionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown execution mode {value!r} (expected 'sequential' or 'reuse')") from None


class Role(str, enum.Enum):
    VIDEO_ENCODER = "VideoEncoder"
    TEXT_DECODER = "TextDecoder"
    EMBEDDER = "Embedder"
    AGGREGATE = "Aggregate"


class State(str, enum.Enum):
    UNLOADED = "Unloaded"
    LOADING = "Loading"
    RESIDENT = "Resident"


class RegistryError(Exception):
    pass


class DuplicateId(RegistryError):
    pass


class UnknownId(RegistryError, KeyError):
    pass


class NotResident(RegistryError):
    pass


@dataclass(frozen=True)
class ModuleDescriptor:
    id: str
    role: Role
    weight_size_mb: float = 0.0
    load_latency_s: float = 0.0
    activation_peak_gb: float = 0.0
    load_temp_gb: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        for name in ("weight_size_mb", "load_latency_s", "activation_peak_gb", "load_temp_gb"):
            if getattr(self, name) < 0:
                raise ValueError(f"{self.id}: {name} must be >= 0, got {getattr(self, name)}")


@dataclass
class ResidencyState:
    state: State = State.UNLOADED
    load_count: int = 0
    last_load_start_s: Optional[float] = None
    last_load_end_s: Optional[float] = None


@dataclass(frozen=True)
class AlreadyResident:
    duration_s: float = 0.0


@dataclass(frozen=True)
class LoadedNow:
    duration_s: float
    t_start_s: float
    t_end_s: float


AcquireOutcome = Union[AlreadyResident, LoadedNow]


@dataclass
class ModuleRegistry:
    """Registered modules and their residency.

    ``acquire``/``release`` are serialized by one lock; reads are lock-free
    snapshots and may race with execution.
    """

    _descriptors: dict = field(default_factory=dict)
    _states: dict = field(default_factory=dict)
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)
    peak_load_temp_gb: float = 0.0

    def register_module(self, desc: ModuleDescriptor) -> str:
        with self._lock:
            if desc.id in self._descriptors:
                raise DuplicateId(desc.id)
            self._descriptors[desc.id] = desc
            self._states[desc.id] = ResidencyState()
        return desc.id

    def __contains__(self, module_id) -> bool:
        return module_id in self._descriptors

    def ids(self) -> list:
        return list(self._descriptors)

    def descriptor(self, module_id: str) -> ModuleDescriptor:
        try:
            return self._descriptors[module_id]
        except KeyError:
            raise UnknownId(module_id) from None

    def state(self, module_id: str) -> ResidencyState:
        self.descriptor(module_id)
        s = self._states[module_id]
        return ResidencyState(s.state, s.load_count, s.last_load_start_s, s.last_load_end_s)

    def acquire(self, module_id: str, mode, clock: Clock, duration_s: Optional[float] = None) -> AcquireOutcome:
        """Make ``module_id`` resident, charging its load latency to ``clock``.

        A resident module costs nothing in either mode. What differs between
        modes is ``release``: only the no-reuse baseline ever unloads, so only
        it pays for a second load. ``duration_s`` overrides the descriptor's
        latency (used when one load point covers several modules).
        """
        ExecutionMode.parse(mode)
        desc = self.descriptor(module_id)
        with self._lock:
            st = self._states[module_id]
            if st.state is State.RESIDENT:
                return AlreadyResident()
            dur = desc.load_latency_s if duration_s is None else duration_s
            if dur < 0:
                raise ValueError(f"negative load duration for {module_id}: {dur}")
            st.state = State.LOADING
            self.peak_load_temp_gb = max(self.peak_load_temp_gb, self.live_load_temp_gb())
            t0 = clock.now()
            clock.sleep(dur)
            t1 = clock.now()
            st.state = State.RESIDENT
            st.load_count += 1
            st.last_load_start_s, st.last_load_end_s = t0, t1
            return LoadedNow(dur, t0, t1)

    def release(self, module_id: str, mode) -> None:
        mode = ExecutionMode.parse(mode)
        self.descriptor(module_id)
        with self._lock:
            st = self._states[module_id]
            if st.state is not State.RESIDENT:
                raise NotResident(module_id)
            if mode is ExecutionMode.SEQUENTIAL_NO_REUSE:
                st.state = State.UNLOADED

    def resident_weights_gb(self) -> float:
        # fsum: order-independent total
        return math.fsum(
            self._descriptors[i].weight_size_mb
            for i, s in self._states.items()
            if s.state is State.RESIDENT
        ) / MB_PER_GB

    def live_load_temp_gb(self) -> float:
        return sum(
            self._descriptors[i].load_temp_gb
            for i, s in self._states.items()
            if s.state is State.LOADING
        )

    def load_counts(self) -> dict:
        return {i: s.load_count for i, s in self._states.items()}

    def reset(self) -> None:
        """Unload everything and zero the counters (fresh application start)."""
        with self._lock:
            for i in self._states:
                self._states[i] = ResidencyState()
            self.peak_load_temp_gb = 0.0


def resident_weights_gb(registry: ModuleRegistry) -> float:
    return registry.resident_weights_gb()
