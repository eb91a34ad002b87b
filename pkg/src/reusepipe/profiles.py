"""Device profiles: measured component latencies, reported end-to-end times,
memory components and power draw for one platform."""
from __future__ import annotations

import json
import math
import numbers
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .costmodel import MemoryComponents, PowerProfile


class InvalidProfile(ValueError):
    """Raised with the dotted name of the offending field."""

    def __init__(self, field_name: str, problem: str):
        super().__init__(f"{field_name}: {problem}")
        self.field = field_name


class ProfileParseError(InvalidProfile):
    """Field missing, wrong type, or the file is not valid JSON."""


class MissingReportedData(KeyError):
    pass


@dataclass(frozen=True)
class LoadLatency:
    baseline_total: float
    reuse_total: float
    # no-reuse load points, each billed weight x baseline_total
    baseline_point_weights: tuple = (1.0, 1.0)


@dataclass(frozen=True)
class StageLatency:
    video_encode: float
    caption_decode: float
    indexing: float
    script_generation: float


@dataclass(frozen=True)
class ReportedE2E:
    baseline: float
    reuse: float


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    load_s: LoadLatency
    stage_s: StageLatency
    reported_e2e_s: dict = field(default_factory=dict)  # task name -> ReportedE2E
    memory: Optional[dict] = None  # {"baseline": MemoryComponents, "reuse": MemoryComponents}
    power_w: Optional[PowerProfile] = None
    module_weights_mb: dict = field(default_factory=dict)
    notes: str = ""

    def __post_init__(self):
        validate_profile(self)


def _num(v, name) -> float:
    if isinstance(v, bool) or not isinstance(v, numbers.Real):
        raise ProfileParseError(name, f"expected a number, got {v!r}")
    if math.isnan(v) or v < 0:
        raise InvalidProfile(name, f"must be a nonnegative number, got {v!r}")
    return float(v)


def validate_profile(p: DeviceProfile) -> None:
    if not p.name:
        raise InvalidProfile("name", "empty")
    for k in ("baseline_total", "reuse_total"):
        _num(getattr(p.load_s, k), f"load_s.{k}")
    if p.load_s.reuse_total > p.load_s.baseline_total:
        raise InvalidProfile("load_s.reuse_total", "exceeds baseline_total")
    if not p.load_s.baseline_point_weights:
        raise InvalidProfile("load_s.baseline_point_weights", "empty")
    for i, w in enumerate(p.load_s.baseline_point_weights):
        _num(w, f"load_s.baseline_point_weights[{i}]")
    for k in ("video_encode", "caption_decode", "indexing", "script_generation"):
        _num(getattr(p.stage_s, k), f"stage_s.{k}")
    for task, r in p.reported_e2e_s.items():
        _num(r.baseline, f"reported_e2e_s.{task}.baseline")
        _num(r.reuse, f"reported_e2e_s.{task}.reuse")
    for k, v in p.module_weights_mb.items():
        _num(v, f"module_weights_mb.{k}")


def profile_from_dict(d: dict) -> DeviceProfile:
    def need(obj, key, prefix):
        if not isinstance(obj, dict) or key not in obj:
            raise ProfileParseError(f"{prefix}{key}", "missing")
        return obj[key]

    load = need(d, "load_s", "")
    lw = load.get("baseline_point_weights", [1.0, 1.0])
    if not isinstance(lw, list):
        raise ProfileParseError("load_s.baseline_point_weights", "expected a list")
    load_s = LoadLatency(
        _num(need(load, "baseline_total", "load_s."), "load_s.baseline_total"),
        _num(need(load, "reuse_total", "load_s."), "load_s.reuse_total"),
        tuple(_num(w, f"load_s.baseline_point_weights[{i}]") for i, w in enumerate(lw)),
    )
    stage = need(d, "stage_s", "")
    stage_s = StageLatency(*(
        _num(need(stage, k, "stage_s."), f"stage_s.{k}")
        for k in ("video_encode", "caption_decode", "indexing", "script_generation")
    ))
    reported = {}
    for task, r in (d.get("reported_e2e_s") or {}).items():
        reported[task] = ReportedE2E(
            _num(need(r, "baseline", f"reported_e2e_s.{task}."), f"reported_e2e_s.{task}.baseline"),
            _num(need(r, "reuse", f"reported_e2e_s.{task}."), f"reported_e2e_s.{task}.reuse"),
        )
    memory = None
    if d.get("memory"):
        memory = {}
        for which in ("baseline", "reuse"):
            m = need(d["memory"], which, "memory.")
            memory[which] = MemoryComponents(**{
                k: _num(need(m, k, f"memory.{which}."), f"memory.{which}.{k}")
                for k in ("weights_gb", "inputs_gb", "activations_gb", "misc_load_gb")
            })
    power = None
    if d.get("power_w"):
        pw = d["power_w"]
        power = PowerProfile(_num(need(pw, "cpu", "power_w."), "power_w.cpu"),
                             _num(need(pw, "dram", "power_w."), "power_w.dram"))
    weights = {k: _num(v, f"module_weights_mb.{k}") for k, v in (d.get("module_weights_mb") or {}).items()}
    name = d.get("name")
    if not isinstance(name, str) or not name:
        raise ProfileParseError("name", "missing or not a string")
    return DeviceProfile(name, load_s, stage_s, reported, memory, power, weights, d.get("notes", ""))


def profile_to_dict(p: DeviceProfile) -> dict:
    d = {
        "name": p.name,
        "load_s": {"baseline_total": p.load_s.baseline_total, "reuse_total": p.load_s.reuse_total,
                   "baseline_point_weights": list(p.load_s.baseline_point_weights)},
        "stage_s": {"video_encode": p.stage_s.video_encode, "caption_decode": p.stage_s.caption_decode,
                    "indexing": p.stage_s.indexing, "script_generation": p.stage_s.script_generation},
        "reported_e2e_s": {t: {"baseline": r.baseline, "reuse": r.reuse} for t, r in p.reported_e2e_s.items()},
    }
    if p.memory:
        d["memory"] = {k: v.as_dict() for k, v in p.memory.items()}
    if p.power_w:
        d["power_w"] = {"cpu": p.power_w.cpu_w, "dram": p.power_w.dram_w}
    if p.module_weights_mb:
        d["module_weights_mb"] = dict(p.module_weights_mb)
    if p.notes:
        d["notes"] = p.notes
    return d


def load_profile(path) -> DeviceProfile:
    path = Path(path)
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ProfileParseError("<file>", f"not valid JSON ({e})") from None
    if not isinstance(d, dict):
        raise ProfileParseError("<file>", "top level must be an object")
    return profile_from_dict(d)


def save_profile(p: DeviceProfile, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(profile_to_dict(p), indent=2) + "\n", encoding="utf-8")
    return path


def bundled_profile_names() -> list:
    root = resources.files("reusepipe") / "data" / "profiles"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def bundled_profile(name: str) -> DeviceProfile:
    root = resources.files("reusepipe") / "data" / "profiles"
    f = root / f"{name}.json"
    if not f.is_file():
        raise FileNotFoundError(f"no bundled profile {name!r}; have {bundled_profile_names()}")
    return profile_from_dict(json.loads(f.read_text(encoding="utf-8")))


def resolve_profile(ref) -> DeviceProfile:
    """A path to a profile file, or the name of a bundled one."""
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        return load_profile(p)
    return bundled_profile(str(ref))
