"""Memory, storage, quantized-size and energy accounting."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional, Sequence

BYTES_PER_MIB = 1024 * 1024
MB_PER_GB = 1000.0

# printed in the source energy calculation; kept to surface the mismatch with the recomputation
PRINTED_NEW_ENERGY_J = 11.9
PRINTED_SAVINGS_PCT = 46.0


class CostModelError(ValueError):
    pass


class ZeroBaseline(CostModelError):
    pass


class EmptyTable(CostModelError):
    pass


class MissingParamCounts(CostModelError):
    pass


class InvalidFraction(CostModelError):
    pass


def _nonneg(obj, names):
    for n in names:
        val = getattr(obj, n)
        if val is None or val < 0 or math.isnan(val):
            raise CostModelError(f"{type(obj).__name__}.{n} must be a nonnegative number, got {val!r}")


@dataclass(frozen=True)
class MemoryComponents:
    weights_gb: float = 0.0
    inputs_gb: float = 0.0
    activations_gb: float = 0.0  # largest concurrent activation set for the mode
    misc_load_gb: float = 0.0  # largest live load-time temporaries for the mode

    def __post_init__(self):
        _nonneg(self, ("weights_gb", "inputs_gb", "activations_gb", "misc_load_gb"))

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LayerRow:
    layer_kind: str
    param_count: Optional[int] = None
    bytes_per_param: float = 4.0
    size_mb: Optional[float] = None

    def __post_init__(self):
        if self.bytes_per_param <= 0:
            raise CostModelError(f"{self.layer_kind}: bytes_per_param must be > 0")
        if self.param_count is not None and self.param_count < 0:
            raise CostModelError(f"{self.layer_kind}: negative param_count")
        if self.size_mb is not None and self.size_mb < 0:
            raise CostModelError(f"{self.layer_kind}: negative size_mb")

    @property
    def effective_size_mb(self) -> float:
        # printed size wins over params x width when both are given
        if self.size_mb is not None:
            return self.size_mb
        if self.param_count is None:
            raise CostModelError(f"{self.layer_kind}: neither size_mb nor param_count")
        return self.param_count * self.bytes_per_param / BYTES_PER_MIB


@dataclass(frozen=True)
class QuantPolicy:
    quantized_kinds: frozenset = frozenset({"Linear", "Embedding"})
    quantized_bytes_per_param: float = 1.0
    default_bytes_per_param: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "quantized_kinds", frozenset(self.quantized_kinds))
        if not 0 < self.quantized_bytes_per_param <= self.default_bytes_per_param:
            raise CostModelError("need 0 < quantized_bytes_per_param <= default_bytes_per_param")


@dataclass(frozen=True)
class PowerProfile:
    cpu_w: float = 2.0
    dram_w: float = 0.2

    def __post_init__(self):
        _nonneg(self, ("cpu_w", "dram_w"))


def peak_memory(components: MemoryComponents, mode=None) -> float:
    """Peak RAM for one run, in GB.

    ``components`` already carries the mode-specific maxima (activations and
    load temporaries differ between modes); ``mode`` is accepted for symmetry
    with the rest of the API and does not change the sum.
    """
    return math.fsum((components.weights_gb, components.inputs_gb,
                      components.activations_gb, components.misc_load_gb))


def memory_delta_pct(baseline_gb: float, reuse_gb: float) -> float:
    if baseline_gb <= 0:
        raise ZeroBaseline(f"baseline must be > 0, got {baseline_gb}")
    return 100.0 * (reuse_gb - baseline_gb) / baseline_gb


def layer_percentages(rows: Sequence[LayerRow]) -> list:
    if not rows:
        raise EmptyTable("no layer rows")
    sizes = [r.effective_size_mb for r in rows]
    total = math.fsum(sizes)
    if total <= 0:
        raise EmptyTable("total layer size is zero")
    return [(r.layer_kind, 100.0 * s / total) for r, s in zip(rows, sizes)]


@dataclass(frozen=True)
class QuantizedSize:
    original_mb: float
    quantized_mb: float
    covered_fraction: float  # share of printed size held by the quantized kinds


def quantized_total_mb(rows: Sequence[LayerRow], policy: QuantPolicy = QuantPolicy()) -> QuantizedSize:
    """Projected size after quantizing ``policy.quantized_kinds``.

    Sizes come from param_count x bytes in MiB; the covered fraction uses the
    printed sizes, since those are what the percentages are quoted against.
    """
    if not rows:
        raise EmptyTable("no layer rows")
    missing = [r.layer_kind for r in rows if r.param_count is None]
    if missing:
        raise MissingParamCounts(f"rows without param_count: {missing}")
    orig = math.fsum(r.param_count * r.bytes_per_param for r in rows) / BYTES_PER_MIB
    quant = math.fsum(
        r.param_count * (policy.quantized_bytes_per_param if r.layer_kind in policy.quantized_kinds
                         else r.bytes_per_param)
        for r in rows
    ) / BYTES_PER_MIB
    sizes = [r.effective_size_mb for r in rows]
    total = math.fsum(sizes)
    covered = math.fsum(s for r, s in zip(rows, sizes) if r.layer_kind in policy.quantized_kinds)
    return QuantizedSize(orig, quant, covered / total if total > 0 else 0.0)


def storage_total_mb(artifacts: Iterable) -> float:
    return math.fsum(mb for _, mb in artifacts)


def format_gb(mb: float, decimals: int = 2) -> str:
    return f"{mb / MB_PER_GB:.{decimals}f} GB"


@dataclass(frozen=True)
class EnergyEstimate:
    orig_j: float
    new_j: float
    savings_pct: float
    cpu_w_new: float
    dram_w_new: float
    t_new_s: float
    printed_new_j: float = PRINTED_NEW_ENERGY_J
    printed_savings_pct: float = PRINTED_SAVINGS_PCT


def energy_estimate(
    power: PowerProfile,
    t_orig_s: float,
    latency_reduction_frac: float,
    mem_reduction_frac: float,
    t_new_s: Optional[float] = None,
    power_decimals: Optional[int] = None,
) -> EnergyEstimate:
    """Energy before and after, CPU power scaled by latency and DRAM by memory.

    ``t_new_s`` is the post-reduction runtime; it defaults to
    ``t_orig_s * (1 - latency_reduction_frac)`` but callers quoting a
    midpoint of a latency range pass it explicitly. ``power_decimals`` rounds
    the adjusted powers before multiplying, as a hand calculation would.
    """
    for name, f in (("latency_reduction_frac", latency_reduction_frac), ("mem_reduction_frac", mem_reduction_frac)):
        if not 0 <= f < 1:
            raise InvalidFraction(f"{name} must be in [0, 1), got {f}")
    if t_orig_s <= 0:
        raise InvalidFraction(f"t_orig_s must be > 0, got {t_orig_s}")
    if t_new_s is None:
        t_new_s = t_orig_s * (1 - latency_reduction_frac)
    if t_new_s < 0:
        raise InvalidFraction(f"t_new_s must be >= 0, got {t_new_s}")
    cpu = power.cpu_w * (1 - latency_reduction_frac)
    dram = power.dram_w * (1 - mem_reduction_frac)
    if power_decimals is not None:
        cpu, dram = round(cpu, power_decimals), round(dram, power_decimals)
    orig = (power.cpu_w + power.dram_w) * t_orig_s
    new = (cpu + dram) * t_new_s
    savings = 100.0 * (orig - new) / orig if orig > 0 else 0.0
    return EnergyEstimate(orig, new, savings, cpu, dram, t_new_s)


# -- inputs and reports --

def read_layer_table(text: str) -> list:
    """Parse ``layer_kind,param_count,size_mb`` CSV (header required)."""
    reader = csv.DictReader(io.StringIO(text))
    need = {"layer_kind", "param_count", "size_mb"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise CostModelError(f"layer table needs columns {sorted(need)}, got {reader.fieldnames}")
    rows = []
    for i, rec in enumerate(reader, start=2):
        try:
            pc = rec["param_count"].strip()
            sz = rec["size_mb"].strip()
            bpp = (rec.get("bytes_per_param") or "").strip()
            rows.append(LayerRow(
                rec["layer_kind"].strip(),
                int(float(pc)) if pc else None,
                float(bpp) if bpp else 4.0,
                float(sz) if sz else None,
            ))
        except ValueError as e:
            raise CostModelError(f"line {i}: {e}") from None
    return rows


def read_storage_table(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or not {"name", "size_mb"} <= set(reader.fieldnames):
        raise CostModelError(f"storage table needs columns name,size_mb, got {reader.fieldnames}")
    out = []
    for i, rec in enumerate(reader, start=2):
        try:
            out.append((rec["name"].strip(), float(rec["size_mb"])))
        except (ValueError, TypeError) as e:
            raise CostModelError(f"line {i}: {e}") from None
    return out


def memory_report(baseline: MemoryComponents, reuse: MemoryComponents) -> dict:
    pb, pr = peak_memory(baseline), peak_memory(reuse)
    return {
        "kind": "memory",
        "rows": [
            {"component": "weights_gb", "baseline": baseline.weights_gb, "reuse": reuse.weights_gb},
            {"component": "inputs_gb", "baseline": baseline.inputs_gb, "reuse": reuse.inputs_gb},
            {"component": "activations_gb", "baseline": baseline.activations_gb, "reuse": reuse.activations_gb},
            {"component": "misc_load_gb", "baseline": baseline.misc_load_gb, "reuse": reuse.misc_load_gb},
            {"component": "peak_gb", "baseline": round(pb, 6), "reuse": round(pr, 6)},
        ],
        "delta_pct": round(memory_delta_pct(pb, pr), 4),
        "misc_delta_pct": round(memory_delta_pct(baseline.misc_load_gb, reuse.misc_load_gb), 4)
        if baseline.misc_load_gb > 0 else None,
    }


def format_memory_table(rep: dict) -> str:
    lines = [f"{'component':<16}{'baseline':>10}{'reuse':>10}"]
    for r in rep["rows"]:
        lines.append(f"{r['component']:<16}{r['baseline']:>10.3f}{r['reuse']:>10.3f}")
    lines.append(f"peak delta: {rep['delta_pct']:+.2f}%")
    if rep.get("misc_delta_pct") is not None:
        lines.append(f"load temporaries delta: {rep['misc_delta_pct']:+.2f}%")
    return "\n".join(lines)


def layers_report(rows: Sequence[LayerRow], policy: QuantPolicy = QuantPolicy()) -> dict:
    pcts = layer_percentages(rows)
    rep = {
        "kind": "layers",
        "rows": [
            {"layer_kind": r.layer_kind, "param_count": r.param_count, "size_mb": r.effective_size_mb,
             "pct": round(p, 4)}
            for r, (_, p) in zip(rows, pcts)
        ],
        "total_mb": math.fsum(r.effective_size_mb for r in rows),
        "quantized_kinds": sorted(policy.quantized_kinds),
    }
    if all(r.param_count is not None for r in rows):
        q = quantized_total_mb(rows, policy)
        rep.update(covered_pct=round(100 * q.covered_fraction, 4),
                   projected_original_mb=round(q.original_mb, 3),
                   projected_quantized_mb=round(q.quantized_mb, 3))
    else:
        sizes = {r.layer_kind: r.effective_size_mb for r in rows}
        rep["covered_pct"] = round(100 * sum(s for k, s in sizes.items() if k in policy.quantized_kinds)
                                   / rep["total_mb"], 4)
    return rep


def format_layers_table(rep: dict) -> str:
    lines = [f"{'layer':<32}{'params':>14}{'size_mb':>10}{'% total':>10}"]
    for r in rep["rows"]:
        pc = "" if r["param_count"] is None else f"{r['param_count']:,}"
        lines.append(f"{r['layer_kind']:<32}{pc:>14}{r['size_mb']:>10.0f}{r['pct']:>9.2f}%")
    lines.append(f"quantized kinds {', '.join(rep['quantized_kinds'])}: {rep['covered_pct']:.2f}% of size")
    return "\n".join(lines)


def storage_report(artifacts: Sequence) -> dict:
    total = storage_total_mb(artifacts)
    return {
        "kind": "storage",
        "rows": [{"name": n, "size_mb": mb} for n, mb in artifacts],
        "total_mb": total,
        "total_gb_str": format_gb(total),
    }


def format_storage_table(rep: dict) -> str:
    lines = [f"{'artifact':<28}{'size_mb':>10}"]
    lines += [f"{r['name']:<28}{r['size_mb']:>10.0f}" for r in rep["rows"]]
    lines.append(f"{'total':<28}{rep['total_mb']:>10.0f}  ({rep['total_gb_str']})")
    return "\n".join(lines)


def energy_report(est: EnergyEstimate, rounded: Optional[EnergyEstimate] = None) -> dict:
    rep = {
        "kind": "energy",
        "orig_j": round(est.orig_j, 6),
        "new_j": round(est.new_j, 6),
        "savings_pct": round(est.savings_pct, 4),
        "cpu_w_new": round(est.cpu_w_new, 6),
        "dram_w_new": round(est.dram_w_new, 6),
        "t_new_s": est.t_new_s,
        "printed_new_j": est.printed_new_j,
        "printed_savings_pct": est.printed_savings_pct,
    }
    if rounded is not None:
        rep["new_j_rounded_powers"] = round(rounded.new_j, 6)
        rep["savings_pct_rounded_powers"] = round(rounded.savings_pct, 4)
    return rep


def format_energy_table(rep: dict) -> str:
    lines = [
        f"original energy        {rep['orig_j']:8.2f} J",
        f"adjusted power         cpu {rep['cpu_w_new']:.4f} W, dram {rep['dram_w_new']:.4f} W",
        f"new energy (strict)    {rep['new_j']:8.2f} J   savings {rep['savings_pct']:.2f}%",
    ]
    if "new_j_rounded_powers" in rep:
        lines.append(f"new energy (2dp power) {rep['new_j_rounded_powers']:8.2f} J   "
                     f"savings {rep['savings_pct_rounded_powers']:.2f}%")
    lines.append(f"new energy (printed)   {rep['printed_new_j']:8.2f} J   savings ~{rep['printed_savings_pct']:.0f}%"
                 "   <- does not follow from the inputs above")
    return "\n".join(lines)
