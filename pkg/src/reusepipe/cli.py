"""Command-line entry point.

Exit codes: 0 success, 1 usage or parse error, 2 validation failure,
3 execution failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from importlib import resources
from pathlib import Path

from . import costmodel as cm
from .flows import bench_once
from .pipeline import write_trace
from .profiles import InvalidProfile, ProfileParseError, resolve_profile
from .registry import ExecutionMode
from .simulator import (
    AggregateScaling,
    SimConfig,
    calibrate_overhead,
    reductions,
    simulate,
    table3_rows,
)
from .tasks import (
    ScriptOrder,
    SegmentationParams,
    TaskError,
    assemble,
    read_catalogue,
    read_ground_truth,
    recall_at_k,
    retrieve,
    segment,
    write_manifest,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_EXEC = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _data_text(name: str) -> str:
    return (resources.files("reusepipe") / "data" / name).read_text(encoding="utf-8")


def _read_text(path, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CliError(f"cannot read {what} {path}: {e.strerror}", EXIT_USAGE) from None


def dump_json(obj) -> str:
    """Canonical machine-readable form; parse + re-dump is the identity."""
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def flat_csv(rows: list) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if v is None else v) for k, v in r.items()})
    return buf.getvalue()


def _load_profile(ref):
    try:
        return resolve_profile(ref)
    except ProfileParseError as e:
        raise CliError(f"profile {ref}: {e}", EXIT_USAGE) from None
    except InvalidProfile as e:
        raise CliError(f"profile {ref}: {e}", EXIT_INVALID) from None
    except (FileNotFoundError, OSError) as e:
        raise CliError(str(e), EXIT_USAGE) from None


def _modes(arg):
    if arg is None:
        return [ExecutionMode.SEQUENTIAL_NO_REUSE, ExecutionMode.REUSE_PARALLEL]
    return [ExecutionMode.parse(arg)]


def _fmt(v, width=9):
    return f"{'-':>{width}}" if v is None else f"{v:>{width}.2f}"


def format_table3(rows: list, reds: list) -> str:
    head = (f"{'source':<10}{'mode':<11}{'load':>9}{'encode':>9}{'caption':>9}{'index':>9}"
            f"{'script':>9}{'retr e2e':>10}{'asm e2e':>10}")
    out = [f"device: {rows[0]['device']}", head]
    for r in rows:
        out.append(f"{r['source']:<10}{r['mode']:<11}{_fmt(r['model_loading'])}{_fmt(r['video_encode'])}"
                   f"{_fmt(r['caption_decode'])}{_fmt(r['indexing'])}{_fmt(r['script_generation'])}"
                   f"{_fmt(r['retrieval_e2e'], 10)}{_fmt(r['assembly_e2e'], 10)}")
    out.append("")
    out.append(f"{'column':<12}{'Reported':>12}{'Simulated':>12}")
    by = {}
    for c in reds:
        by.setdefault(c.task, {})[c.source.value] = c.reduction_pct
    for task, d in by.items():
        rep = f"{d['Reported']:.2f}%" if "Reported" in d else "-"
        sim = f"{d['Simulated']:.2f}%" if "Simulated" in d else "-"
        out.append(f"{task:<12}{rep:>12}{sim:>12}")
    return "\n".join(out)


def cmd_simulate(args) -> int:
    profile = _load_profile(args.profile)
    try:
        cfg = SimConfig(args.n, args.overhead, AggregateScaling(args.aggregate_scaling))
    except ValueError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    tasks = ["retrieval", "assembly"] if args.task is None else [args.task]
    out = Path(args.out) if args.out else None
    traces = {}
    for t in tasks:
        for m in _modes(args.mode):
            traces[(t, m)] = simulate(profile, t, cfg, m)
    rows = table3_rows(profile, cfg)
    reds = [r for r in reductions(profile, cfg) if r.task in tasks + ["loading"]]
    report = {
        "device": profile.name,
        "config": {"n_items": cfg.n_items, "per_item_overhead_s": cfg.per_item_overhead_s,
                   "aggregate_scaling": cfg.aggregate_scaling.value},
        "rows": rows,
        "reductions": [{"column": r.task, "baseline_s": r.baseline_s, "reuse_s": r.reuse_s,
                        "reduction_pct": round(r.reduction_pct, 4), "source": r.source.value} for r in reds],
        "simulated_makespan_s": {f"{t}/{m.value}": float(tr.makespan_s) for (t, m), tr in traces.items()},
    }
    if args.calibrate:
        cal = {}
        for t in tasks:
            c = calibrate_overhead(profile, t, cfg)
            cal[t] = {"per_item_overhead_s": c.per_item_overhead_s, "simulated_reuse_s": c.simulated_reuse_s,
                      "reported_reuse_s": c.reported_reuse_s, "residual_s": c.residual_s}
        report["calibration"] = cal
    print(format_table3(rows, reds))
    for t, c in report.get("calibration", {}).items():
        print(f"calibrated per-item overhead ({t}): {c['per_item_overhead_s']:.4f} s, "
              f"residual {c['residual_s']:+.2e} s")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        for (t, m), tr in traces.items():
            write_trace(tr, out / f"trace_{profile.name}_{t}_{m.value}.jsonl")
        (out / f"report_{profile.name}.json").write_text(dump_json(report), encoding="utf-8")
        (out / f"table3_{profile.name}.csv").write_text(flat_csv(rows), encoding="utf-8")
        print(f"wrote traces and report to {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    e, d = args.encode_ms / 1000.0, args.decode_ms / 1000.0
    if e <= 0 or d <= 0 or args.n < 1:
        raise CliError("stage durations must be > 0 and --n >= 1", EXIT_INVALID)
    runs = []
    for rep in range(args.repeats):
        for m in _modes(args.mode):
            r = bench_once(e, d, args.n, m, aggregate_s=args.aggregate_ms / 1000.0)
            runs.append(r)
            status = "ok" if not r.violations and not r.trace.failed else "FAILED"
            print(f"run {rep} {m.value:<10} makespan {r.makespan_s:.4f} s  verify {status}")
            for v in r.violations:
                print(f"  violation: {v}")
            if args.out:
                write_trace(r.trace, Path(args.out) / f"bench_{rep}_{m.value}.jsonl")
    by_mode = {}
    for r in runs:
        by_mode.setdefault(r.mode, []).append(r.makespan_s)
    summary = {"encode_s": e, "decode_s": d, "n": args.n,
               "makespan_s": {m.value: v for m, v in by_mode.items()}}
    if len(by_mode) == 2:
        ratios = [p / s for p, s in zip(by_mode[ExecutionMode.REUSE_PARALLEL],
                                        by_mode[ExecutionMode.SEQUENTIAL_NO_REUSE])]
        summary["ratio_reuse_over_sequential"] = ratios
        ideal = (e + (args.n - 1) * max(e, d) + d) / (args.n * (e + d))
        print(f"reuse/sequential ratio: {', '.join(f'{x:.3f}' for x in ratios)} (ideal {ideal:.3f})")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bench_summary.json").write_text(dump_json(summary), encoding="utf-8")
    if any(r.violations or r.trace.failed for r in runs):
        return EXIT_EXEC
    return EXIT_OK


def _catalogue(path):
    try:
        entries = read_catalogue(path)
    except OSError as e:
        raise CliError(f"cannot read catalogue {path}: {e.strerror}", EXIT_USAGE) from None
    except TaskError as e:
        raise CliError(f"catalogue {path}: {e}", EXIT_USAGE) from None
    if not entries:
        raise CliError(f"catalogue {path} is empty", EXIT_INVALID)
    return entries


def cmd_assemble(args) -> int:
    entries = _catalogue(args.catalogue)
    if args.k < 1:
        raise CliError("--k must be >= 1", EXIT_INVALID)
    if args.k > len(entries):
        print(f"warning: k={args.k} exceeds catalogue size {len(entries)}; using all clips", file=sys.stderr)
    try:
        m = assemble(entries, args.prompt, args.k, ScriptOrder(args.order))
    except TaskError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    for c, line in zip(m.ordered_clips, m.script_lines):
        print(f"{c.clip_id:<16} {c.start_s:>7.2f}-{c.end_s:<7.2f} {line}")
    if args.out:
        write_manifest(m, args.out)
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_retrieve(args) -> int:
    entries = _catalogue(args.catalogue)
    try:
        truth = read_ground_truth(args.truth)
    except (OSError, TaskError) as e:
        raise CliError(f"ground truth {args.truth}: {e}", EXIT_USAGE) from None
    ks = sorted(set(args.recall_k))
    ranked = retrieve(entries, truth, max(ks))
    rows = [{"k": k, "recall": recall_at_k(ranked, truth, k)} for k in ks]
    for r in rows:
        print(f"Recall@{r['k']}: {r['recall']:.4f}")
    if args.out:
        Path(args.out).write_text(dump_json({"queries": len(truth), "recall": rows}), encoding="utf-8")
    return EXIT_OK


def _report_memory(args):
    profile = _load_profile(args.profile)
    if not profile.memory:
        raise CliError(f"profile {profile.name} has no memory components", EXIT_INVALID)
    rep = cm.memory_report(profile.memory["baseline"], profile.memory["reuse"])
    return rep, cm.format_memory_table(rep)


def _report_energy(args):
    profile = _load_profile(args.profile)
    power = profile.power_w or cm.PowerProfile()
    try:
        est = cm.energy_estimate(power, args.t_orig, args.latency_reduction, args.mem_reduction, args.t_new)
        rounded = cm.energy_estimate(power, args.t_orig, args.latency_reduction, args.mem_reduction,
                                     args.t_new, power_decimals=2)
    except cm.CostModelError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    rep = cm.energy_report(est, rounded)
    return rep, cm.format_energy_table(rep)


def _report_storage(args):
    text = _read_text(args.storage, "storage table") if args.storage else _data_text("table4_storage.csv")
    try:
        rep = cm.storage_report(cm.read_storage_table(text))
    except cm.CostModelError as e:
        raise CliError(f"storage table: {e}", EXIT_USAGE) from None
    return rep, cm.format_storage_table(rep)


def _report_layers(args):
    text = _read_text(args.layers, "layer table") if args.layers else _data_text("table6_layers.csv")
    try:
        rows = cm.read_layer_table(text)
        rep = cm.layers_report(rows)
    except cm.CostModelError as e:
        raise CliError(f"layer table: {e}", EXIT_USAGE) from None
    return rep, cm.format_layers_table(rep)


REPORTS = {"memory": _report_memory, "energy": _report_energy, "storage": _report_storage,
           "layers": _report_layers}


def cmd_report(args) -> int:
    rep, table = REPORTS[args.kind](args)
    if args.format == "json":
        sys.stdout.write(dump_json(rep))
    else:
        print(table)
    if args.out:
        Path(args.out).write_text(dump_json(rep), encoding="utf-8")
    return EXIT_OK


def cmd_segment(args) -> int:
    try:
        windows = segment(args.duration, SegmentationParams(args.clip_len, args.stride), args.source)
    except TaskError as e:
        raise CliError(str(e), EXIT_INVALID) from None
    for w in windows:
        print(f"{w.clip_id}\t{w.start_s:g}\t{w.end_s:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reusepipe", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="virtual-time run of a device profile with a latency comparison report")
    s.add_argument("--profile", default="pixel5a", help="profile JSON path or bundled name")
    s.add_argument("--task", choices=["retrieval", "assembly"])
    s.add_argument("--mode", choices=["sequential", "reuse"])
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--overhead", type=float, default=0.0, help="per-item overhead seconds")
    s.add_argument("--aggregate-scaling", choices=[a.value for a in AggregateScaling], default="batch")
    s.add_argument("--calibrate", action="store_true", help="fit per-item overhead to the reported reuse figure")
    s.add_argument("--seed", type=int, default=0, help="unused; simulation is deterministic")
    s.add_argument("--out", help="directory for traces and reports")
    s.set_defaults(func=cmd_simulate)

    b = sub.add_parser("bench", help="wall-clock run of the scheduler with sleeping executors")
    b.add_argument("--encode-ms", type=float, default=50.0)
    b.add_argument("--decode-ms", type=float, default=50.0)
    b.add_argument("--aggregate-ms", type=float, default=0.0)
    b.add_argument("--n", type=int, default=10)
    b.add_argument("--mode", choices=["sequential", "reuse"])
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("assemble", help="rank a caption catalogue against a prompt and write a manifest")
    a.add_argument("--catalogue", required=True)
    a.add_argument("--prompt", required=True)
    a.add_argument("--k", type=int, default=5)
    a.add_argument("--order", choices=[o.value for o in ScriptOrder], default="similarity")
    a.add_argument("--seed", type=int, default=0, help="unused; assembly is deterministic")
    a.add_argument("--out")
    a.set_defaults(func=cmd_assemble)

    r = sub.add_parser("retrieve", help="Recall@k of the catalogue against a ground-truth file")
    r.add_argument("--catalogue", required=True)
    r.add_argument("--truth", required=True)
    r.add_argument("--recall-k", type=int, nargs="+", default=[1, 5, 10])
    r.add_argument("--out")
    r.set_defaults(func=cmd_retrieve)

    rp = sub.add_parser("report", help="memory / energy / storage / layer reports")
    rp.add_argument("kind", choices=sorted(REPORTS))
    rp.add_argument("--profile", default="pixel5a")
    rp.add_argument("--layers", help="CSV: layer_kind,param_count,size_mb")
    rp.add_argument("--storage", help="CSV: name,size_mb")
    rp.add_argument("--t-orig", type=float, default=10.0)
    rp.add_argument("--latency-reduction", type=float, default=0.27)
    rp.add_argument("--mem-reduction", type=float, default=0.057)
    rp.add_argument("--t-new", type=float, default=7.0)
    rp.add_argument("--format", choices=["table", "json"], default="table")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    sg = sub.add_parser("segment", help="print sliding windows for a video duration")
    sg.add_argument("--duration", type=float, required=True)
    sg.add_argument("--clip-len", type=float, default=10.0)
    sg.add_argument("--stride", type=float, default=5.0)
    sg.add_argument("--source", default="video")
    sg.set_defaults(func=cmd_segment)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # anything else is an execution failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_EXEC


if __name__ == "__main__":
    sys.exit(main())
