"""Sweep the live scheduler over item counts and report reuse/sequential wall-clock ratios.

Uses sleeping executors, so numbers reflect scheduling overhead only.

    python scripts/bench_overlap.py --encode-ms 50 --decode-ms 30 --n 1 2 5 10
"""
import argparse

from reusepipe.flows import bench_once
from reusepipe.registry import ExecutionMode
from reusepipe.simulator import analytic_makespan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--encode-ms", type=float, default=50.0)
    ap.add_argument("--decode-ms", type=float, default=50.0)
    ap.add_argument("--n", type=int, nargs="+", default=[1, 2, 5, 10, 20])
    args = ap.parse_args()
    e, d = args.encode_ms / 1000, args.decode_ms / 1000
    print(f"{'N':>4}{'sequential_s':>14}{'reuse_s':>10}{'ratio':>8}{'ideal':>8}  verify")
    for n in args.n:
        seq = bench_once(e, d, n, ExecutionMode.SEQUENTIAL_NO_REUSE)
        par = bench_once(e, d, n, ExecutionMode.REUSE_PARALLEL)
        ideal = analytic_makespan(0, e, d, n, 0, "reuse") / analytic_makespan(0, e, d, n, 0, "sequential")
        ok = "ok" if not (seq.violations or par.violations) else "VIOLATIONS"
        print(f"{n:>4}{seq.makespan_s:>14.4f}{par.makespan_s:>10.4f}"
              f"{par.makespan_s / seq.makespan_s:>8.3f}{ideal:>8.3f}  {ok}")


if __name__ == "__main__":
    main()
