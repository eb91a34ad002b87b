"""Simulate every bundled device profile and print the latency comparison rows.

    python scripts/reproduce_table3.py [--n 5] [--out results/]
"""
import argparse
from pathlib import Path

from reusepipe.cli import dump_json, flat_csv, format_table3
from reusepipe.profiles import bundled_profile, bundled_profile_names
from reusepipe.simulator import SimConfig, reductions, table3_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=5)
    ap.add_argument("--out")
    args = ap.parse_args()
    cfg = SimConfig(args.n)
    all_rows, summary = [], {}
    for name in bundled_profile_names():
        p = bundled_profile(name)
        rows, reds = table3_rows(p, cfg), reductions(p, cfg)
        print(format_table3(rows, reds), end="\n\n")
        all_rows += rows
        summary[name] = [{"column": r.task, "source": r.source.value, "reduction_pct": round(r.reduction_pct, 4)}
                         for r in reds]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table3_all.csv").write_text(flat_csv(all_rows))
        (out / "reductions.json").write_text(dump_json(summary))
        print(f"wrote {out}")


if __name__ == "__main__":
    main()
