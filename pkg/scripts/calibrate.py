"""Fit the per-item overhead that closes the gap between ideal and reported reuse latency.

    python scripts/calibrate.py
"""
from reusepipe.profiles import bundled_profile, bundled_profile_names
from reusepipe.registry import ExecutionMode
from reusepipe.simulator import SimConfig, calibrate_overhead, simulate


def main():
    print(f"{'device':<14}{'task':<11}{'ideal_s':>9}{'reported_s':>12}{'overhead_s':>12}{'residual_s':>12}")
    for name in bundled_profile_names():
        p = bundled_profile(name)
        for task in ("retrieval", "assembly"):
            ideal = simulate(p, task, SimConfig(5), ExecutionMode.REUSE_PARALLEL).makespan_s
            c = calibrate_overhead(p, task)
            print(f"{name:<14}{task:<11}{ideal:>9.2f}{c.reported_reuse_s:>12.2f}"
                  f"{c.per_item_overhead_s:>12.4f}{c.residual_s:>12.2e}")


if __name__ == "__main__":
    main()
