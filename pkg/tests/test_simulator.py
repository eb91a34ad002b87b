import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reusepipe.pipeline import verify_trace
from reusepipe.profiles import (
    DeviceProfile,
    InvalidProfile,
    LoadLatency,
    MissingReportedData,
    ProfileParseError,
    StageLatency,
    bundled_profile,
    bundled_profile_names,
    load_profile,
    profile_from_dict,
    profile_to_dict,
    save_profile,
)
from reusepipe.registry import ExecutionMode
from reusepipe.simulator import (
    AggregateScaling,
    SimConfig,
    Source,
    analytic_makespan,
    calibrate_overhead,
    compare_modes,
    reductions,
    reported_reduction,
    simulate,
    simulate_params,
    table3_rows,
    task_spec,
)

REUSE = ExecutionMode.REUSE_PARALLEL
SEQ = ExecutionMode.SEQUENTIAL_NO_REUSE
PIXEL = bundled_profile("pixel5a")


def test_pixel5a_sequential_retrieval():
    t = simulate(PIXEL, "retrieval", SimConfig(n_items=5), SEQ)
    assert t.makespan_s == pytest.approx(161.52, abs=1e-9)


def test_pixel5a_sequential_assembly():
    t = simulate(PIXEL, "assembly", SimConfig(n_items=5), SEQ)
    assert t.makespan_s == pytest.approx(163.74, abs=1e-9)


def test_pixel5a_ideal_reuse():
    assert simulate(PIXEL, "retrieval", mode=REUSE).makespan_s == pytest.approx(
        17.23 + 8.68 + 4 * 8.68 + 5.57 + 24.39)
    assert simulate(PIXEL, "assembly", mode=REUSE).makespan_s == pytest.approx(92.81)


def test_sim_traces_verify():
    for p in bundled_profile_names():
        prof = bundled_profile(p)
        for task in ("retrieval", "assembly"):
            for mode in (SEQ, REUSE):
                tr = simulate(prof, task, SimConfig(4), mode)
                assert verify_trace(tr, task_spec(task), mode) == []


def test_simulate_params_small():
    assert simulate_params(2, 1, 1, 3, 0, REUSE).makespan_s == 6


def test_analytic_examples():
    assert analytic_makespan(0, 2, 1, 3, 1, "sequential") == 10
    assert analytic_makespan(1, 2, 1, 3, 1, "reuse") == 9
    assert analytic_makespan(0, 1, 3, 3, 2, "reuse") == 12


def test_analytic_rejects_bad_input():
    with pytest.raises(ValueError):
        analytic_makespan(0, 1, 1, 0, 0, "reuse")
    with pytest.raises(ValueError):
        analytic_makespan(-1, 1, 1, 1, 0, "reuse")


def test_reported_reduction_pixel5a():
    assert reported_reduction(PIXEL, "retrieval").reduction_pct == pytest.approx(33.06, abs=0.01)
    assert reported_reduction(PIXEL, "assembly").reduction_pct == pytest.approx(30.78, abs=0.01)
    lo = reported_reduction(PIXEL, "loading")
    assert lo.reduction_pct == pytest.approx(47.69, abs=0.01)
    assert lo.source is Source.REPORTED


def test_reported_reduction_missing():
    d = profile_to_dict(PIXEL)
    del d["reported_e2e_s"]["assembly"]
    p = profile_from_dict(d)
    with pytest.raises(MissingReportedData):
        reported_reduction(p, "assembly")


def test_compare_modes_simulated():
    r = compare_modes(PIXEL, "retrieval")
    assert r.source is Source.SIMULATED
    assert r.baseline_s == pytest.approx(161.52)
    assert r.reduction_pct == pytest.approx(100 * (161.52 - 90.59) / 161.52)


def test_large_n_limit_approaches_half():
    # e == d, no loads, no aggregate: (e + (N-1)e + e) / (2Ne) -> 1/2
    n = 2000
    par = analytic_makespan(0, 1, 1, n, 0, "reuse")
    seq = analytic_makespan(0, 1, 1, n, 0, "sequential")
    assert 1 - par / seq == pytest.approx(0.5, abs=1e-3)


@given(st.integers(1, 40))
def test_makespan_monotone_in_n(n):
    for mode in (SEQ, REUSE):
        a = simulate(PIXEL, "retrieval", SimConfig(n), mode).makespan_s
        b = simulate(PIXEL, "retrieval", SimConfig(n + 1), mode).makespan_s
        assert b > a


def test_per_item_aggregate_scaling():
    cfg = SimConfig(5, aggregate_scaling="per_item")
    assert cfg.aggregate_scaling is AggregateScaling.PER_ITEM
    batch = simulate(PIXEL, "retrieval", SimConfig(5), SEQ).makespan_s
    per = simulate(PIXEL, "retrieval", cfg, SEQ).makespan_s
    assert per - batch == pytest.approx(4 * 24.39)


def test_calibration_hits_reported_reuse():
    cal = calibrate_overhead(PIXEL, "retrieval")
    assert abs(cal.residual_s) < 1e-6
    assert cal.per_item_overhead_s == pytest.approx(3.0117, abs=1e-3)
    tr = simulate(PIXEL, "retrieval", SimConfig(5, cal.per_item_overhead_s), REUSE)
    assert tr.makespan_s == pytest.approx(108.66, abs=1e-6)


def test_calibration_keeps_zero_when_already_slow():
    d = profile_to_dict(PIXEL)
    d["reported_e2e_s"]["retrieval"]["reuse"] = 50.0
    cal = calibrate_overhead(profile_from_dict(d), "retrieval")
    assert cal.per_item_overhead_s == 0.0 and cal.residual_s > 0


def test_table3_rows_layout():
    rows = table3_rows(PIXEL)
    assert len(rows) == 4
    rep = [r for r in rows if r["source"] == "Reported" and r["mode"] == "sequential"][0]
    assert rep["retrieval_e2e"] == 162.33 and rep["model_loading"] == 32.94
    sim = [r for r in rows if r["source"] == "Simulated" and r["mode"] == "sequential"][0]
    assert sim["model_loading"] == pytest.approx(65.88)
    assert sim["retrieval_e2e"] == pytest.approx(161.52)


def test_reductions_listing():
    rs = reductions(PIXEL)
    assert [r.task for r in rs] == ["loading", "retrieval", "retrieval", "assembly", "assembly"]


def test_simconfig_validation():
    with pytest.raises(ValueError):
        SimConfig(0)
    with pytest.raises(ValueError):
        SimConfig(5, -1)


# -- profiles --

def test_bundled_profiles_present():
    assert set(bundled_profile_names()) >= {"pixel5a", "pixel8a", "galaxy_s23", "server_cpu", "server_gpu",
                                            "server_cpu_q", "server_gpu_q"}


def test_profile_round_trip(tmp_path):
    p = save_profile(PIXEL, tmp_path / "p.json")
    assert load_profile(p) == PIXEL


def test_profile_negative_latency_names_field():
    with pytest.raises(InvalidProfile) as ei:
        DeviceProfile("x", LoadLatency(1, 1), StageLatency(-1, 1, 1, 1))
    assert ei.value.field == "stage_s.video_encode"


def test_profile_parse_missing_field():
    d = profile_to_dict(PIXEL)
    del d["load_s"]["reuse_total"]
    with pytest.raises(ProfileParseError) as ei:
        profile_from_dict(d)
    assert ei.value.field == "load_s.reuse_total"


def test_profile_parse_wrong_type(tmp_path):
    d = profile_to_dict(PIXEL)
    d["load_s"]["baseline_total"] = "fast"
    f = tmp_path / "bad.json"
    f.write_text(json.dumps(d))
    with pytest.raises(ProfileParseError) as ei:
        load_profile(f)
    assert "baseline_total" in str(ei.value)


def test_profile_bad_json(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text("{not json")
    with pytest.raises(ProfileParseError):
        load_profile(f)


# -- reuse never loses --

nonneg = st.fractions(0, 50, max_denominator=100)
pos = st.fractions(Fraction(1, 100), 20, max_denominator=100)


@given(nonneg, nonneg, pos, pos, st.integers(1, 30), nonneg)
def test_reuse_dominates(lr, lb, e, d, n, A):
    lr, lb = min(lr, lb), max(lr, lb)
    par = simulate_params(lr, e, d, n, A, REUSE).makespan_s
    seq = simulate_params(lb, e, d, n, A, SEQ).makespan_s
    assert par <= seq
    if n >= 2 or lb > lr:
        assert par < seq
