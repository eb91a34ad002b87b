import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reusepipe.clock import MonotonicClock, VirtualClock
from reusepipe.pipeline import EventKind, WorkItem, execute
from reusepipe.profiles import bundled_profile
from reusepipe.registry import (
    AlreadyResident,
    DuplicateId,
    ExecutionMode,
    LoadedNow,
    ModuleDescriptor,
    ModuleRegistry,
    NotResident,
    Role,
    State,
    UnknownId,
    resident_weights_gb,
)
from reusepipe.simulator import SimConfig, simulate

REUSE = ExecutionMode.REUSE_PARALLEL
SEQ = ExecutionMode.SEQUENTIAL_NO_REUSE


def _reg(*descs):
    r = ModuleRegistry()
    for d in descs:
        r.register_module(d)
    return r


def test_register_fresh_module_is_unloaded():
    reg = ModuleRegistry()
    handle = reg.register_module(ModuleDescriptor("clip-vit", Role.VIDEO_ENCODER, weight_size_mb=1600))
    assert handle == "clip-vit"
    st_ = reg.state("clip-vit")
    assert st_.state is State.UNLOADED and st_.load_count == 0


def test_register_duplicate():
    reg = _reg(ModuleDescriptor("a", Role.EMBEDDER))
    with pytest.raises(DuplicateId):
        reg.register_module(ModuleDescriptor("a", Role.TEXT_DECODER))


def test_load_temp_reads_back_unchanged():
    reg = _reg(ModuleDescriptor("decoder", Role.TEXT_DECODER, load_temp_gb=0.352))
    assert reg.descriptor("decoder").load_temp_gb == 0.352


def test_negative_fields_rejected():
    with pytest.raises(ValueError):
        ModuleDescriptor("x", Role.EMBEDDER, weight_size_mb=-1)


def test_reuse_acquire_twice_loads_once():
    reg = _reg(ModuleDescriptor("decoder", Role.TEXT_DECODER, load_latency_s=3.0))
    clock = VirtualClock()
    first = reg.acquire("decoder", REUSE, clock)
    second = reg.acquire("decoder", REUSE, clock)
    assert isinstance(first, LoadedNow) and first.duration_s == 3.0
    assert isinstance(second, AlreadyResident) and second.duration_s == 0
    assert reg.state("decoder").load_count == 1
    assert clock.now() == 3.0


def test_no_reuse_acquire_release_acquire_reloads():
    reg = _reg(ModuleDescriptor("decoder", Role.TEXT_DECODER, load_latency_s=1.0))
    clock = VirtualClock()
    reg.acquire("decoder", SEQ, clock)
    reg.release("decoder", SEQ)
    assert reg.state("decoder").state is State.UNLOADED
    reg.acquire("decoder", SEQ, clock)
    assert reg.state("decoder").load_count == 2
    assert clock.now() == 2.0


def test_reuse_release_keeps_resident():
    reg = _reg(ModuleDescriptor("enc", Role.VIDEO_ENCODER))
    reg.acquire("enc", REUSE, VirtualClock())
    reg.release("enc", REUSE)
    assert reg.state("enc").state is State.RESIDENT


def test_release_unloaded():
    reg = _reg(ModuleDescriptor("enc", Role.VIDEO_ENCODER))
    with pytest.raises(NotResident):
        reg.release("enc", SEQ)


def test_unknown_id():
    with pytest.raises(UnknownId):
        ModuleRegistry().acquire("nope", REUSE, VirtualClock())


def test_load_timestamps_recorded():
    reg = _reg(ModuleDescriptor("enc", Role.VIDEO_ENCODER, load_latency_s=2.5))
    clock = VirtualClock(t=1.0)
    reg.acquire("enc", REUSE, clock)
    s = reg.state("enc")
    assert (s.last_load_start_s, s.last_load_end_s) == (1.0, 3.5)


def test_duration_override():
    reg = _reg(ModuleDescriptor("enc", Role.VIDEO_ENCODER, load_latency_s=9.0))
    out = reg.acquire("enc", SEQ, VirtualClock(), duration_s=4.0)
    assert out.duration_s == 4.0


def test_load_temp_peak_tracked():
    reg = _reg(ModuleDescriptor("a", Role.VIDEO_ENCODER, load_temp_gb=0.2),
               ModuleDescriptor("b", Role.TEXT_DECODER, load_temp_gb=0.352))
    c = VirtualClock()
    reg.acquire("a", REUSE, c)
    reg.acquire("b", REUSE, c)
    # loads are atomic and one at a time, so temporaries never stack
    assert reg.peak_load_temp_gb == 0.352
    assert reg.live_load_temp_gb() == 0


def test_resident_weights_empty():
    assert resident_weights_gb(ModuleRegistry()) == 0.0


def test_resident_weights_two_modules():
    reg = _reg(ModuleDescriptor("a", Role.VIDEO_ENCODER, weight_size_mb=1000),
               ModuleDescriptor("b", Role.TEXT_DECODER, weight_size_mb=500))
    c = VirtualClock()
    reg.acquire("a", REUSE, c)
    reg.acquire("b", REUSE, c)
    assert reg.resident_weights_gb() == 1.5


def test_resident_weights_pixel5a_total():
    p = bundled_profile("pixel5a")
    reg = ModuleRegistry()
    roles = {"video-encoder": Role.VIDEO_ENCODER, "text-decoder": Role.TEXT_DECODER,
             "sentence-embedder": Role.EMBEDDER}
    for mid, mb in p.module_weights_mb.items():
        reg.register_module(ModuleDescriptor(mid, roles[mid], weight_size_mb=mb))
        reg.acquire(mid, REUSE, VirtualClock())
    assert reg.resident_weights_gb() == pytest.approx(4.623, abs=1e-12)


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=8), st.randoms())
def test_resident_weights_additive_order_independent(sizes, rnd):
    order = list(range(len(sizes)))
    rnd.shuffle(order)
    reg = _reg(*(ModuleDescriptor(f"m{i}", Role.AGGREGATE, weight_size_mb=sizes[i]) for i in order))
    for i in order:
        reg.acquire(f"m{i}", REUSE, VirtualClock())
    ref = _reg(*(ModuleDescriptor(f"m{i}", Role.AGGREGATE, weight_size_mb=s) for i, s in enumerate(sizes)))
    for i in range(len(sizes)):
        ref.acquire(f"m{i}", REUSE, VirtualClock())
    assert reg.resident_weights_gb() == ref.resident_weights_gb()


def test_reuse_assembly_run_one_load_per_module():
    trace = simulate(bundled_profile("pixel5a"), "assembly", SimConfig(n_items=5), REUSE)
    loads = trace.load_events()
    mods = [m for ev in loads for m in ev.modules]
    assert sorted(mods) == ["text-decoder", "video-encoder"]
    assert len(set(mods)) == len(mods)


def test_no_reuse_two_load_points():
    trace = simulate(bundled_profile("pixel5a"), "retrieval", SimConfig(n_items=5), SEQ)
    assert len(trace.load_events()) == 2


@given(st.lists(st.sampled_from(["acq", "rel"]), max_size=30), st.sampled_from([REUSE, SEQ]))
def test_load_count_monotone_and_state_machine(ops, mode):
    reg = _reg(ModuleDescriptor("m", Role.TEXT_DECODER, load_latency_s=1))
    c = VirtualClock()
    last = 0
    for op in ops:
        if op == "acq":
            reg.acquire("m", mode, c)
            assert reg.state("m").state is State.RESIDENT
        else:
            try:
                reg.release("m", mode)
            except NotResident:
                assert reg.state("m").state is State.UNLOADED
        s = reg.state("m")
        assert s.load_count >= last
        if s.state is State.RESIDENT:
            assert s.load_count >= 1
        if mode is REUSE and s.load_count:
            assert s.state is State.RESIDENT
        last = s.load_count
    if mode is REUSE:
        assert reg.state("m").load_count <= 1


def test_concurrent_acquire_loads_once():
    reg = _reg(ModuleDescriptor("m", Role.TEXT_DECODER, load_latency_s=0.01))
    clock = MonotonicClock()
    outcomes = []
    barrier = threading.Barrier(8)

    def worker():
        barrier.wait()
        outcomes.append(reg.acquire("m", REUSE, clock))

    ts = [threading.Thread(target=worker) for _ in range(8)]
    for t in ts:
        t.start()
    for t in ts:
        t.join()
    assert sum(isinstance(o, LoadedNow) for o in outcomes) == 1
    assert reg.state("m").load_count == 1


def test_second_run_in_reuse_mode_emits_no_loads():
    from reusepipe.simulator import task_spec
    reg = _reg(ModuleDescriptor("video-encoder", Role.VIDEO_ENCODER, load_latency_s=1),
               ModuleDescriptor("text-decoder", Role.TEXT_DECODER, load_latency_s=1),
               ModuleDescriptor("sentence-embedder", Role.EMBEDDER, load_latency_s=1))
    spec = task_spec("retrieval")
    ex = {s.name: (lambda x: x) for s in spec.stages}
    items = [WorkItem("a", 1)]
    t1 = execute(spec, items, REUSE, ex, reg, VirtualClock())
    t2 = execute(spec, items, REUSE, ex, reg, VirtualClock())
    assert len(t1.load_events()) == 3
    assert [e for e in t2.events if e.kind is EventKind.LOAD] == []
