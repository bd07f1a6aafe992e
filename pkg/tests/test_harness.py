from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsocfw.bus import Kind
from mpsocfw.harness import (
    LATENCY_CASES,
    UNMAPPED,
    AppTrace,
    AttackScript,
    build_case_study,
    estimate_area,
    inject,
    latency_case,
    pic_dec,
    pic_drm,
    pic_proc,
    run_comparison,
    section_base,
)
from mpsocfw.kernel import Simulator, TraceItem, simulate

SHARED, IP = 0x4000_0000, 0x4400_0000


@pytest.mark.parametrize("master,kind,addr,ok", [
    ("MB1", Kind.READ, SHARED, True),
    ("MB1", Kind.WRITE, SHARED, False),
    ("MB2", Kind.WRITE, SHARED, True),
    ("MB2", Kind.READ, IP, False),
    ("MB2", Kind.WRITE, IP, True),
    ("MB2", Kind.READ, section_base("C11"), False),
    ("MB1", Kind.READ, section_base("C21"), False),
    ("MB2", Kind.WRITE, section_base("D21"), True),
    ("MB1", Kind.WRITE, section_base("D12"), True),
])
def test_case_study_access_matrix(master, kind, addr, ok):
    item = TraceItem(master, kind, addr, payload=[1] if kind is Kind.WRITE else None)
    (c,) = simulate(build_case_study(), [item]).completions
    assert (c.status == "ok") is ok


def test_ext_hole_and_unmapped_raise_nf():
    sim = simulate(build_case_study(), [TraceItem("MB1", Kind.READ, 0x8C00_0000),
                                        TraceItem("MB1", Kind.READ, UNMAPPED, gap=500)])
    assert [c.flags for c in sim.completions] == [["nF"], ["nF"]]


@pytest.mark.parametrize("name,total", [("s0", 6), ("s1", 6), ("s2", 28), ("s3", 18), ("s4", 6)])
def test_latency_cases(name, total):
    assert name in LATENCY_CASES
    topo, items = latency_case(name)
    (c,) = simulate(topo, items).completions
    assert c.status == "ok" and c.ledger.total == total


def test_area_anchor_values():
    assert estimate_area(1, 0) == (138, 123, 293)
    assert estimate_area(0, 1) == (1304, 2161, 2689)
    assert estimate_area(0, 0) == (0, 0, 0)
    assert estimate_area(4, 1)[0] == 1856
    with pytest.raises(ValueError):
        estimate_area(-1, 0)


@given(st.integers(0, 500), st.integers(0, 500), st.integers(0, 500), st.integers(0, 500))
def test_area_is_linear(x1, y1, x2, y2):
    a, b = estimate_area(x1, y1), estimate_area(x2, y2)
    assert estimate_area(x1 + x2, y1 + y2) == tuple(p + q for p, q in zip(a, b))


def test_empty_trace_comparison():
    cmp = run_comparison(AppTrace("empty", []))
    assert cmp.difference == 0 and cmp.gain == 0 and cmp.overhead_distributed == 0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["MB1", "MB2"]),
                          st.sampled_from([SHARED, IP, section_base("D11"), section_base("C21"), 0x8C00_0000]),
                          st.booleans(), st.integers(1, 3), st.integers(0, 10)),
                max_size=6))
def test_centralized_difference_is_four_per_checked(ops):
    items = [TraceItem(m, Kind.READ if r else Kind.WRITE, a, words=n,
                       payload=None if r else [7] * n, gap=g) for m, a, r, n, g in ops]
    cmp = run_comparison(AppTrace("rand", items))
    assert cmp.difference == 4 * cmp.distributed.checked


def test_app_traces_are_deterministic_and_serializable():
    for make in (pic_proc, pic_drm, pic_dec):
        a, b = make(scale=2e-6), make(scale=2e-6)
        assert a.as_dict() == b.as_dict() and len(a) > 0
        assert AppTrace.from_dict(a.as_dict()).as_dict() == a.as_dict()


def test_calibrated_dec_gain_at_small_scale():
    g = run_comparison(pic_dec(scale=2e-5)).gain
    assert abs(float(g) - 0.33) <= 0.02


def test_inject_tamper_gives_af():
    d11 = section_base("D11")
    sim = Simulator(build_case_study(), [TraceItem("MB1", Kind.WRITE, d11, payload=[1, 2]),
                                         TraceItem("MB1", Kind.READ, d11, words=2, at=200)])
    atk = inject(AttackScript("A1_memory_tamper", 100, {"address": d11, "flip": 3}), sim)
    sim.run()
    assert atk.log and sim.completions[-1].flags == ["aF"]


def test_inject_replay_gives_af():
    d12 = section_base("D12")
    sim = Simulator(build_case_study(), [TraceItem("MB1", Kind.WRITE, d12, payload=[1]),
                                         TraceItem("MB1", Kind.WRITE, d12, payload=[2], at=100),
                                         TraceItem("MB1", Kind.READ, d12, at=300)])
    inject(AttackScript("A1_memory_tamper", 200, {"address": d12, "replay_from": 50}), sim)
    sim.run()
    assert sim.completions[-1].flags == ["aF"]


def test_probe_sees_only_ciphertext_and_overwrite_is_caught():
    c11 = section_base("C11")
    sim = Simulator(build_case_study(), [TraceItem("MB1", Kind.WRITE, c11, payload=[0x504C4149]),
                                         TraceItem("MB1", Kind.READ, c11, at=100)])
    atk = inject(AttackScript("A2_bus_probe", 0, {"address": c11, "overwrite": b"\0" * 16,
                                                  "overwrite_dir": "read"}), sim)
    sim.run()
    taps = [d for _, what, d in atk.log if what == "tap"]
    assert taps and all("504c4149" not in t["data"] for t in taps)
    assert sim.completions[-1].flags == ["aF"]


def test_rogue_master_blocked_and_interrupt():
    sim = Simulator(build_case_study())
    inject(AttackScript("A3_rogue_master", 5, {"items": [TraceItem("x", Kind.READ, section_base("C11"))]}), sim)
    sim.run()
    (c,) = sim.completions
    assert c.master == "ROGUE" and c.status == "blocked" and c.flags == ["cF"]
    assert sim.updates.interrupt_count == 1


def test_unknown_attack_kind():
    with pytest.raises(ValueError):
        AttackScript("A9_magic")


def test_overhead_is_a_fraction():
    cmp = run_comparison(AppTrace("one", [TraceItem("MB1", Kind.READ, SHARED)]))
    assert isinstance(cmp.overhead_distributed, Fraction)
    assert cmp.baseline.makespan < cmp.distributed.makespan < cmp.centralized.makespan
