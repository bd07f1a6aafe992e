"""Built-in scenarios. Each returns a :class:`RunReport` plus the simulators it ran."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .bus import Kind
from .harness import (
    MARKER,
    UNMAPPED,
    AttackScript,
    build_case_study,
    build_single_firewall,
    inject,
    latency_case,
    pic_dec,
    pic_drm,
    pic_proc,
    plaintext_hits,
    run_comparison,
    run_mode,
    section_base,
)
from .kernel import Simulator, TraceItem
from .report import RunReport

__all__ = ["RunOptions", "SCENARIOS", "run_scenario", "LATENCY_EXPECTED"]

Sims = dict[str, Simulator]


@dataclass(frozen=True)
class RunOptions:
    scale: float = 1e-4
    hit_rate: float = 0.0
    strict_4n: bool = True
    software_latency: int = 148
    mode: str = "distributed"

    def case_study(self, crypto: str = "full"):
        return build_case_study(crypto, mode=self.mode, strict_4n=self.strict_4n,
                                software_latency=self.software_latency)


LATENCY_EXPECTED = {"s0": 6, "s1": 6, "s2": 28, "s3": 18, "s4": 6}


def _latency(name: str) -> Callable[[RunOptions], tuple[RunReport, Sims]]:
    def run(opts: RunOptions) -> tuple[RunReport, Sims]:
        topo, trace = latency_case(name, strict_4n=opts.strict_4n, mode=opts.mode)
        topo = topo.with_constants(software_latency=opts.software_latency)
        sim = Simulator(topo, trace).run()
        c = sim.completions[0]
        rep = RunReport(f"{name}-latency")
        rep.add_run("main", sim)
        extra = 4 if opts.mode == "centralized" else 0
        rep.checks["status_ok"] = c.status == "ok"
        rep.checks["total"] = c.ledger.total == LATENCY_EXPECTED[name] + extra
        if name == "s2":
            rep.checks["split_6_22"] = c.ledger.checking == 6 and c.ledger.crypto == 22
        rep.extra = {"total": c.ledger.total, "checking": c.ledger.checking, "crypto": c.ledger.crypto,
                     "latency": c.latency, "ledger": c.ledger.as_dict()}
        return rep, {"main": sim}

    return run


def update_timing(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("update-timing", expect_detection=True)
    sw = opts.software_latency
    sweep = {}
    topo = build_single_firewall().with_constants(software_latency=sw)
    for n in range(1, 33):
        sim = Simulator(topo)
        word = sim.firewall("LF0").bram[1]
        r = sim.request_update("LF0", words=[(1, word)] * n, cycle=0)
        sim.run()
        sweep[n] = r.total
        rep.checks[f"n{n}"] = r.total == sw + 4 + n and r.steps() == [1, 2, sw, n, 1]
    rep.extra["sweep_total"] = sweep

    # attack-driven: MB1 writes read-only shared BRAM, MB2 reads it during the freeze
    items = [
        TraceItem("MB1", Kind.WRITE, 0x4000_0000, payload=[0xDEADBEEF]),
        TraceItem("MB2", Kind.READ, 0x4000_0000, at=5),
    ]
    sim = Simulator(opts.case_study(), items).run()
    rep.add_run("attack", sim)
    reports = {r.firewall: r for r in sim.updates.reports}
    mb2 = next(c for c in sim.completions if c.master == "MB2")
    intr = [e for e in sim.events if e.kind == "interrupt"]
    rep.checks["one_interrupt"] = len(intr) == 1 and intr[0].detail["pending"] == [1, 3]
    rep.checks["ascending_service"] = reports["LF_MB1"].release_cycle < reports["LF_SHARED"].release_cycle
    rep.checks["lf_mb1_timeline"] = reports["LF_MB1"].total == sw + 4 + 7
    rep.checks["stalled_read_new_policy"] = (
        mb2.status == "ok"
        and "LF_SHARED" in mb2.arrived_frozen
        and mb2.versions["LF_SHARED"] > mb2.arrived_frozen["LF_SHARED"]
        and reports["LF_SHARED"].ready_event
    )
    rep.extra["attack_updates"] = {k: v.as_dict() for k, v in sorted(reports.items())}
    return rep, {"attack": sim}


def _blocked_with(sim: Simulator, flag: str, fw: str) -> bool:
    return any(flag in c.flags and fw in c.blocked_by for c in sim.completions)


def attack_a1(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("attack-a1", expect_detection=True)
    d12, d11 = section_base("D12"), section_base("D11")
    pix = [MARKER[0], MARKER[1], 1, 2]

    tamper = Simulator(opts.case_study(), [
        TraceItem("MB1", Kind.WRITE, d12, payload=pix),
        TraceItem("MB1", Kind.READ, d12, words=4, gap=200),
    ])
    inject(AttackScript("A1_memory_tamper", 150, {"address": d12 + 4, "flip": 3}), tamper)
    tamper.run()

    replay = Simulator(opts.case_study(), [
        TraceItem("MB1", Kind.WRITE, d11, payload=pix),
        TraceItem("MB1", Kind.WRITE, d11, payload=[0, 0, 0, 0], gap=200),
        TraceItem("MB1", Kind.READ, d11, words=4, gap=300),
    ])
    inject(AttackScript("A1_memory_tamper", 500, {"address": d11, "replay_from": 150}), replay)
    replay.run()

    for label, sim in (("tamper", tamper), ("replay", replay)):
        rep.add_run(label, sim)
        rep.checks[f"{label}:aF"] = _blocked_with(sim, "aF", "CF_EXT")
        rep.checks[f"{label}:interrupt"] = sim.updates.interrupt_count >= 1
        rep.checks[f"{label}:no_plaintext"] = not plaintext_hits(sim)
    return rep, {"tamper": tamper, "replay": replay}


def attack_a2(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("attack-a2", expect_detection=True)
    d11, d12 = section_base("D11"), section_base("D12")
    pix = [MARKER[0], MARKER[1], 3, 4]
    marker = b"".join(w.to_bytes(4, "big") for w in MARKER)

    tap = Simulator(opts.case_study(), [
        TraceItem("MB1", Kind.WRITE, d11, payload=pix),
        TraceItem("MB1", Kind.READ, d11, words=4, gap=50),
    ])
    probe = inject(AttackScript("A2_bus_probe", 0, {}), tap)
    tap.run()
    taps = [d for _, what, d in probe.log if what == "tap"]
    rep.add_run("tap", tap)
    rep.checks["tap:seen_traffic"] = len(taps) > 0
    rep.checks["tap:ciphertext_only"] = not any(marker.hex() in t["data"] for t in taps)
    rep.checks["tap:read_back"] = tap.completions[-1].data == pix

    over = Simulator(opts.case_study(), [
        TraceItem("MB1", Kind.WRITE, d12, payload=pix),
        TraceItem("MB1", Kind.READ, d12, words=4, gap=50),
    ])
    inject(AttackScript("A2_bus_probe", 0, {"address": d12, "overwrite": b"\xff" * 16}), over)
    over.run()
    rep.add_run("overwrite", over)
    rep.checks["overwrite:aF"] = _blocked_with(over, "aF", "CF_EXT")
    rep.checks["overwrite:interrupt"] = over.updates.interrupt_count >= 1
    rep.extra["taps"] = len(taps)
    return rep, {"tap": tap, "overwrite": over}


def _hostile(master: str, kind: str, opts: RunOptions, items: list[TraceItem],
             legit: list[TraceItem] = ()) -> Simulator:
    sim = Simulator(opts.case_study(), legit)
    inject(AttackScript(kind, 0, {"master": master, "items": items}), sim)
    return sim.run()


def attack_a3(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("attack-a3", expect_detection=True)
    items = [
        TraceItem("ROGUE", Kind.WRITE, 0x4000_0010, payload=[0xBADBAD00]),
        TraceItem("ROGUE", Kind.WRITE, section_base("C11"), payload=[0xBADBAD01]),
        TraceItem("ROGUE", Kind.WRITE, 0x8C00_0000, payload=[0xBADBAD02]),
    ]
    sim = _hostile("ROGUE", "A3_rogue_master", opts, items)
    rep.add_run("main", sim)
    rogue = [c for c in sim.completions if c.master == "ROGUE"]
    rep.checks["all_blocked"] = len(rogue) == 3 and all(c.status == "blocked" for c in rogue)
    rep.checks["cF_shared"] = _blocked_with(sim, "cF", "LF_SHARED")
    rep.checks["cF_memory"] = _blocked_with(sim, "cF", "CF_EXT")
    rep.checks["nF_memory"] = _blocked_with(sim, "nF", "CF_EXT")
    rep.checks["interrupt"] = sim.updates.interrupt_count >= 1
    rep.checks["memory_untouched"] = not any(
        s == "ext" or s == "shared" for s, *_ in sim.delivered
    )
    return rep, {"main": sim}


def analysis_s1(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("analysis-s1", expect_detection=True)
    d11 = section_base("D11")
    sims = {}
    for crypto in ("none", "full"):
        sim = Simulator(opts.case_study(crypto), [
            TraceItem("MB1", Kind.WRITE, d11, payload=[0x11111111, d11 + 0x100]),
            TraceItem("MB1", Kind.WRITE, d11 + 0x100, payload=[0x22222222, 0]),
            TraceItem("MB1", Kind.READ, d11, words=2, gap=200, label="p1"),
            TraceItem("MB1", Kind.READ, words=2, follow=("p1", 1), label="p2"),
        ])
        inject(AttackScript("S1_packet_swap", 180, {"address": d11, "payload": [0xBAD0BAD0, UNMAPPED]}), sim)
        sim.run()
        sims[crypto] = sim
        rep.add_run(f"crypto_{crypto}", sim)
    plain = {c.label: c for c in sims["none"].completions}
    rep.checks["plain:packet_passes_memory_fw"] = plain["p1"].status == "ok" and plain["p1"].data[1] == UNMAPPED
    rep.checks["plain:blocked_at_mb1"] = plain["p2"].status == "blocked" and plain["p2"].blocked_by == ["LF_MB1"]
    crypt = {c.label: c for c in sims["full"].completions}
    rep.checks["crypto:aF_at_memory"] = crypt["p1"].status == "blocked" and "aF" in crypt["p1"].flags
    rep.checks["crypto:follow_skipped"] = crypt["p2"].status == "skipped"
    return rep, {f"crypto_{k}": v for k, v in sims.items()}


def analysis_s2(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("analysis-s2", expect_detection=True)
    items = [
        TraceItem("EVIL_IP", Kind.WRITE, 0x4000_0100, payload=[0x7E7E7E7E]),
        TraceItem("EVIL_IP", Kind.WRITE, section_base("D21"), payload=[0x7E7E7E7F]),
    ]
    legit = [TraceItem("MB1", Kind.WRITE, 0x4400_0000, payload=[0x0000_0080])]
    sim = _hostile("EVIL_IP", "S2_malicious_ip", opts, items, legit)
    rep.add_run("main", sim)
    evil = [c for c in sim.completions if c.master == "EVIL_IP"]
    rep.checks["evil_blocked"] = len(evil) == 2 and all(c.status == "blocked" for c in evil)
    rep.checks["first_stop_at_ip_data_path"] = evil and evil[0].blocked_by == ["LF_SHARED"]
    rep.checks["interrupt"] = sim.updates.interrupt_count >= 1
    rep.checks["legit_ok"] = all(c.status == "ok" for c in sim.completions if c.master == "MB1")
    return rep, {"main": sim}


def compare_centralized(opts: RunOptions) -> tuple[RunReport, Sims]:
    rep = RunReport("compare-centralized")
    topo = opts.case_study()
    cmp = run_comparison(pic_dec(opts.scale, opts.hit_rate), topo)
    rep.extra["picDec"] = cmp.as_dict()
    rep.checks["picDec:difference_4k"] = cmp.difference == 4 * cmp.distributed.checked
    rep.checks["picDec:gain_33pm2"] = abs(float(cmp.gain) * 100 - 33) <= 2
    small = run_comparison(pic_drm(opts.scale / 10, opts.hit_rate), topo)
    rep.extra["picDRM"] = small.as_dict()
    rep.checks["picDRM:difference_4k"] = small.difference == 4 * small.distributed.checked
    return rep, {}


def _case(builder) -> Callable[[RunOptions], tuple[RunReport, Sims]]:
    def run(opts: RunOptions) -> tuple[RunReport, Sims]:
        trace = builder(opts.scale, opts.hit_rate)
        rep = RunReport(f"case-study-{trace.name.lower()}")
        topo = opts.case_study()
        base, _ = run_mode(trace, topo, "baseline")
        dist, sim = run_mode(trace, topo, opts.mode)
        rep.add_run("main", sim, transactions=False)
        rep.checks["no_blocks"] = dist.blocked == 0
        rep.checks["no_plaintext_in_cmode_sections"] = not plaintext_hits(sim)
        rep.extra = {
            "trace": trace.name,
            "transactions": len(trace),
            "external_accesses": trace.external_accesses(),
            "baseline_cycles": base.makespan,
            "cycles": dist.makespan,
            "overhead_pct": round(100 * (dist.makespan - base.makespan) / base.makespan, 4) if base.makespan else 0.0,
            "firewall_cycles": dist.firewall_cycles,
        }
        return rep, {"main": sim}

    return run


SCENARIOS: dict[str, Callable[[RunOptions], tuple[RunReport, Sims]]] = {
    **{f"{n}-latency": _latency(n) for n in LATENCY_EXPECTED},
    "update-timing": update_timing,
    "attack-a1": attack_a1,
    "attack-a2": attack_a2,
    "attack-a3": attack_a3,
    "analysis-s1": analysis_s1,
    "analysis-s2": analysis_s2,
    "compare-centralized": compare_centralized,
    "case-study-picproc": _case(pic_proc),
    "case-study-picdrm": _case(pic_drm),
    "case-study-picdec": _case(lambda s, h: pic_dec(s, h)),
}


def run_scenario(name: str, opts: RunOptions = RunOptions()) -> tuple[RunReport, dict[str, list[str]]]:
    if name not in SCENARIOS:
        raise KeyError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    rep, sims = SCENARIOS[name](opts)
    return rep, {label: sim.event_log() for label, sim in sims.items()}
