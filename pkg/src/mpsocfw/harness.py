"""The case-study system with its workloads and attacks, plus the
centralized-versus-distributed comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Optional, Sequence

from .bus import Constants, FirewallSpec, Kind, MasterSpec, SectionSpec, SimTopology, SlaveSpec
from .kernel import Simulator, TraceItem
from .policy import Rights, SecurityPolicy

__all__ = [
    "SECTIONS",
    "SECTION_SIZE",
    "ACCESS_RIGHTS",
    "MARKER",
    "build_case_study",
    "build_single_firewall",
    "latency_case",
    "LATENCY_CASES",
    "AppTrace",
    "pic_proc",
    "pic_drm",
    "pic_dec",
    "APP_ACCESS_COUNTS",
    "AttackScript",
    "ATTACK_KINDS",
    "inject",
    "plaintext_hits",
    "ModeRun",
    "Comparison",
    "run_mode",
    "run_comparison",
    "estimate_area",
]

SHARED_BASE, SHARED_SIZE = 0x4000_0000, 0x1_0000
IP_BASE, IP_SIZE = 0x4400_0000, 0x1000
EXT_BASE, EXT_SIZE = 0x8000_0000, 0x1000_0000
SECTION_SIZE = 32 * 1024 * 1024
UNMAPPED = 0xA000_0000

# name -> (cmode, imode) with full protection
SECTIONS = {
    "C11": (True, True),
    "D11": (True, True),
    "D12": (False, True),
    "C21": (False, False),
    "D21": (False, False),
}

_KEYS = {name: bytes((0x11 * (i + 1) + j) & 0xFF for j in range(16)) for i, name in enumerate(SECTIONS)}

_RO, _WO, _RW, _NO = Rights.RO, Rights.WO, Rights.RW, Rights.NONE

# target -> (MB1 right, MB2 right)
ACCESS_RIGHTS: dict[str, tuple[Rights, Rights]] = {
    "shared": (_RO, _RW),
    "ip": (_RW, _WO),
    "C11": (_RW, _NO),
    "D11": (_RW, _NO),
    "D12": (_RW, _NO),
    "C21": (_NO, _RW),
    "D21": (_NO, _RW),
}

# "PLAINTXT" split over two words; used to look for leaks in external memory
MARKER = (0x504C_4149, 0x4E54_5854)


def section_base(name: str) -> int:
    return EXT_BASE + list(SECTIONS).index(name) * SECTION_SIZE


def _ranges() -> dict[str, tuple[int, int]]:
    r = {"shared": (SHARED_BASE, SHARED_BASE + SHARED_SIZE), "ip": (IP_BASE, IP_BASE + IP_SIZE)}
    for name in SECTIONS:
        lo = section_base(name)
        r[name] = (lo, lo + SECTION_SIZE)
    return r


def _section_modes(name: str, crypto: str) -> tuple[bool, bool]:
    cmode, imode = SECTIONS[name]
    if crypto == "full":
        return cmode, imode
    if crypto == "integrity":
        return False, imode
    if crypto == "none":
        return False, False
    raise ValueError(f"crypto must be one of full/integrity/none, not {crypto!r}")


def build_case_study(
    crypto: str = "full",
    *,
    mode: str = "distributed",
    strict_4n: bool = True,
    software_latency: int = 148,
    raw_hop_cost: int = 1,
) -> SimTopology:
    """Two processors, shared BRAM, threshold IP and sectioned external memory.

    Firewall ids follow list order: LF_MB1=1, LF_MB2=2, LF_SHARED=3, LF_IP=4, CF_EXT=5.
    """
    ranges = _ranges()
    masters = ("MB1", "MB2")

    def master_lf(idx: int) -> list[SecurityPolicy]:
        return [
            SecurityPolicy(pid, *ranges[t], rights={masters[idx]: ACCESS_RIGHTS[t][idx]})
            for pid, t in enumerate(ACCESS_RIGHTS, start=1)
        ]

    def slave_lf(t: str) -> list[SecurityPolicy]:
        return [SecurityPolicy(1, *ranges[t], rights=dict(zip(masters, ACCESS_RIGHTS[t])))]

    cf_pols = []
    for pid, name in enumerate(SECTIONS, start=1):
        cmode, imode = _section_modes(name, crypto)
        cf_pols.append(SecurityPolicy(
            pid, *ranges[name], rights=dict(zip(masters, ACCESS_RIGHTS[name])), cmode=cmode, imode=imode,
            key=_KEYS[name] if (cmode or imode) else None,
        ))
    topo = SimTopology(
        masters=[MasterSpec("MB1", "LF_MB1"), MasterSpec("MB2", "LF_MB2")],
        slaves=[
            SlaveSpec("shared", SHARED_BASE, SHARED_BASE + SHARED_SIZE, "memory", "LF_SHARED"),
            SlaveSpec("ip", IP_BASE, IP_BASE + IP_SIZE, "ip", "LF_IP"),
            SlaveSpec("ext", EXT_BASE, EXT_BASE + EXT_SIZE, "memory", "CF_EXT"),
        ],
        firewalls=[
            FirewallSpec("LF_MB1", "local", master_lf(0)),
            FirewallSpec("LF_MB2", "local", master_lf(1)),
            FirewallSpec("LF_SHARED", "local", slave_lf("shared")),
            FirewallSpec("LF_IP", "local", slave_lf("ip")),
            FirewallSpec("CF_EXT", "crypto", cf_pols, critical=True),
        ],
        sections=[SectionSpec(n, *ranges[n]) for n in SECTIONS],
        constants=Constants(raw_hop_cost=raw_hop_cost, software_latency=software_latency,
                            strict_4n=strict_4n, mode=mode),
    )
    return topo.validate()


def build_single_firewall(strict_4n: bool = True, mode: str = "distributed") -> SimTopology:
    """One master behind one Local Firewall, talking to an unguarded BRAM."""
    pol = SecurityPolicy(1, SHARED_BASE, SHARED_BASE + SHARED_SIZE, rights={"M0": Rights.RW})
    return SimTopology(
        masters=[MasterSpec("M0", "LF0")],
        slaves=[SlaveSpec("bram", SHARED_BASE, SHARED_BASE + SHARED_SIZE)],
        firewalls=[FirewallSpec("LF0", "local", [pol])],
        constants=Constants(strict_4n=strict_4n, mode=mode),
    ).validate()


# scenario -> (builder, item); each is a single 1-word access
LATENCY_CASES: dict[str, tuple[str, TraceItem]] = {
    "s0": ("single", TraceItem("M0", Kind.WRITE, SHARED_BASE, payload=[0xCAFE0000])),
    "s1": ("case", TraceItem("MB1", Kind.READ, SHARED_BASE)),
    "s2": ("case", TraceItem("MB1", Kind.WRITE, section_base("D11"), payload=[0xCAFE0002])),
    "s3": ("case", TraceItem("MB1", Kind.WRITE, section_base("D12"), payload=[0xCAFE0003])),
    "s4": ("case", TraceItem("MB2", Kind.WRITE, section_base("D21"), payload=[0xCAFE0004])),
}


def latency_case(name: str, words: int = 1, **kw: Any) -> tuple[SimTopology, list[TraceItem]]:
    kind, item = LATENCY_CASES[name]
    topo = build_single_firewall(**kw) if kind == "single" else build_case_study(**kw)
    it = TraceItem(item.master, item.kind, item.address, words=words,
                   payload=[(item.payload[0] + i) for i in range(words)] if item.payload else None,
                   label=name)
    return topo, [it]


# --------------------------------------------------------------------------- traces


@dataclass
class AppTrace:
    name: str
    items: list[TraceItem] = field(default_factory=list)
    note: str = ""

    def __len__(self) -> int:
        return len(self.items)

    def external_accesses(self) -> int:
        lo, hi = EXT_BASE, EXT_BASE + EXT_SIZE
        return sum(1 for it in self.items if lo <= it.address < hi)

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "items": [it.as_dict() for it in self.items]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "AppTrace":
        items = d.get("items", []) if isinstance(d, dict) else d
        name = d.get("name", "trace") if isinstance(d, dict) else "trace"
        return cls(name, [TraceItem.from_dict(x) for x in items])


APP_ACCESS_COUNTS = {"picProc": 34_063_298, "picDRM": 9_642_055, "picDec": 4_736_966}


def _issued(app: str, scale: float, hit_rate: float) -> int:
    if not 0 <= hit_rate < 1:
        raise ValueError("hit_rate must lie in [0, 1)")
    return max(1, round(APP_ACCESS_COUNTS[app] * scale * (1 - hit_rate)))


def _think(gap: int, hit_rate: float) -> int:
    # cache hits cost one cycle each and are folded into the think time
    return gap + (round(hit_rate / (1 - hit_rate)) if hit_rate else 0)


def pic_proc(scale: float = 1e-4, hit_rate: float = 0.0, gap: int = 8) -> AppTrace:
    """Encrypted image in D11 -> shared BRAM -> threshold IP -> result to D21."""
    ext = _issued("picProc", scale, hit_rate)
    chunks = max(1, math.ceil(ext / 3))
    g = _think(gap, hit_rate)
    d11, d21 = section_base("D11"), section_base("D21")
    items: list[TraceItem] = []
    for j in range(chunks):
        off = 16 * j
        pix = [MARKER[0], MARKER[1], j & 0xFFFFFFFF, (~j) & 0xFFFFFFFF]
        items.append(TraceItem("MB1", Kind.WRITE, d11 + off, payload=pix, gap=g))
        items.append(TraceItem("MB1", Kind.READ, d11 + off, words=4, gap=g))
        items.append(TraceItem("MB2", Kind.WRITE, SHARED_BASE + off % SHARED_SIZE,
                               payload=[w ^ 0x5A5A5A5A for w in pix], gap=g))
        items.append(TraceItem("MB1", Kind.READ, SHARED_BASE + off % SHARED_SIZE, words=4, gap=g))
        items.append(TraceItem("MB1", Kind.WRITE, IP_BASE + off % IP_SIZE, payload=pix[:2], gap=g))
        items.append(TraceItem("MB2", Kind.WRITE, d21 + off, payload=[j, j + 1, j + 2, j + 3], gap=g))
    return AppTrace("picProc", items, f"{chunks} image chunks")


def pic_drm(scale: float = 1e-4, hit_rate: float = 0.0, gap: int = 8) -> AppTrace:
    """MB1 checks a licence held in D12 while MB2 shuffles data through C21/D21."""
    ext = _issued("picDRM", scale, hit_rate)
    g = _think(gap, hit_rate)
    d12, c21, d21 = section_base("D12"), section_base("C21"), section_base("D21")
    items = [TraceItem("MB1", Kind.WRITE, d12, payload=[0x4C494345, 0x4E534501, 0, 1], gap=g)]
    for j in range(max(0, ext - 1)):
        if j % 2 == 0:
            items.append(TraceItem("MB1", Kind.READ, d12 + 4 * (j % 4), gap=g))
        elif j % 4 == 1:
            items.append(TraceItem("MB2", Kind.READ, c21 + 4 * j, words=2, gap=g))
        else:
            items.append(TraceItem("MB2", Kind.WRITE, d21 + 4 * j, payload=[j, ~j & 0xFFFFFFFF], gap=g))
    return AppTrace("picDRM", items)


# calibration: 59 % two-word reads from D21, 41 % one-word writes to shared BRAM;
# every item spans exactly 200 unprotected cycles (transfer + think time)
DEC_TWO_WORD = Fraction(59, 100)
DEC_PERIOD = 200


def pic_dec(scale: float = 1e-4, hit_rate: float = 0.0, calibrated: bool = True,
            n: Optional[int] = None, gap: int = 8) -> AppTrace:
    """Single-processor software deciphering (MB2 only, no cryptographic work)."""
    k = n if n is not None else _issued("picDec", scale, hit_rate)
    d21 = section_base("D21")
    items = []
    for i in range(k):
        two = math.floor((i + 1) * DEC_TWO_WORD) > math.floor(i * DEC_TWO_WORD)
        words = 2 if two else 1
        think = DEC_PERIOD - words if calibrated else _think(gap, hit_rate)
        if two:
            items.append(TraceItem("MB2", Kind.READ, d21 + 8 * i, words=2, gap=think))
        else:
            items.append(TraceItem("MB2", Kind.WRITE, SHARED_BASE + (4 * i) % SHARED_SIZE,
                                   payload=[i & 0xFFFFFFFF], gap=think))
    return AppTrace("picDec", items, "calibrated" if calibrated else "")


# --------------------------------------------------------------------------- attacks

ATTACK_KINDS = ("A1_memory_tamper", "A2_bus_probe", "A3_rogue_master", "S1_packet_swap", "S2_malicious_ip")


@dataclass
class AttackScript:
    """A hostile action scheduled at ``cycle``.

    params by kind:
      A1_memory_tamper  address, data (bytes) | flip (bit index) | replay_from (cycle to capture)
      A2_bus_probe      address (optional filter), overwrite (bytes, optional)
      A3_rogue_master   master, items (list of TraceItem)
      S1_packet_swap    address, payload (words written over the packet)
      S2_malicious_ip   master, items
    """

    kind: str
    cycle: int = 0
    params: dict[str, Any] = field(default_factory=dict)
    log: list[tuple] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")


def _cf(sim: Simulator):
    cfs = sim.crypto_firewalls
    if not cfs:
        raise ValueError("attack needs a cryptographic firewall in the topology")
    return cfs[0]


def inject(attack: AttackScript, sim: Simulator) -> AttackScript:
    """Schedule ``attack`` on ``sim``; returns the script (its ``log`` fills as it runs)."""
    p = attack.params
    kind = attack.kind

    def note(s: Simulator, what: str, **detail: Any) -> None:
        from .bus import Event

        attack.log.append((s.cycle, what, detail))
        s._emit(Event(s.cycle, "attacker", "attack", None, {"attack": kind, "action": what, **detail}))

    if kind in ("A1_memory_tamper", "S1_packet_swap"):
        addr = p["address"]
        if "replay_from" in p:
            saved: dict[str, bytes] = {}

            def capture(s: Simulator) -> None:
                saved["data"] = _cf(s).memory.read_bytes(addr, p.get("length", 16))
                note(s, "capture", address=f"0x{addr:08x}")

            sim.at(p["replay_from"], capture)

            def replay(s: Simulator) -> None:
                _cf(s).tamper(addr, saved["data"])
                note(s, "replay", address=f"0x{addr:08x}")

            sim.at(attack.cycle, replay)
        else:
            def tamper(s: Simulator) -> None:
                cf = _cf(s)
                if "payload" in p:
                    data = b"".join(w.to_bytes(4, "big") for w in p["payload"])
                elif "data" in p:
                    data = bytes(p["data"])
                else:
                    bit = p.get("flip", 0)
                    cur = bytearray(cf.memory.read_bytes(addr, 4))
                    cur[bit // 8 % 4] ^= 1 << (bit % 8)
                    data = bytes(cur)
                cf.tamper(addr, data)
                note(s, "tamper", address=f"0x{addr:08x}", data=data.hex())

            sim.at(attack.cycle, tamper)
    elif kind == "A2_bus_probe":
        target = p.get("address")
        overwrite = p.get("overwrite")

        def arm(s: Simulator) -> None:
            def probe(direction: str, address: int, data: bytes) -> Optional[bytes]:
                if target is not None and not (address <= target < address + len(data)):
                    return None
                attack.log.append((s.cycle, "tap", {"dir": direction, "address": address, "data": data.hex()}))
                if overwrite is not None and direction == p.get("overwrite_dir", "write"):
                    return bytes(overwrite)[: len(data)].ljust(len(data), b"\0")
                return None

            _cf(s).probes.append(probe)
            note(s, "probe_armed")

        sim.at(attack.cycle, arm)
    else:
        master = p.get("master", "ROGUE" if kind == "A3_rogue_master" else "EVIL_IP")
        items: Sequence[TraceItem] = p.get("items", ())

        def attach(s: Simulator) -> None:
            if master not in s.master_names:
                s.add_master(master)
            s.load_trace([TraceItem(master, it.kind, it.address, it.words, it.payload, it.gap,
                                    it.at, it.size, it.label, it.follow) for it in items])
            note(s, "attach", master=master, transactions=len(items))

        sim.at(attack.cycle, attach)
    return attack


def plaintext_hits(sim: Simulator, needle: bytes = b"".join(w.to_bytes(4, "big") for w in MARKER)) -> list[int]:
    """Addresses inside confidentiality sections where ``needle`` appears in clear."""
    hits = []
    for cf in sim.crypto_firewalls:
        for p in cf.policies:
            if p.cmode:
                hits += cf.memory.find(needle, p.range_low, p.range_high)
    return sorted(hits)


# --------------------------------------------------------------------------- comparison


@dataclass
class ModeRun:
    mode: str
    makespan: int
    firewall_cycles: int
    stall_cycles: int
    checked: int
    transactions: int
    blocked: int

    def as_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _makespan(sim: Simulator) -> int:
    return max((c.done_cycle for c in sim.completions), default=-1) + 1


def run_mode(trace: AppTrace, topology: SimTopology, mode: str) -> tuple[ModeRun, Simulator]:
    """Run ``trace`` on ``topology`` in ``mode`` ("baseline" strips every firewall)."""
    if mode == "baseline":
        topo = topology.without_firewalls()
    else:
        topo = topology.with_constants(mode=mode)
    sim = Simulator(topo, trace.items).run()
    run = ModeRun(
        mode=mode,
        makespan=_makespan(sim),
        # freeze time depends on when the monitor reacts, so it is kept apart
        firewall_cycles=sum(c.ledger.total - c.ledger.update_stall for c in sim.completions),
        stall_cycles=sum(c.ledger.update_stall for c in sim.completions),
        checked=sum(1 for c in sim.completions if c.checked),
        transactions=len(sim.completions),
        blocked=sum(1 for c in sim.completions if c.status == "blocked"),
    )
    return run, sim


@dataclass
class Comparison:
    trace: str
    baseline: ModeRun
    distributed: ModeRun
    centralized: ModeRun

    @staticmethod
    def _overhead(run: ModeRun, base: ModeRun) -> Fraction:
        if base.makespan == 0:
            return Fraction(0)
        return Fraction(run.makespan - base.makespan, base.makespan)

    @property
    def overhead_distributed(self) -> Fraction:
        return self._overhead(self.distributed, self.baseline)

    @property
    def overhead_centralized(self) -> Fraction:
        return self._overhead(self.centralized, self.baseline)

    @property
    def gain(self) -> Fraction:
        """Share of the centralized overhead that the distributed layout avoids."""
        oc = self.overhead_centralized
        if oc == 0:
            return Fraction(0)
        return (oc - self.overhead_distributed) / oc

    @property
    def difference(self) -> int:
        return self.centralized.firewall_cycles - self.distributed.firewall_cycles

    def as_dict(self) -> dict[str, Any]:
        def pct(f: Fraction) -> float:
            return round(float(f) * 100, 4)

        return {
            "trace": self.trace,
            "baseline": self.baseline.as_dict(),
            "distributed": self.distributed.as_dict(),
            "centralized": self.centralized.as_dict(),
            "overhead_distributed_pct": pct(self.overhead_distributed),
            "overhead_centralized_pct": pct(self.overhead_centralized),
            "overhead_distributed": str(self.overhead_distributed),
            "overhead_centralized": str(self.overhead_centralized),
            "gain_pct": pct(self.gain),
            "difference": self.difference,
            "expected_difference": self.distributed.checked * Constants().central_roundtrip,
        }


def run_comparison(trace: AppTrace, topology: Optional[SimTopology] = None) -> Comparison:
    topology = topology or build_case_study()
    base, _ = run_mode(trace, topology, "baseline")
    dist, _ = run_mode(trace, topology, "distributed")
    cent, _ = run_mode(trace, topology, "centralized")
    return Comparison(trace.name, base, dist, cent)


# --------------------------------------------------------------------------- area

_AREA_LOCAL = (138, 123, 293)
_AREA_CRYPTO = (1304, 2161, 2689)


def estimate_area(x: int, y: int) -> tuple[int, int, int]:
    """(slices, registers, LUTs) for ``x`` Local and ``y`` Cryptographic Firewalls."""
    if x < 0 or y < 0:
        raise ValueError("firewall counts must be non-negative")
    return tuple(a * x + b * y for a, b in zip(_AREA_LOCAL, _AREA_CRYPTO))  # type: ignore[return-value]
