"""Deterministic cycle-stepped simulation kernel.

Each master has at most one outstanding transaction. A transaction is
admitted once every firewall on its path is ready (not frozen) and every
resource on its path (firewalls and target slave) is idle, then walks a
fixed list of phases, one cycle at a time::

    write:  bus beats -> [manager] -> check block -> [crypto] -> commit
    read:   [crypto] -> [manager] -> check block -> bus beats

The initiator-side and target-side firewalls evaluate the same address
phase in lockstep, so the check block costs ``2 + 4N`` cycles however many
firewalls sit on the path. A phase owned by a frozen firewall does not
advance; the lost cycle is charged to ``update_stall``.
"""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional, Sequence, Union

from .bus import (
    LEDGER_STAGES,
    CycleLedger,
    Event,
    Kind,
    Memory,
    SimTopology,
    SlaveSpec,
    Transaction,
)
from .crypto import AuthFailure
from .firewall_crypto import CryptoFirewall
from .firewall_local import CheckSession, LocalFirewall, check_schedule
from .flags import FlagSet
from .monitor import UpdateProcessor, UpdateReport

__all__ = [
    "TraceItem",
    "Completion",
    "Simulator",
    "freeze_ready",
    "release_ready",
    "simulate",
]


@dataclass
class TraceItem:
    """One entry of a master's program.

    ``gap`` idle cycles separate it from the previous completion of the same
    master. ``follow=(label, i)`` takes the address from word ``i`` of an
    earlier read labelled ``label`` (pointer chasing).
    """

    master: str
    kind: Kind
    address: int = 0
    words: int = 1
    payload: Optional[list[int]] = None
    gap: int = 0
    at: int = 0
    size: int = 4
    label: str = ""
    follow: Optional[tuple[str, int]] = None

    def __post_init__(self) -> None:
        self.kind = Kind(self.kind)
        if self.payload is not None:
            self.words = len(self.payload)
        if self.words < 1:
            raise ValueError("trace item needs at least one word")

    def as_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"master": self.master, "kind": self.kind.value,
                             "address": f"0x{self.address:08x}", "words": self.words}
        if self.payload is not None:
            d["payload"] = [f"0x{w:08x}" for w in self.payload]
        for k in ("gap", "at"):
            if getattr(self, k):
                d[k] = getattr(self, k)
        if self.size != 4:
            d["size"] = self.size
        if self.label:
            d["label"] = self.label
        if self.follow:
            d["follow"] = list(self.follow)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TraceItem":
        def num(v: Any) -> int:
            return v if isinstance(v, int) else int(v, 0)

        payload = d.get("payload")
        return cls(
            master=d["master"],
            kind=Kind(d.get("kind", "write")),
            address=num(d.get("address", 0)),
            words=int(d.get("words", 1)),
            payload=[num(w) for w in payload] if payload is not None else None,
            gap=int(d.get("gap", 0)),
            at=int(d.get("at", 0)),
            size=int(d.get("size", 4)),
            label=d.get("label", ""),
            follow=tuple(d["follow"]) if d.get("follow") else None,
        )


@dataclass
class Completion:
    seq: int
    master: str
    kind: str
    address: int
    n_words: int
    label: str
    status: str
    issue_cycle: int
    done_cycle: int
    ledger: CycleLedger = field(default_factory=CycleLedger)
    bus_cycles: int = 0
    wait_cycles: int = 0
    flags: list[str] = field(default_factory=list)
    blocked_by: list[str] = field(default_factory=list)
    data: list[int] = field(default_factory=list)
    path: list[str] = field(default_factory=list)
    versions: dict[str, int] = field(default_factory=dict)
    arrived_frozen: dict[str, int] = field(default_factory=dict)

    @property
    def latency(self) -> int:
        return self.done_cycle - self.issue_cycle + 1

    @property
    def checked(self) -> bool:
        return bool(self.path)

    def as_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "master": self.master,
            "kind": self.kind,
            "address": f"0x{self.address:08x}",
            "words": self.n_words,
            "label": self.label,
            "status": self.status,
            "flags": list(self.flags),
            "blocked_by": list(self.blocked_by),
            "path": list(self.path),
            "issue_cycle": self.issue_cycle,
            "done_cycle": self.done_cycle,
            "latency": self.latency,
            "ledger": self.ledger.as_dict(),
            "bus_cycles": self.bus_cycles,
            "wait_cycles": self.wait_cycles,
            "data": [f"0x{w:08x}" for w in self.data],
        }


@dataclass
class _Phase:
    stage: str
    cycles: int
    op: str
    word: int = 0
    owners: tuple = ()


@dataclass
class _Txn:
    seq: int
    txn: Transaction
    item: TraceItem
    issue: int
    slave: Optional["_Slave"]
    path: list[LocalFirewall]
    ledger: CycleLedger = field(default_factory=CycleLedger)
    phases: deque = field(default_factory=deque)
    remaining: int = 0
    bus_cycles: int = 0
    wait: int = 0
    stall_run: int = 0
    sessions: list[CheckSession] = field(default_factory=list)
    read_data: list[int] = field(default_factory=list)
    arrived_frozen: dict[str, int] = field(default_factory=dict)


class _Slave:
    def __init__(self, spec: SlaveSpec):
        self.spec = spec
        self.name = spec.name
        self.memory = Memory(spec.low, spec.high)


def freeze_ready(fw: LocalFirewall) -> None:
    """Hold the firewall interface's outgoing ready lines low."""
    fw.interface.freeze()


def release_ready(fw: LocalFirewall) -> bool:
    return fw.interface.release()


class Simulator:
    def __init__(self, topology: SimTopology, trace: Iterable[TraceItem] = ()):
        self.topology = topology.validate()
        c = topology.constants
        self.constants = c
        self.master_names = [m.name for m in topology.masters]
        self.slaves = {s.name: _Slave(s) for s in topology.slaves}
        self.firewalls: dict[str, LocalFirewall] = {}
        guarded = {s.firewall: s.name for s in topology.slaves if s.firewall}
        for idx, spec in enumerate(topology.firewalls, start=1):
            if spec.kind == "crypto":
                fw: LocalFirewall = CryptoFirewall(
                    spec.name, spec.policies, self.master_names,
                    memory=self.slaves[guarded[spec.name]].memory, fw_id=idx,
                    critical=spec.critical, strict_4n=c.strict_4n, capacity=spec.capacity,
                    tag_capacity_bits=c.tag_capacity_bits,
                )
            else:
                fw = LocalFirewall(spec.name, spec.policies, self.master_names, idx,
                                   spec.critical, c.strict_4n, spec.capacity)
            self.firewalls[spec.name] = fw
        self.master_fw = {m.name: self.firewalls[m.firewall] for m in topology.masters if m.firewall}
        self.slave_fw = {s.name: self.firewalls[s.firewall] for s in topology.slaves if s.firewall}
        self.events: list[Event] = []
        self.updates = UpdateProcessor(list(self.firewalls.values()), c.software_latency, self._emit)
        self.cycle = 0
        self.completions: list[Completion] = []
        self.delivered: list[tuple[str, int, int, int, int]] = []
        self._queues: dict[str, deque] = {m: deque() for m in self.master_names}
        self._ready_at: dict[str, int] = {m: 0 for m in self.master_names}
        self._pending: dict[str, _Txn] = {}
        self._active: dict[str, _Txn] = {}
        self._busy: set[str] = set()
        self._callbacks: dict[int, list[Callable[["Simulator"], None]]] = {}
        self._seq = 0
        self._read_results: dict[tuple[str, str], list[int]] = {}
        self.load_trace(trace)

    # ------------------------------------------------------------------ setup

    def load_trace(self, items: Iterable[TraceItem]) -> None:
        for it in items:
            if it.master not in self._queues:
                raise KeyError(f"trace refers to unknown master {it.master!r}")
            self._queues[it.master].append(it)

    def at(self, cycle: int, fn: Callable[["Simulator"], None]) -> None:
        """Run ``fn(sim)`` at the start of ``cycle``."""
        self._callbacks.setdefault(cycle, []).append(fn)

    def add_master(self, name: str) -> None:
        """Attach a master with no firewall of its own (rogue or malicious IP)."""
        if name in self._queues:
            raise ValueError(f"master {name!r} already exists")
        self.master_names.append(name)
        self._queues[name] = deque()
        self._ready_at[name] = self.cycle

    def firewall(self, name: str) -> LocalFirewall:
        return self.firewalls[name]

    @property
    def crypto_firewalls(self) -> list[CryptoFirewall]:
        return [f for f in self.firewalls.values() if isinstance(f, CryptoFirewall)]

    def freeze(self, name: str) -> None:
        fw = self.firewalls[name]
        freeze_ready(fw)
        self._emit(Event(self.cycle, name, "freeze", None, {"firewall_id": fw.fw_id}))

    def release(self, name: str) -> None:
        fw = self.firewalls[name]
        seen = release_ready(fw)
        self._emit(Event(self.cycle, name, "release", None,
                         {"firewall_id": fw.fw_id, "ready_event": int(seen), "version": fw.version}))

    def request_update(self, name: str, words=None, mode=None, cycle: Optional[int] = None) -> UpdateReport:
        return self.updates.request_update(self.firewalls[name], self.cycle if cycle is None else cycle,
                                           words, mode)

    # ------------------------------------------------------------------ running

    def _emit(self, ev: Event) -> None:
        self.events.append(ev)

    def idle(self) -> bool:
        return (
            not self._active
            and not self._pending
            and not any(self._queues.values())
            and not self.updates.busy
            and not self._callbacks
        )

    def step(self) -> list[Event]:
        c = self.cycle
        start = len(self.events)
        for fn in self._callbacks.pop(c, []):
            fn(self)
        self.updates.step(c)
        self._admit(c)
        for name in self.master_names:
            t = self._active.get(name)
            if t is not None:
                self._advance(t, c)
        self.cycle += 1
        return self.events[start:]

    def _next_interesting(self) -> Optional[int]:
        cands = []
        for m, q in self._queues.items():
            if q:
                cands.append(max(self._ready_at[m] + q[0].gap, q[0].at))
        nd = self.updates.next_due()
        if nd is not None:
            cands.append(nd)
        if self._callbacks:
            cands.append(min(self._callbacks))
        return min(cands) if cands else None

    def run(self, max_cycles: Optional[int] = None) -> "Simulator":
        while not self.idle():
            if max_cycles is not None and self.cycle >= max_cycles:
                break
            if not self._active and not self._pending:
                nxt = self._next_interesting()
                if nxt is not None and nxt > self.cycle:
                    self.cycle = nxt if max_cycles is None else min(nxt, max_cycles)
                    continue
            self.step()
        return self

    def run_until(self, cycle: int) -> "Simulator":
        while self.cycle < cycle:
            self.step()
        return self

    # ------------------------------------------------------------------ admission

    def _path(self, master: str, slave: Optional[_Slave]) -> list[LocalFirewall]:
        path = []
        if master in self.master_fw:
            path.append(self.master_fw[master])
        if slave is not None and slave.name in self.slave_fw:
            path.append(self.slave_fw[slave.name])
        return path

    def _open(self, master: str, item: TraceItem, c: int) -> Optional[_Txn]:
        address = item.address
        if item.follow is not None:
            label, idx = item.follow
            src = self._read_results.get((master, label))
            if src is None or idx >= len(src):
                self._seq += 1
                comp = Completion(self._seq, master, item.kind.value, 0, item.words, item.label,
                                  "skipped", c, c)
                self.completions.append(comp)
                self._emit(Event(c, master, "skip", self._seq, {"follow": label}))
                self._ready_at[master] = c + 1
                return None
            address = src[idx]
        self._seq += 1
        seq = self._seq
        payload = item.payload if item.payload is not None else [0] * item.words
        txn = Transaction(master, address, list(payload), item.kind, size=item.size,
                          txn_id=seq if item.kind is Kind.READ else 0, label=item.label)
        spec = self.topology.decode(address)
        slave = self.slaves[spec.name] if spec is not None else None
        t = _Txn(seq, txn, item, c, slave, self._path(master, slave))
        self._emit(Event(c, master, "issue", seq, {
            "kind": txn.kind.value, "address": f"0x{address:08x}", "words": txn.n_words,
            "target": slave.name if slave else None, "label": item.label,
        }))
        return t

    def _admit(self, c: int) -> None:
        for m in self.master_names:
            if m in self._active:
                continue
            t = self._pending.get(m)
            if t is None:
                q = self._queues[m]
                if not q:
                    continue
                item = q[0]
                if c < max(self._ready_at[m] + item.gap, item.at):
                    continue
                q.popleft()
                t = self._open(m, item, c)
                if t is None:
                    continue
                if t.slave is None and not t.path:
                    self._finish(t, c, "decode_error")
                    continue
                self._pending[m] = t
            frozen = [fw for fw in t.path if fw.frozen]
            if frozen:
                t.ledger.update_stall += 1
                t.stall_run += 1
                for fw in frozen:
                    fw.interface.note_ready_edge()
                    t.arrived_frozen.setdefault(fw.name, fw.version)
                continue
            res = {fw.name for fw in t.path}
            if t.slave is not None:
                res.add("slave:" + t.slave.name)
            if res & self._busy:
                t.wait += 1
                continue
            self._flush_stall(t, c)
            self._busy |= res
            del self._pending[m]
            self._build(t)
            self._active[m] = t
            self._emit(Event(c, m, "admit", t.seq, {"path": [fw.name for fw in t.path]}))

    def _build(self, t: _Txn) -> None:
        c = self.constants
        txn = t.txn
        owners = tuple(t.path)
        cf = next((fw for fw in t.path if isinstance(fw, CryptoFirewall)), None)
        phases: list[_Phase] = []
        check = []
        if t.path:
            if c.mode == "centralized":
                check.append(_Phase("manager", c.central_roundtrip, "manager"))
            for s in check_schedule(txn.n_words, c.strict_4n):
                check.append(_Phase(s.stage, s.cycles, s.op, s.word, owners))
        beats = [_Phase("bus", c.raw_hop_cost, "beat", i, owners) for i in range(txn.n_words)]
        if txn.is_read:
            if cf is not None:
                phases.append(_Phase("crypto", cf.crypto_cycles(txn), "crypto", 0, (cf,)))
            phases += check
            phases += beats
        else:
            phases += beats
            phases += check
            if cf is not None:
                phases.append(_Phase("crypto", cf.crypto_cycles(txn), "crypto", 0, (cf,)))
            else:
                phases.append(_Phase("commit", 0, "commit"))
        t.phases = deque(phases)
        t.sessions = [fw.open(txn) for fw in t.path]
        t.remaining = t.phases[0].cycles if t.phases else 0

    # ------------------------------------------------------------------ execution

    def _flush_stall(self, t: _Txn, c: int) -> None:
        if t.stall_run:
            self._emit(Event(c, t.txn.master, "stall", t.seq, {"stage": "update_stall"}, t.stall_run))
            t.stall_run = 0

    def _advance(self, t: _Txn, c: int) -> None:
        if self._run_instant(t, c):
            return
        ph = t.phases[0]
        if any(fw.frozen for fw in ph.owners):
            t.ledger.update_stall += 1
            t.stall_run += 1
            for fw in ph.owners:
                if fw.frozen:
                    fw.interface.note_ready_edge()
                    s = t.sessions[t.path.index(fw)]
                    if not s.records:
                        t.arrived_frozen.setdefault(fw.name, fw.version)
            return
        self._flush_stall(t, c)
        t.remaining -= 1
        if t.remaining > 0:
            return
        t.phases.popleft()
        if ph.stage == "bus":
            t.bus_cycles += ph.cycles
        else:
            t.ledger.charge(ph.stage, ph.cycles)
        if self._execute(t, ph, c):
            return
        if t.phases:
            t.remaining = t.phases[0].cycles
        self._run_instant(t, c)

    def _run_instant(self, t: _Txn, c: int) -> bool:
        """Execute zero-cycle phases at the head; True once the transaction is finished."""
        while t.phases and t.phases[0].cycles == 0:
            ph = t.phases.popleft()
            if self._execute(t, ph, c):
                return True
            if t.phases:
                t.remaining = t.phases[0].cycles
        if not t.phases:
            self._finish(t, c, "ok")
            return True
        return False

    def _stage_event(self, t: _Txn, ph: _Phase, c: int, **detail) -> None:
        d = {"stage": ph.stage, "op": ph.op, "word": ph.word}
        d.update(detail)
        self._emit(Event(c, t.txn.master, "stage", t.seq, d, ph.cycles))

    def _execute(self, t: _Txn, ph: _Phase, c: int) -> bool:
        """Apply a completed phase's effect; True if the transaction ended."""
        txn = t.txn
        op = ph.op
        if op in ("decision", "lookup", "read", "check", "sync"):
            from .firewall_local import Step

            step = Step(ph.stage, ph.cycles, op, ph.word)
            failures: list[FlagSet] = []
            for s in t.sessions:
                f = s.apply(step)
                if op == "check":
                    rec = s.records[-1]
                    self._emit(Event(c, s.fw.name, "fw_check", t.seq, rec))
                if f is not None:
                    failures.append(f)
            self._stage_event(t, ph, c)
            if failures:
                return self._block(t, c, failures)
            return False
        if op == "manager":
            self._stage_event(t, ph, c)
            return False
        if op == "crypto":
            cf = ph.owners[0]
            policy = cf.policy_for(txn.address)
            try:
                if txn.is_read:
                    t.read_data = cf.fetch_read(txn, policy) if policy is not None else []
                else:
                    if t.slave is None:
                        return self._finish(t, c, "decode_error")
                    cf.commit_write(txn, policy)
                    for i, w in enumerate(txn.payload):
                        self.delivered.append((t.slave.name, t.seq, i, txn.word_address(i), w))
            except AuthFailure as exc:
                self._stage_event(t, ph, c, auth="fail")
                return self._block(t, c, [FlagSet(cf.fw_id, aF=True, firewall=cf.name)], str(exc))
            self._stage_event(t, ph, c, cmode=bool(policy and policy.cmode),
                              imode=bool(policy and policy.imode))
            return False
        if op == "commit":
            if t.slave is None:
                return self._finish(t, c, "decode_error")
            for i, w in enumerate(txn.payload):
                a = txn.word_address(i)
                t.slave.memory.write_word(a, w)
                self.delivered.append((t.slave.name, t.seq, i, a, w))
            return False
        if op == "beat":
            # valid is high for the whole phase; ready was high this cycle or we would have stalled
            detail = {"valid": 1, "ready": 1}
            if txn.is_read:
                if t.slave is None:
                    return self._finish(t, c, "decode_error")
                cf = next((fw for fw in t.path if isinstance(fw, CryptoFirewall)), None)
                if cf is not None:
                    w = t.read_data[ph.word]
                else:
                    w = t.slave.memory.read_word(txn.word_address(ph.word))
                    if len(t.read_data) <= ph.word:
                        t.read_data.append(w)
                self.delivered.append((txn.master, t.seq, ph.word, txn.word_address(ph.word), w))
                detail["data"] = f"0x{w:08x}"
            self._stage_event(t, ph, c, **detail)
            return False
        raise RuntimeError(f"unknown phase op {op!r}")

    def _block(self, t: _Txn, c: int, failures: list[FlagSet], why: str = "") -> bool:
        for f in failures:
            self._emit(Event(c, f.firewall, "fw_block", t.seq,
                             {"flags": f.names, "firewall_id": f.firewall_id, "why": why}))
            self.updates.raise_flags(f, c)
        self._finish(t, c, "blocked", failures)
        return True

    def _finish(self, t: _Txn, c: int, status: str, failures: Sequence[FlagSet] = ()) -> bool:
        for s in t.sessions:
            s.abort()
        self._flush_stall(t, c)
        m = t.txn.master
        self._active.pop(m, None)
        self._pending.pop(m, None)
        res = {fw.name for fw in t.path}
        if t.slave is not None:
            res.add("slave:" + t.slave.name)
        self._busy -= res
        versions: dict[str, int] = {}
        for s in t.sessions:
            for rec in s.records:
                versions[s.fw.name] = rec["version"]
        data = list(t.read_data) if (status == "ok" and t.txn.is_read) else []
        comp = Completion(
            seq=t.seq, master=m, kind=t.txn.kind.value, address=t.txn.address,
            n_words=t.txn.n_words, label=t.item.label, status=status, issue_cycle=t.issue,
            done_cycle=c, ledger=t.ledger, bus_cycles=t.bus_cycles, wait_cycles=t.wait,
            flags=sorted({n for f in failures for n in f.names}),
            blocked_by=[f.firewall for f in failures], data=data,
            path=[fw.name for fw in t.path], versions=versions,
            arrived_frozen=dict(t.arrived_frozen),
        )
        self.completions.append(comp)
        if status == "ok" and t.txn.is_read and t.item.label:
            self._read_results[(m, t.item.label)] = data
        self._ready_at[m] = c + 1
        self._emit(Event(c, m, "done", t.seq, {
            "status": status, "latency": comp.latency, "ledger_total": t.ledger.total,
            "flags": comp.flags,
        }))
        return True

    # ------------------------------------------------------------------ results

    def event_log(self) -> list[str]:
        return [e.to_json() for e in self.events]

    def charged_cycles(self, seq: Optional[int] = None):
        """Cycles charged in the event log to ``seq``, or a map for every transaction."""
        totals: dict[int, int] = defaultdict(int)
        for e in self.events:
            if e.txn is not None and (seq is None or e.txn == seq):
                totals[e.txn] += e.cycles
        return dict(totals) if seq is None else totals[seq]


def simulate(topology: SimTopology, trace: Iterable[TraceItem] = (), max_cycles: Optional[int] = None) -> Simulator:
    return Simulator(topology, trace).run(max_cycles)
