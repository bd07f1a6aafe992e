"""Monitoring IP and the update processor behind freeze-based policy updates.

Update timeline for a flag raised at cycle ``t`` (default software latency)::

    t+1            flags extracted into reg_i, firewall interface frozen
    t+3            interrupt delivered, recfgEn <- 1
    t+3+148        new configuration computed
    +1 per word    policy words written through the BRAM update port
    +1             recfgEn <- 0, interface released

i.e. ``152 + N`` cycles from the flag to the release.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable, Iterable, Optional, Sequence

from .bus import Event
from .flags import FlagSet
from .policy import Rights, SecurityPolicy, encode_policy_word

if TYPE_CHECKING:
    from .firewall_local import LocalFirewall

__all__ = [
    "SecurityMode",
    "apply_mode",
    "next_mode",
    "MonitorRegisters",
    "MonitorCapacityError",
    "UpdateReport",
    "UpdateProcessor",
    "EXTRACT_CYCLES",
    "INTERRUPT_CYCLES",
    "REACTIVATE_CYCLES",
    "DEFAULT_SOFTWARE_LATENCY",
    "MAX_FIREWALLS",
]

EXTRACT_CYCLES = 1
INTERRUPT_CYCLES = 2
REACTIVATE_CYCLES = 1
DEFAULT_SOFTWARE_LATENCY = 148
MAX_FIREWALLS = 10
_ALL_OK = 0b111


class MonitorCapacityError(ValueError):
    pass


class SecurityMode(str, Enum):
    NORMAL = "normal"
    READ_ONLY = "read_only"
    QUARANTINE = "quarantine"


def _downgrade(r: Rights, mode: SecurityMode) -> Rights:
    if mode is SecurityMode.QUARANTINE:
        return Rights.NONE
    if mode is SecurityMode.READ_ONLY:
        return Rights.RO if r.can_read else Rights.NONE
    return r


def apply_mode(policies: Iterable[SecurityPolicy], mode: SecurityMode) -> list[SecurityPolicy]:
    """Rights overlay for ``mode``; never grants what the stored policy denies."""
    mode = SecurityMode(mode)
    return [p.with_rights({m: _downgrade(r, mode) for m, r in p.rights.items()}) for p in policies]


def next_mode(mode: SecurityMode, critical: bool) -> Optional[SecurityMode]:
    """Mode after an attack is detected; ``None`` means a full system reset."""
    if mode is SecurityMode.QUARANTINE:
        return None
    if critical or mode is SecurityMode.READ_ONLY:
        return SecurityMode.QUARANTINE
    return SecurityMode.READ_ONLY


class MonitorRegisters:
    """reg_i per firewall (3 significant bits, idle high) and their concatenation reg_m."""

    def __init__(self) -> None:
        self.slots: dict[int, int] = {}
        self.regs: list[int] = []

    def register(self, fw_id: int) -> int:
        if fw_id in self.slots:
            return self.slots[fw_id]
        if len(self.regs) >= MAX_FIREWALLS:
            raise MonitorCapacityError(f"the monitoring IP manages at most {MAX_FIREWALLS} firewalls")
        self.slots[fw_id] = len(self.regs)
        self.regs.append(_ALL_OK)
        return self.slots[fw_id]

    def reg(self, fw_id: int) -> int:
        return self.regs[self.slots[fw_id]]

    def set_flags(self, flags: FlagSet) -> None:
        slot = self.slots[flags.firewall_id]
        self.regs[slot] &= flags.bits() | ~_ALL_OK

    def clear(self, fw_id: int) -> None:
        slot = self.slots[fw_id]
        self.regs[slot] |= _ALL_OK

    def clear_all(self) -> None:
        self.regs = [r | _ALL_OK for r in self.regs]

    @property
    def reg_m(self) -> int:
        m = 0xFFFFFFFF
        for slot, r in enumerate(self.regs):
            m &= ~(_ALL_OK << (3 * slot)) | ((r & _ALL_OK) << (3 * slot))
        return m & 0xFFFFFFFF

    def failing(self) -> list[int]:
        inv = {s: f for f, s in self.slots.items()}
        return sorted(inv[s] for s, r in enumerate(self.regs) if r & _ALL_OK != _ALL_OK)

    @property
    def interrupt_line(self) -> bool:
        return self.reg_m != 0xFFFFFFFF


@dataclass
class UpdateReport:
    firewall: str
    fw_id: int
    flag_cycle: int
    reason: str = "attack"
    freeze_cycle: Optional[int] = None
    interrupt_cycle: Optional[int] = None
    software_done: Optional[int] = None
    writes_done: Optional[int] = None
    release_cycle: Optional[int] = None
    n_words: int = 0
    old_mode: str = SecurityMode.NORMAL.value
    new_mode: Optional[str] = None
    ready_event: bool = False
    version: Optional[int] = None
    system_reset: bool = False

    @property
    def total(self) -> Optional[int]:
        if self.release_cycle is None:
            return None
        return self.release_cycle - self.flag_cycle

    @property
    def write_cycles(self) -> Optional[int]:
        if self.writes_done is None or self.software_done is None:
            return None
        return self.writes_done - self.software_done

    def steps(self) -> list[int]:
        """Durations of the five protocol steps."""
        return [
            self.freeze_cycle - self.flag_cycle,
            self.interrupt_cycle - self.freeze_cycle,
            self.software_done - self.interrupt_cycle,
            self.writes_done - self.software_done,
            self.release_cycle - self.writes_done,
        ]

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["total"] = self.total
        return d


@dataclass
class _Job:
    fw: "LocalFirewall"
    report: UpdateReport
    words: Optional[list[tuple[int, int]]] = None
    target_mode: Optional[SecurityMode] = None
    write_index: int = 0
    phase: str = "queued"


class UpdateProcessor:
    """Monitoring IP plus the trusted update processor, stepped once per cycle.

    Firewalls awaiting service are handled one at a time in ascending
    firewall id order. A firewall with several pending updates stays frozen
    until the last of them is written.
    """

    def __init__(
        self,
        firewalls: Sequence["LocalFirewall"],
        software_latency: int = DEFAULT_SOFTWARE_LATENCY,
        emit: Optional[Callable[[Event], None]] = None,
    ):
        self.firewalls = {fw.fw_id: fw for fw in firewalls}
        self.software_latency = software_latency
        self.registers = MonitorRegisters()
        for fw_id in sorted(self.firewalls):
            self.registers.register(fw_id)
        self.modes: dict[int, SecurityMode] = {i: SecurityMode.NORMAL for i in self.firewalls}
        self._emit = emit or (lambda e: None)
        self._extract: dict[int, list[tuple[FlagSet, Optional[_Job]]]] = {}
        self._interrupts: dict[int, list[_Job]] = {}
        self._queue: list[_Job] = []
        self._current: Optional[_Job] = None
        self._due = 0
        self.reports: list[UpdateReport] = []
        self.resets = 0
        self.interrupt_count = 0

    # --- inputs ---

    def raise_flags(self, flags: FlagSet, cycle: int) -> None:
        """Record a firewall error raised at ``cycle``; extraction happens next cycle."""
        if flags.firewall_id not in self.firewalls:
            raise KeyError(f"firewall {flags.firewall_id} is not registered with the monitor")
        self._extract.setdefault(cycle + EXTRACT_CYCLES, []).append((flags, None))

    def request_update(
        self,
        fw: "LocalFirewall",
        cycle: int,
        words: Optional[Sequence[tuple[int, int]]] = None,
        mode: Optional[SecurityMode] = None,
    ) -> UpdateReport:
        """Start an update of ``fw`` as if its flags had been raised at ``cycle``.

        ``words`` are ``(location, policy_word)`` pairs; by default the
        policies for ``mode`` (or the current mode) are rewritten.
        """
        report = UpdateReport(fw.name, fw.fw_id, cycle, reason="manual",
                              old_mode=self.modes[fw.fw_id].value)
        job = _Job(fw, report, list(words) if words is not None else None,
                   SecurityMode(mode) if mode is not None else self.modes[fw.fw_id])
        self._extract.setdefault(cycle + EXTRACT_CYCLES, []).append((None, job))
        return report

    # --- state ---

    @property
    def busy(self) -> bool:
        return bool(self._current or self._queue or self._extract or self._interrupts)

    def next_due(self) -> Optional[int]:
        """Earliest cycle at which this component has work, if any."""
        cands = list(self._extract) + list(self._interrupts)
        if self._current is not None:
            cands.append(self._due)
        elif self._queue:
            return -1
        return min(cands) if cands else None

    def mode(self, fw_id: int) -> SecurityMode:
        return self.modes[fw_id]

    # --- per-cycle behavior ---

    def step(self, cycle: int) -> None:
        self._do_extract(cycle)
        self._do_interrupt(cycle)
        self._do_process(cycle)

    def _ev(self, cycle: int, fw: Optional["LocalFirewall"], kind: str, **detail) -> None:
        comp = "update_processor" if fw is None else fw.name
        if fw is not None:
            detail.setdefault("firewall_id", fw.fw_id)
        self._emit(Event(cycle, comp, kind, None, detail))

    def _queued(self, fw_id: int) -> bool:
        if self._current is not None and self._current.fw.fw_id == fw_id:
            return True
        return any(j.fw.fw_id == fw_id for j in self._queue) or any(
            j.fw.fw_id == fw_id for jobs in self._interrupts.values() for j in jobs
        )

    def _do_extract(self, cycle: int) -> None:
        items = self._extract.pop(cycle, None)
        if not items:
            return
        fresh: list[_Job] = []
        for flags, job in items:
            if flags is not None:
                fw = self.firewalls[flags.firewall_id]
                self.registers.set_flags(flags)
                self._ev(cycle, fw, "flag", flags=flags.names, reg_i=self.registers.reg(fw.fw_id),
                         reg_m=self.registers.reg_m)
                if self._queued(fw.fw_id) or any(j.fw is fw for j in fresh):
                    continue
                job = _Job(fw, UpdateReport(fw.name, fw.fw_id, cycle - EXTRACT_CYCLES,
                                            old_mode=self.modes[fw.fw_id].value))
            else:
                fw = job.fw
                self._ev(cycle, fw, "flag", flags=[], manual=True, reg_m=self.registers.reg_m)
            if not fw.interface.frozen:
                fw.interface.freeze()
                self._ev(cycle, fw, "freeze")
            job.report.freeze_cycle = cycle
            job.phase = "await_interrupt"
            fresh.append(job)
        if fresh:
            self._interrupts.setdefault(cycle + INTERRUPT_CYCLES, []).extend(fresh)

    def _do_interrupt(self, cycle: int) -> None:
        jobs = self._interrupts.pop(cycle, None)
        if not jobs:
            return
        self.interrupt_count += 1
        for j in jobs:
            j.report.interrupt_cycle = cycle
            j.phase = "queued"
        self._queue.extend(jobs)
        self._queue.sort(key=lambda j: j.fw.fw_id)
        self._ev(cycle, None, "interrupt", pending=[j.fw.fw_id for j in self._queue],
                 reg_m=self.registers.reg_m)

    def _start(self, job: _Job, cycle: int) -> None:
        fw = job.fw
        self._current = job
        fw.interface.set_recfg_en(True)
        if job.report.reason == "attack":
            target = next_mode(self.modes[fw.fw_id], fw.critical)
            if target is None:
                self._system_reset(cycle, fw)
                return
            job.target_mode = target
        job.report.new_mode = job.target_mode.value
        job.phase = "software"
        self._due = cycle + self.software_latency

    def _do_process(self, cycle: int) -> None:
        while True:
            if self._current is None:
                if not self._queue:
                    return
                self._start(self._queue.pop(0), cycle)
                if self._current is None:
                    continue
            job = self._current
            if cycle < self._due:
                return
            fw = job.fw
            if job.phase == "software":
                if job.words is None:
                    job.words = fw.policy_words(apply_mode(fw.policies, job.target_mode))
                job.report.software_done = cycle
                job.report.n_words = len(job.words)
                job.phase = "write"
                self._due = cycle + 1
                if not job.words:
                    self._finish_writes(job, cycle)
                return
            if job.phase == "write":
                loc, word = job.words[job.write_index]
                fw.write_policy_word(loc, word)
                job.write_index += 1
                self._ev(cycle, fw, "policy_write", location=loc, word=word, index=job.write_index)
                if job.write_index == len(job.words):
                    self._finish_writes(job, cycle)
                else:
                    self._due = cycle + 1
                return
            if job.phase == "reactivate":
                self._current = None
                job.report.release_cycle = cycle
                self.reports.append(job.report)
                if self._queued(fw.fw_id):
                    # another update for this firewall is pending: stay frozen
                    job.report.ready_event = fw.interface.ready_event
                    self._ev(cycle, fw, "handover", version=fw.version)
                    continue
                seen = fw.interface.release()
                self.registers.clear(fw.fw_id)
                job.report.ready_event = seen
                self._ev(cycle, fw, "release", ready_event=int(seen), version=fw.version,
                         reg_m=self.registers.reg_m)
                continue
            return

    def _finish_writes(self, job: _Job, cycle: int) -> None:
        fw = job.fw
        fw.version += 1
        old = self.modes[fw.fw_id]
        self.modes[fw.fw_id] = job.target_mode
        fw.mode = job.target_mode
        job.report.writes_done = cycle
        job.report.version = fw.version
        fw.interface.set_recfg_en(False)
        if job.target_mode is not old:
            self._ev(cycle, fw, "mode_change", old=old.value, new=job.target_mode.value)
        job.phase = "reactivate"
        self._due = cycle + REACTIVATE_CYCLES

    def _system_reset(self, cycle: int, culprit: "LocalFirewall") -> None:
        self.resets += 1
        for fw in self.firewalls.values():
            fw.restore_initial()
            fw.mode = SecurityMode.NORMAL
            if fw.interface.frozen:
                fw.interface.release()
        self.modes = {i: SecurityMode.NORMAL for i in self.firewalls}
        self.registers.clear_all()
        report = self._current.report
        report.system_reset = True
        report.new_mode = SecurityMode.NORMAL.value
        report.release_cycle = cycle
        self.reports.append(report)
        for j in self._queue:
            j.report.system_reset = True
            j.report.release_cycle = cycle
            self.reports.append(j.report)
        self._queue.clear()
        self._current = None
        self._ev(cycle, culprit, "system_reset")
