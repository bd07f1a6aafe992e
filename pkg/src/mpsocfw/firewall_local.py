"""Local Firewall: Firewall Interface plus Security Builder.

Cycle model per transaction of N 32-bit words::

    interface  1   decision module
    per word   1   Addr  (Correspondence Table lookup)
               1   Par   (policy word read from BRAM)
               2   Chk   (ARID test, then comparators)
    interface  1   synchronization module

so an allowed N-word transfer costs ``2 + 4N`` cycles. With ``strict_4n``
off, Addr and Par run once and only Chk repeats per word.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence, Union

from .bus import CycleLedger, HandshakeState, Transaction
from .flags import FlagSet
from .monitor import SecurityMode
from .policy import (
    DEFAULT_CAPACITY,
    NOT_FOUND,
    CorrespondenceTable,
    SecurityPolicy,
    decode_policy_word,
    encode_policy_word,
    load_policies,
)

__all__ = [
    "FsmState",
    "LEGAL_TRANSITIONS",
    "BuilderState",
    "CheckOutcome",
    "check_word",
    "FirewallInterface",
    "Step",
    "check_schedule",
    "Forward",
    "Block",
    "CheckSession",
    "LocalFirewall",
    "IllegalTransition",
]


class IllegalTransition(RuntimeError):
    pass


class FsmState(str, Enum):
    IDLE = "Idle"
    ADDR = "Addr"
    PAR = "Par"
    CHK = "Chk"
    OK = "OK"
    FAIL = "FAIL"


# OK -> Addr / OK -> Chk continue a multi-word transfer (strict / shared-policy)
LEGAL_TRANSITIONS = {
    FsmState.IDLE: {FsmState.ADDR},
    FsmState.ADDR: {FsmState.PAR},
    FsmState.PAR: {FsmState.CHK},
    FsmState.CHK: {FsmState.OK, FsmState.FAIL},
    FsmState.OK: {FsmState.IDLE, FsmState.ADDR, FsmState.CHK},
    FsmState.FAIL: {FsmState.IDLE},
}


@dataclass
class BuilderState:
    fsm_state: FsmState = FsmState.IDLE
    location: int = NOT_FOUND
    policy_word: Optional[int] = None
    history: list[FsmState] = field(default_factory=list)

    def goto(self, state: FsmState) -> None:
        if state not in LEGAL_TRANSITIONS[self.fsm_state]:
            raise IllegalTransition(f"{self.fsm_state.value} -> {state.value}")
        self.fsm_state = state
        self.history.append(state)


@dataclass(frozen=True)
class CheckOutcome:
    check_out: bool
    reason: Optional[str] = None


def check_word(txn: Transaction, policy: SecurityPolicy) -> CheckOutcome:
    """Compare one data word's access right and format against ``policy``."""
    is_read = txn.is_read
    rights_ok = policy.right_for(txn.master).permits(is_read)
    # ARSIZE for reads, AWSIZE for writes; both live in txn.size here
    format_ok = txn.size == policy.format
    if not rights_ok:
        return CheckOutcome(False, "rights")
    if not format_ok:
        return CheckOutcome(False, "format")
    return CheckOutcome(True)


class FirewallInterface:
    """Decision + synchronization front end with the freeze mechanism.

    While frozen the outgoing ready lines stay low; a ready edge seen on the
    input side is latched and becomes ``ready_event`` once ``recfg_en`` is set.
    """

    def __init__(self) -> None:
        self.handshake = HandshakeState()
        self.frozen = False
        self.recfg_en = False
        self.ready_event = False
        self.latched_edge = False

    @property
    def ready_out(self) -> bool:
        return not self.frozen

    def freeze(self) -> None:
        self.frozen = True
        self.handshake.arready = False
        self.handshake.awready = False
        self.handshake.wready = False
        self.handshake.rready = False

    def release(self) -> bool:
        """Lift the freeze; returns the readyEvent value seen at release."""
        seen = self.ready_event
        self.frozen = False
        self.recfg_en = False
        self.ready_event = False
        self.latched_edge = False
        self.handshake = HandshakeState()
        return seen

    def note_ready_edge(self) -> None:
        if not self.frozen:
            return
        self.latched_edge = True
        if self.recfg_en:
            self.ready_event = True

    def set_recfg_en(self, value: bool) -> None:
        self.recfg_en = value
        if value and self.latched_edge:
            self.ready_event = True


@dataclass(frozen=True)
class Step:
    stage: str
    cycles: int
    op: str
    word: int = 0


def check_schedule(n_words: int, strict_4n: bool = True) -> list[Step]:
    steps = [Step("interface", 1, "decision")]
    for i in range(n_words):
        if strict_4n or i == 0:
            steps.append(Step("table_lookup", 1, "lookup", i))
            steps.append(Step("policy_read", 1, "read", i))
        steps.append(Step("check", 2, "check", i))
    steps.append(Step("interface", 1, "sync"))
    return steps


@dataclass(frozen=True)
class Forward:
    payload: tuple[int, ...]


@dataclass(frozen=True)
class Block:
    flags: FlagSet
    reason: Optional[str] = None


class CheckSession:
    """Evaluation of one transaction by one firewall's Security Builder."""

    def __init__(self, fw: "LocalFirewall", txn: Transaction):
        self.fw = fw
        self.txn = txn
        self.location = NOT_FOUND
        self.word: Optional[int] = None
        self.records: list[dict] = []
        self.reason: Optional[str] = None
        fw.builder.location = NOT_FOUND
        fw.builder.policy_word = None

    def apply(self, step: Step) -> Optional[FlagSet]:
        fw, b = self.fw, self.fw.builder
        if step.op == "lookup":
            b.goto(FsmState.ADDR)
            self.location = fw.table.lookup(self.txn.word_address(step.word))
            b.location = self.location
        elif step.op == "read":
            b.goto(FsmState.PAR)
            self.word = fw.bram.get(self.location) if self.location != NOT_FOUND else None
            b.policy_word = self.word
        elif step.op == "check":
            b.goto(FsmState.CHK)
            if self.location == NOT_FOUND:
                outcome = CheckOutcome(False, "not_found")
            else:
                outcome = check_word(self.txn, fw.effective_policy(self.location, self.word))
            self.records.append({
                "firewall": fw.name,
                "word": step.word,
                "location": self.location,
                "version": fw.version,
                "check_out": int(outcome.check_out),
                "reason": outcome.reason,
            })
            if not outcome.check_out:
                b.goto(FsmState.FAIL)
                self.reason = outcome.reason
                if outcome.reason == "not_found":
                    return FlagSet(fw.fw_id, nF=True, firewall=fw.name)
                return FlagSet(fw.fw_id, cF=True, firewall=fw.name)
            b.goto(FsmState.OK)
        elif step.op == "sync":
            b.goto(FsmState.IDLE)
        return None

    def abort(self) -> None:
        b = self.fw.builder
        if b.fsm_state is not FsmState.IDLE:
            if b.fsm_state not in (FsmState.OK, FsmState.FAIL):
                # cancelled by another firewall's decision; builder drops its work
                b.fsm_state = FsmState.FAIL
            b.goto(FsmState.IDLE)


class LocalFirewall:
    kind = "local"

    def __init__(
        self,
        name: str,
        policies: Union[Sequence[SecurityPolicy], Sequence[dict]],
        masters: Sequence[str],
        fw_id: int = 1,
        critical: bool = False,
        strict_4n: bool = True,
        capacity: int = DEFAULT_CAPACITY,
    ):
        self.name = name
        self.fw_id = fw_id
        self.critical = critical
        self.strict_4n = strict_4n
        self.masters = list(masters)
        self.table, self.store = load_policies(list(policies), capacity=capacity)
        self.policies: list[SecurityPolicy] = list(self.store.values())
        self.initial_bram = {loc: encode_policy_word(p, self.masters) for loc, p in self.store.items()}
        self.bram = dict(self.initial_bram)
        self.version = 0
        self.interface = FirewallInterface()
        self.builder = BuilderState()
        self.mode = SecurityMode.NORMAL

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.name} id={self.fw_id}>"

    @property
    def frozen(self) -> bool:
        return self.interface.frozen

    def effective_policy(self, location: int, word: Optional[int] = None) -> SecurityPolicy:
        base = self.store[location]
        if word is None:
            word = self.bram[location]
        rights, fmt, _, _ = decode_policy_word(word, self.masters)
        return replace(base, rights=rights, format=fmt)

    def schedule(self, n_words: int) -> list[Step]:
        return check_schedule(n_words, self.strict_4n)

    def open(self, txn: Transaction) -> CheckSession:
        return CheckSession(self, txn)

    def process(self, txn: Transaction) -> tuple[Union[Forward, Block], CycleLedger]:
        """Run the whole check for ``txn`` outside the kernel."""
        if self.builder.fsm_state is not FsmState.IDLE:
            raise IllegalTransition("firewall busy")
        ledger = CycleLedger()
        session = self.open(txn)
        for step in self.schedule(txn.n_words):
            ledger.charge(step.stage, step.cycles)
            flags = session.apply(step)
            if flags is not None:
                session.abort()
                return Block(flags, session.reason), ledger
        return Forward(tuple(txn.payload)), ledger

    # --- update port (second BRAM port) ---

    def write_policy_word(self, location: int, word: int) -> None:
        if location not in self.store:
            raise KeyError(f"{self.name}: no policy at location {location}")
        self.bram[location] = word & 0xFFFFFFFF

    def restore_initial(self) -> None:
        self.bram = dict(self.initial_bram)
        self.version += 1

    def policy_words(self, policies: Optional[Iterable[SecurityPolicy]] = None) -> list[tuple[int, int]]:
        pols = self.policies if policies is None else list(policies)
        return [(p.id, encode_policy_word(p, self.masters)) for p in pols]
