"""Bus-level data model: transactions, handshakes, cycle ledgers, topology.

The cycle-stepped kernel that moves transactions through this topology
lives in :mod:`mpsocfw.kernel`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

from .policy import (
    DEFAULT_CAPACITY,
    PolicyError,
    SecurityPolicy,
    policy_from_dict,
    policy_to_dict,
)

__all__ = [
    "Kind",
    "Transaction",
    "HandshakeState",
    "CycleLedger",
    "LEDGER_STAGES",
    "Event",
    "Memory",
    "MasterSpec",
    "SlaveSpec",
    "FirewallSpec",
    "SectionSpec",
    "Constants",
    "SimTopology",
    "TopologyError",
    "load_topology",
    "read_topology_file",
]


class TopologyError(ValueError):
    pass


class Kind(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass
class Transaction:
    """One bus operation.

    ``txn_id`` follows the ARID convention used by the checking module:
    nonzero means read, zero means write. For reads ``payload`` only fixes
    the word count; results are returned separately.
    """

    master: str
    address: int
    payload: list[int]
    kind: Kind = Kind.WRITE
    size: int = 4
    txn_id: Optional[int] = None
    label: str = ""

    def __post_init__(self) -> None:
        self.kind = Kind(self.kind)
        if self.txn_id is None:
            self.txn_id = 1 if self.kind is Kind.READ else 0
        if (self.txn_id != 0) != (self.kind is Kind.READ):
            raise ValueError(
                f"txn_id {self.txn_id} contradicts kind {self.kind.value} (nonzero id means read)"
            )
        if not self.payload:
            raise ValueError("a transaction carries at least one word")
        self.payload = [int(w) & 0xFFFFFFFF for w in self.payload]

    @property
    def is_read(self) -> bool:
        # the checking module's preliminary test
        return self.txn_id != 0

    @property
    def n_words(self) -> int:
        return len(self.payload)

    def word_address(self, i: int) -> int:
        return self.address + 4 * i

    @classmethod
    def read(cls, master: str, address: int, n_words: int = 1, **kw: Any) -> "Transaction":
        return cls(master, address, [0] * n_words, Kind.READ, **kw)

    @classmethod
    def write(cls, master: str, address: int, payload: Sequence[int], **kw: Any) -> "Transaction":
        return cls(master, address, list(payload), Kind.WRITE, **kw)


@dataclass
class HandshakeState:
    """valid/ready couples of the AXI address and data channels."""

    arvalid: bool = False
    arready: bool = True
    awvalid: bool = False
    awready: bool = True
    wvalid: bool = False
    wready: bool = True
    rvalid: bool = False
    rready: bool = True

    def fires(self, channel: str) -> bool:
        return getattr(self, channel + "valid") and getattr(self, channel + "ready")


LEDGER_STAGES = ("interface", "table_lookup", "policy_read", "check", "crypto", "manager", "update_stall")


@dataclass
class CycleLedger:
    interface: int = 0
    table_lookup: int = 0
    policy_read: int = 0
    check: int = 0
    crypto: int = 0
    manager: int = 0
    update_stall: int = 0

    @property
    def total(self) -> int:
        return sum(getattr(self, s) for s in LEDGER_STAGES)

    @property
    def checking(self) -> int:
        """Security Builder plus Firewall Interface cycles."""
        return self.interface + self.table_lookup + self.policy_read + self.check

    def charge(self, stage: str, cycles: int = 1) -> None:
        if stage not in LEDGER_STAGES:
            raise KeyError(stage)
        setattr(self, stage, getattr(self, stage) + cycles)

    def __add__(self, other: "CycleLedger") -> "CycleLedger":
        return CycleLedger(**{s: getattr(self, s) + getattr(other, s) for s in LEDGER_STAGES})

    def as_dict(self) -> dict[str, int]:
        d = {s: getattr(self, s) for s in LEDGER_STAGES}
        d["total"] = self.total
        return d


@dataclass(frozen=True)
class Event:
    cycle: int
    component: str
    kind: str
    txn: Optional[int] = None
    detail: Mapping[str, Any] = field(default_factory=dict)
    cycles: int = 0

    def as_dict(self) -> dict[str, Any]:
        return {
            "cycle": self.cycle,
            "component": self.component,
            "kind": self.kind,
            "txn": self.txn,
            "detail": dict(self.detail),
            "cycles": self.cycles,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))


class Memory:
    """Sparse byte-addressable memory stored as 16-byte blocks.

    Unwritten bytes read as zero. Words are big-endian.
    """

    BLOCK = 16

    def __init__(self, low: int = 0, high: int = 1 << 32):
        self.low = low
        self.high = high
        self.blocks: dict[int, bytearray] = {}

    def _block(self, base: int, create: bool) -> Optional[bytearray]:
        b = self.blocks.get(base)
        if b is None and create:
            b = self.blocks[base] = bytearray(self.BLOCK)
        return b

    def read_bytes(self, address: int, n: int) -> bytes:
        out = bytearray()
        a = address
        while len(out) < n:
            base = a - a % self.BLOCK
            off = a - base
            take = min(self.BLOCK - off, n - len(out))
            b = self.blocks.get(base)
            out += b[off:off + take] if b is not None else bytes(take)
            a += take
        return bytes(out)

    def write_bytes(self, address: int, data: bytes) -> None:
        a = address
        i = 0
        while i < len(data):
            base = a - a % self.BLOCK
            off = a - base
            take = min(self.BLOCK - off, len(data) - i)
            blk = self._block(base, True)
            blk[off:off + take] = data[i:i + take]
            a += take
            i += take

    def read_word(self, address: int) -> int:
        return int.from_bytes(self.read_bytes(address, 4), "big")

    def write_word(self, address: int, value: int) -> None:
        self.write_bytes(address, (value & 0xFFFFFFFF).to_bytes(4, "big"))

    def snapshot(self) -> dict[int, bytes]:
        return {k: bytes(v) for k, v in self.blocks.items()}

    def restore(self, snap: Mapping[int, bytes]) -> None:
        self.blocks = {k: bytearray(v) for k, v in snap.items()}

    def find(self, needle: bytes, low: int = 0, high: int = 1 << 64) -> list[int]:
        """Addresses in ``[low, high)`` where ``needle`` occurs (block-local or spanning)."""
        hits = []
        bases = sorted(b for b in self.blocks if low - self.BLOCK < b < high)
        for base in bases:
            window = self.read_bytes(base, self.BLOCK + len(needle) - 1)
            start = 0
            while True:
                j = window.find(needle, start)
                if j < 0 or j >= self.BLOCK:
                    break
                if low <= base + j and base + j + len(needle) <= high:
                    hits.append(base + j)
                start = j + 1
        return hits

    def dump_hex(self) -> list[str]:
        return [f"{base:08x}: {bytes(self.blocks[base]).hex()}" for base in sorted(self.blocks)]


# --------------------------------------------------------------------------
# topology


@dataclass
class MasterSpec:
    name: str
    firewall: Optional[str] = None


@dataclass
class SlaveSpec:
    name: str
    low: int
    high: int
    kind: str = "memory"
    firewall: Optional[str] = None

    def contains(self, address: int) -> bool:
        return self.low <= address < self.high


@dataclass
class FirewallSpec:
    name: str
    kind: str = "local"
    policies: list[SecurityPolicy] = field(default_factory=list)
    critical: bool = False
    capacity: int = DEFAULT_CAPACITY


@dataclass
class SectionSpec:
    name: str
    low: int
    high: int


@dataclass
class Constants:
    raw_hop_cost: int = 1
    software_latency: int = 148
    strict_4n: bool = True
    mode: str = "distributed"
    central_roundtrip: int = 4
    # 14,976 Kbit of block RAM on the reference Virtex-6 part
    tag_capacity_bits: int = 14_976_000

    def __post_init__(self) -> None:
        if self.mode not in ("distributed", "centralized"):
            raise TopologyError(f"mode must be distributed or centralized, not {self.mode!r}")
        for name in ("raw_hop_cost", "software_latency", "central_roundtrip", "tag_capacity_bits"):
            if getattr(self, name) < 0:
                raise TopologyError(f"{name} must be non-negative")


@dataclass
class SimTopology:
    masters: list[MasterSpec] = field(default_factory=list)
    slaves: list[SlaveSpec] = field(default_factory=list)
    firewalls: list[FirewallSpec] = field(default_factory=list)
    sections: list[SectionSpec] = field(default_factory=list)
    constants: Constants = field(default_factory=Constants)

    def validate(self) -> "SimTopology":
        names = [m.name for m in self.masters]
        if len(set(names)) != len(names):
            raise TopologyError("duplicate master names")
        fw_names = [f.name for f in self.firewalls]
        if len(set(fw_names)) != len(fw_names):
            raise TopologyError("duplicate firewall names")
        attached: dict[str, str] = {}
        for owner in [*self.masters, *self.slaves]:
            if owner.firewall is None:
                continue
            if owner.firewall not in fw_names:
                raise TopologyError(f"{owner.name} references unknown firewall {owner.firewall!r}")
            if owner.firewall in attached:
                raise TopologyError(
                    f"firewall {owner.firewall!r} attached to both {attached[owner.firewall]} and {owner.name}"
                )
            attached[owner.firewall] = owner.name
        for f in self.firewalls:
            if f.kind not in ("local", "crypto"):
                raise TopologyError(f"firewall {f.name}: unknown kind {f.kind!r}")
            if f.kind == "crypto":
                if not any(s.firewall == f.name for s in self.slaves):
                    raise TopologyError(f"crypto firewall {f.name} must guard a slave")
        ordered = sorted(self.slaves, key=lambda s: s.low)
        for s in ordered:
            if not s.low < s.high:
                raise TopologyError(f"slave {s.name}: empty range")
        for a, b in zip(ordered, ordered[1:]):
            if b.low < a.high:
                raise TopologyError(f"slaves {a.name} and {b.name} overlap")
        secs = sorted(self.sections, key=lambda s: s.low)
        for a, b in zip(secs, secs[1:]):
            if b.low < a.high:
                raise TopologyError(f"sections {a.name} and {b.name} overlap")
        return self

    def master(self, name: str) -> MasterSpec:
        for m in self.masters:
            if m.name == name:
                return m
        raise KeyError(name)

    def firewall(self, name: str) -> FirewallSpec:
        for f in self.firewalls:
            if f.name == name:
                return f
        raise KeyError(name)

    def decode(self, address: int) -> Optional[SlaveSpec]:
        for s in self.slaves:
            if s.contains(address):
                return s
        return None

    def section_of(self, address: int) -> Optional[SectionSpec]:
        for s in self.sections:
            if s.low <= address < s.high:
                return s
        return None

    def without_firewalls(self) -> "SimTopology":
        t = copy.deepcopy(self)
        t.firewalls = []
        for m in t.masters:
            m.firewall = None
        for s in t.slaves:
            s.firewall = None
        return t

    def with_constants(self, **changes: Any) -> "SimTopology":
        t = copy.deepcopy(self)
        t.constants = Constants(**{**asdict(t.constants), **changes})
        return t

    def add_master(self, name: str, firewall: Optional[str] = None) -> "SimTopology":
        t = copy.deepcopy(self)
        t.masters.append(MasterSpec(name, firewall))
        return t.validate()

    def to_dict(self) -> dict[str, Any]:
        return {
            "constants": asdict(self.constants),
            "masters": [{"name": m.name, "firewall": m.firewall} for m in self.masters],
            "slaves": [
                {"name": s.name, "low": f"0x{s.low:08x}", "high": f"0x{s.high:08x}",
                 "kind": s.kind, "firewall": s.firewall}
                for s in self.slaves
            ],
            "firewalls": [
                {"name": f.name, "kind": f.kind, "critical": f.critical, "capacity": f.capacity,
                 "policies": [policy_to_dict(p) for p in f.policies]}
                for f in self.firewalls
            ],
            "sections": [
                {"name": s.name, "low": f"0x{s.low:08x}", "high": f"0x{s.high:08x}"}
                for s in self.sections
            ],
        }


def _int(v: Union[int, str]) -> int:
    return v if isinstance(v, int) else int(v, 0)


def load_topology(doc: Optional[Mapping[str, Any]]) -> SimTopology:
    """Build a :class:`SimTopology` from a parsed topology document."""
    doc = doc or {}
    try:
        consts = Constants(**doc.get("constants", {}))
        masters = [MasterSpec(m["name"], m.get("firewall")) for m in doc.get("masters", [])]
        slaves = [
            SlaveSpec(s["name"], _int(s["low"]), _int(s["high"]), s.get("kind", "memory"), s.get("firewall"))
            for s in doc.get("slaves", [])
        ]
        firewalls = []
        for i, f in enumerate(doc.get("firewalls", [])):
            try:
                pols = [policy_from_dict(p) for p in f.get("policies", [])]
            except PolicyError as exc:
                raise TopologyError(f"firewalls[{i}] ({f.get('name')}): {exc}") from None
            firewalls.append(
                FirewallSpec(f["name"], f.get("kind", "local"), pols, bool(f.get("critical", False)),
                             int(f.get("capacity", DEFAULT_CAPACITY)))
            )
        sections = [SectionSpec(s["name"], _int(s["low"]), _int(s["high"])) for s in doc.get("sections", [])]
    except KeyError as exc:
        raise TopologyError(f"missing field {exc.args[0]!r}") from None
    except TypeError as exc:
        raise TopologyError(str(exc)) from None
    return SimTopology(masters, slaves, firewalls, sections, consts).validate()


def read_topology_file(path: Union[str, Path]) -> SimTopology:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise TopologyError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return load_topology(doc)
    except (TopologyError, PolicyError, ValueError) as exc:
        raise TopologyError(f"{path}: {exc}") from None
