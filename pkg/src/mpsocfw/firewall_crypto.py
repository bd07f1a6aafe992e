"""Cryptographic Firewall in front of the external memory controller.

Writes are checked by the Security Builder first and then protected; reads
are deciphered and authenticated first and checked afterwards. Protection
works on 128-bit memory blocks (four words): each block carries one
128-bit tag and one timestamp, both held in trusted on-chip storage.
"""

from __future__ import annotations

import re
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

from .bus import CycleLedger, Memory, Transaction
from .crypto import AuthFailure, GcmContext, ProtectedBlock, crypto_latency, gcm_protect, gcm_unprotect
from .firewall_local import Block, Forward, LocalFirewall
from .flags import FlagSet
from .policy import NOT_FOUND, SecurityPolicy

__all__ = [
    "MemorySection",
    "TagStore",
    "TagStoreFull",
    "MemoryEffect",
    "CryptoFirewall",
    "tag_budget",
    "max_protectable",
    "parse_capacity",
    "TAG_BITS",
    "BLOCK_BYTES",
]

TAG_BITS = 128
BLOCK_BYTES = 16

# probe(direction, address, data) -> replacement bytes or None
OffchipProbe = Callable[[str, int, bytes], Optional[bytes]]


class TagStoreFull(RuntimeError):
    pass


@dataclass(frozen=True)
class MemorySection:
    name: str
    low: int
    high: int
    cmode: bool = False
    imode: bool = False

    @property
    def size(self) -> int:
        return self.high - self.low


class TagStore:
    """Block address -> (tag, timestamp) in trusted block RAM."""

    def __init__(self, capacity_bits: int):
        self.capacity_bits = capacity_bits
        self.entries: dict[int, tuple[bytes, int]] = {}

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def occupancy_bits(self) -> int:
        return TAG_BITS * len(self.entries)

    def can_add(self, n_new: int) -> bool:
        return self.occupancy_bits + TAG_BITS * n_new <= self.capacity_bits

    def put(self, address: int, tag: bytes, timestamp: int) -> None:
        if address not in self.entries and not self.can_add(1):
            raise TagStoreFull(
                f"tag store full ({self.occupancy_bits} of {self.capacity_bits} bits used)"
            )
        self.entries[address] = (bytes(tag), timestamp)

    def get(self, address: int) -> Optional[tuple[bytes, int]]:
        return self.entries.get(address)


def tag_budget(protected_bytes: int) -> int:
    """Trusted-memory bytes needed to hold tags for ``protected_bytes`` of data."""
    if protected_bytes < 0:
        raise ValueError("protected_bytes must be non-negative")
    return protected_bytes


def max_protectable(capacity_bits: int) -> int:
    """Bytes of data whose tags fit in ``capacity_bits`` of trusted memory."""
    if capacity_bits < 0:
        raise ValueError("capacity must be non-negative")
    blocks = capacity_bits // TAG_BITS
    return blocks * BLOCK_BYTES


_UNITS = {
    "": 1, "bit": 1, "b": 1,
    "kbit": 10**3, "kb": 10**3, "mbit": 10**6, "mb": 10**6,
    "kibit": 2**10, "kib": 2**10, "mibit": 2**20, "mib": 2**20,
}


def parse_capacity(text: Union[str, int]) -> int:
    """Parse ``"14976Kbit"`` style capacities into bits (SI prefixes; Ki/Mi binary)."""
    if isinstance(text, int):
        return text
    m = re.fullmatch(r"\s*([0-9][0-9_,]*(?:\.[0-9]+)?)\s*([A-Za-z]*)\s*", text)
    if not m:
        raise ValueError(f"bad capacity {text!r}")
    unit = m.group(2).lower()
    if unit not in _UNITS:
        raise ValueError(f"unknown capacity unit {m.group(2)!r}")
    value = float(m.group(1).replace(",", "").replace("_", ""))
    return int(round(value * _UNITS[unit]))


@dataclass(frozen=True)
class MemoryEffect:
    blocks: tuple[int, ...]
    words: tuple[int, ...]


class CryptoFirewall(LocalFirewall):
    kind = "crypto"

    def __init__(
        self,
        name: str,
        policies: Sequence[SecurityPolicy],
        masters: Sequence[str],
        memory: Optional[Memory] = None,
        fw_id: int = 1,
        critical: bool = True,
        strict_4n: bool = True,
        capacity: int = 10,
        tag_capacity_bits: int = 14_976_000,
    ):
        super().__init__(name, policies, masters, fw_id, critical, strict_4n, capacity)
        self.memory = memory if memory is not None else Memory()
        self.tags = TagStore(tag_capacity_bits)
        self.timestamps: dict[int, int] = {}
        self.clock = 0
        self.probes: list[OffchipProbe] = []

    # --- section metadata ---

    def policy_for(self, address: int) -> Optional[SecurityPolicy]:
        loc = self.table.lookup(address)
        return None if loc == NOT_FOUND else self.store[loc]

    def sections(self, names: Optional[dict[tuple[int, int], str]] = None) -> list[MemorySection]:
        names = names or {}
        return [
            MemorySection(names.get((p.range_low, p.range_high), f"policy{p.id}"),
                          p.range_low, p.range_high, p.cmode, p.imode)
            for p in sorted(self.policies, key=lambda p: p.range_low)
        ]

    def crypto_cycles(self, txn: Transaction) -> int:
        p = self.policy_for(txn.address)
        if p is None:
            return 0
        return crypto_latency(txn.n_words, p.cmode, p.imode)

    # --- off-chip path (untrusted) ---

    def _offchip_write(self, address: int, data: bytes) -> None:
        for probe in self.probes:
            out = probe("write", address, data)
            if out is not None:
                data = out
        self.memory.write_bytes(address, data)

    def _offchip_read(self, address: int, n: int) -> bytes:
        data = self.memory.read_bytes(address, n)
        for probe in self.probes:
            out = probe("read", address, data)
            if out is not None:
                data = out
        return data

    def _next_timestamp(self) -> int:
        self.clock += 1
        return self.clock

    def _open_block(self, base: int, policy: SecurityPolicy) -> list[int]:
        raw = self._offchip_read(base, BLOCK_BYTES)
        words = [int.from_bytes(raw[i:i + 4], "big") for i in range(0, BLOCK_BYTES, 4)]
        ts = self.timestamps.get(base)
        if ts is None:
            # never written through the firewall: only all-zero content is genuine
            if policy.imode and any(raw):
                raise AuthFailure(f"untagged content at block 0x{base:08x}")
            return [0, 0, 0, 0] if policy.imode else words
        entry = self.tags.get(base) if policy.imode else None
        tag = entry[0] if entry else None
        block = ProtectedBlock(tuple(words), tag, ts, base)
        plain, _ = gcm_unprotect(GcmContext(policy.key, ts), block, policy.cmode, policy.imode)
        return plain

    # --- datapath effects ---

    def commit_write(self, txn: Transaction, policy: Optional[SecurityPolicy] = None) -> MemoryEffect:
        """Apply a checked write to external memory (read-modify-write per block)."""
        policy = policy or self.policy_for(txn.address)
        if policy is None:
            raise KeyError(f"no section at 0x{txn.address:08x}")
        by_block: "OrderedDict[int, dict[int, int]]" = OrderedDict()
        for i, w in enumerate(txn.payload):
            a = txn.word_address(i)
            base = a - a % BLOCK_BYTES
            by_block.setdefault(base, {})[(a - base) // 4] = w
        if not (policy.cmode or policy.imode):
            for i, w in enumerate(txn.payload):
                self._offchip_write(txn.word_address(i), w.to_bytes(4, "big"))
            return MemoryEffect(tuple(by_block), tuple(txn.payload))
        if policy.imode:
            fresh = sum(1 for b in by_block if self.tags.get(b) is None)
            if not self.tags.can_add(fresh):
                raise TagStoreFull(
                    f"{fresh} new tags exceed capacity ({self.tags.occupancy_bits}/{self.tags.capacity_bits} bits)"
                )
        for base, updates in by_block.items():
            current = self._open_block(base, policy) if len(updates) < 4 else [0, 0, 0, 0]
            for slot, w in updates.items():
                current[slot] = w
            ts = self._next_timestamp()
            pb, _ = gcm_protect(GcmContext(policy.key, ts), current, policy.cmode, policy.imode, address=base)
            self._offchip_write(base, b"".join(w.to_bytes(4, "big") for w in pb.words))
            self.timestamps[base] = ts
            if policy.imode:
                self.tags.put(base, pb.tag, ts)
        return MemoryEffect(tuple(by_block), tuple(txn.payload))

    def fetch_read(self, txn: Transaction, policy: Optional[SecurityPolicy] = None) -> list[int]:
        """Read and (if protected) decipher/authenticate the words of ``txn``."""
        policy = policy or self.policy_for(txn.address)
        out = []
        opened: dict[int, list[int]] = {}
        for i in range(txn.n_words):
            a = txn.word_address(i)
            if policy is None or not (policy.cmode or policy.imode):
                out.append(int.from_bytes(self._offchip_read(a, 4), "big"))
                continue
            base = a - a % BLOCK_BYTES
            if base not in opened:
                opened[base] = self._open_block(base, policy)
            out.append(opened[base][(a - base) // 4])
        return out

    # --- standalone processing (no kernel) ---

    def process_write(self, txn: Transaction) -> tuple[Union[MemoryEffect, Block], CycleLedger]:
        if txn.is_read:
            raise ValueError("process_write needs a write transaction")
        verdict, ledger = self.process(txn)
        if isinstance(verdict, Block):
            return verdict, ledger
        policy = self.policy_for(txn.address)
        ledger.charge("crypto", self.crypto_cycles(txn))
        try:
            effect = self.commit_write(txn, policy)
        except AuthFailure:
            return Block(FlagSet(self.fw_id, aF=True, firewall=self.name), "auth"), ledger
        return effect, ledger

    def process_read(self, txn: Transaction) -> tuple[Union[Forward, Block], CycleLedger]:
        if not txn.is_read:
            raise ValueError("process_read needs a read transaction")
        ledger = CycleLedger()
        policy = self.policy_for(txn.address)
        ledger.charge("crypto", self.crypto_cycles(txn))
        words: list[int] = []
        if policy is not None:
            try:
                words = self.fetch_read(txn, policy)
            except AuthFailure:
                return Block(FlagSet(self.fw_id, aF=True, firewall=self.name), "auth"), ledger
        verdict, check_ledger = self.process(txn)
        ledger = ledger + check_ledger
        if isinstance(verdict, Block):
            return verdict, ledger
        return Forward(tuple(words)), ledger

    # --- attacker surface ---

    def tamper(self, address: int, data: bytes) -> None:
        """Overwrite external memory directly, bypassing every firewall."""
        self.memory.write_bytes(address, data)
