"""Security policies, the Correspondence Table and its address lookup."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

__all__ = [
    "NOT_FOUND",
    "DEFAULT_CAPACITY",
    "Rights",
    "SecurityPolicy",
    "TableEntry",
    "CorrespondenceTable",
    "PolicyError",
    "OverlapError",
    "CapacityError",
    "SentinelError",
    "PolicyKeyMissingError",
    "lookup",
    "linear_scan",
    "load_policies",
    "read_policy_file",
    "policy_from_dict",
    "policy_to_dict",
    "encode_policy_word",
    "decode_policy_word",
    "MAX_WORD_MASTERS",
]

NOT_FOUND = 0
DEFAULT_CAPACITY = 10
VALID_FORMATS = (1, 2, 4)


class PolicyError(ValueError):
    """Raised for a policy set that cannot be loaded."""


class OverlapError(PolicyError):
    pass


class CapacityError(PolicyError):
    pass


class SentinelError(PolicyError):
    pass


class PolicyKeyMissingError(PolicyError):
    pass


class Rights(IntEnum):
    NONE = 0
    RO = 1
    WO = 2
    RW = 3

    @property
    def can_read(self) -> bool:
        return bool(self & Rights.RO)

    @property
    def can_write(self) -> bool:
        return bool(self & Rights.WO)

    def permits(self, is_read: bool) -> bool:
        return self.can_read if is_read else self.can_write

    @classmethod
    def parse(cls, text: str) -> "Rights":
        try:
            return _RIGHT_NAMES[text.lower()]
        except KeyError:
            raise PolicyError(f"unknown right {text!r} (expected ro, wo, rw or none)") from None

    @property
    def label(self) -> str:
        return {Rights.NONE: "none", Rights.RO: "ro", Rights.WO: "wo", Rights.RW: "rw"}[self]


_RIGHT_NAMES = {"none": Rights.NONE, "ro": Rights.RO, "wo": Rights.WO, "rw": Rights.RW}


@dataclass(frozen=True)
class SecurityPolicy:
    """One filtering rule over the half-open byte range ``[range_low, range_high)``.

    ``rights`` maps master names to their access right; a master that is not
    listed has no access.
    """

    id: int
    range_low: int
    range_high: int
    rights: Mapping[str, Rights] = field(default_factory=dict)
    format: int = 4
    cmode: bool = False
    imode: bool = False
    key: Optional[bytes] = None

    def __post_init__(self) -> None:
        if self.id == NOT_FOUND:
            raise SentinelError("policy id 0 is reserved for 'not found'")
        if self.id < 0:
            raise PolicyError(f"policy id must be positive, got {self.id}")
        if not self.range_low < self.range_high:
            raise PolicyError(
                f"policy {self.id}: empty range [0x{self.range_low:x}, 0x{self.range_high:x})"
            )
        if self.format not in VALID_FORMATS:
            raise PolicyError(f"policy {self.id}: format must be one of {VALID_FORMATS}")
        crypto = self.cmode or self.imode
        if crypto and self.key is None:
            raise PolicyKeyMissingError(f"policy {self.id}: crypto mode enabled without a key")
        if not crypto and self.key is not None:
            raise PolicyError(f"policy {self.id}: key given but no crypto mode enabled")
        if self.key is not None and len(self.key) != 16:
            raise PolicyError(f"policy {self.id}: key must be 128-bit")
        object.__setattr__(self, "rights", {m: Rights(r) for m, r in self.rights.items()})

    def right_for(self, master: str) -> Rights:
        return self.rights.get(master, Rights.NONE)

    def contains(self, address: int) -> bool:
        return self.range_low <= address < self.range_high

    def with_rights(self, rights: Mapping[str, Rights]) -> "SecurityPolicy":
        return replace(self, rights=dict(rights))

    def __hash__(self) -> int:
        return hash((self.id, self.range_low, self.range_high))


@dataclass(frozen=True)
class TableEntry:
    range_low: int
    range_high: int
    location: int


def linear_scan(entries: Iterable[TableEntry], address: int) -> int:
    """Reference scan: first entry containing ``address`` or NOT_FOUND."""
    for e in entries:
        if e.range_low <= address < e.range_high:
            return e.location
    return NOT_FOUND


class CorrespondenceTable:
    """Parallel range matcher mapping a bus address to a policy location.

    Overlapping ranges are refused so that at most one submodule can match.
    """

    def __init__(self, entries: Iterable[TableEntry] = (), capacity: int = DEFAULT_CAPACITY):
        self.capacity = capacity
        self.entries: tuple[TableEntry, ...] = tuple(entries)
        if len(self.entries) > capacity:
            raise CapacityError(f"{len(self.entries)} entries exceed table capacity {capacity}")
        ordered = sorted(self.entries, key=lambda e: e.range_low)
        for e in ordered:
            if e.location == NOT_FOUND:
                raise SentinelError("table entry points at reserved location 0")
            if not e.range_low < e.range_high:
                raise PolicyError(f"empty table range at location {e.location}")
        for a, b in zip(ordered, ordered[1:]):
            if b.range_low < a.range_high:
                raise OverlapError(
                    f"ranges [0x{a.range_low:x}, 0x{a.range_high:x}) and "
                    f"[0x{b.range_low:x}, 0x{b.range_high:x}) overlap"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, address: int) -> int:
        bram_a = NOT_FOUND
        for e in self.entries:
            if e.range_low <= address < e.range_high:
                bram_a = e.location
        return bram_a


def lookup(table: CorrespondenceTable, address: int) -> int:
    """Policy location for ``address``; NOT_FOUND when no range contains it."""
    return table.lookup(address)


# --------------------------------------------------------------------------
# 32-bit policy words (the firewall BRAM image)

_FORMAT_CODE = {1: 0, 2: 1, 4: 2}
_CODE_FORMAT = {v: k for k, v in _FORMAT_CODE.items()}
MAX_WORD_MASTERS = 12


def encode_policy_word(policy: SecurityPolicy, masters: Sequence[str]) -> int:
    """Pack rights/format/modes into one BRAM word.

    bits 0-1 format code, bit 2 cmode, bit 3 imode, bits 8+2i..9+2i the
    right of ``masters[i]``.
    """
    if len(masters) > MAX_WORD_MASTERS:
        raise PolicyError(f"a policy word holds at most {MAX_WORD_MASTERS} masters")
    word = _FORMAT_CODE[policy.format] | (int(policy.cmode) << 2) | (int(policy.imode) << 3)
    for i, m in enumerate(masters):
        word |= int(policy.right_for(m)) << (8 + 2 * i)
    return word


def decode_policy_word(word: int, masters: Sequence[str]) -> tuple[dict[str, Rights], int, bool, bool]:
    fmt = _CODE_FORMAT.get(word & 0x3, 4)
    rights = {m: Rights((word >> (8 + 2 * i)) & 0x3) for i, m in enumerate(masters)}
    return rights, fmt, bool(word & 0x4), bool(word & 0x8)


# --------------------------------------------------------------------------
# document loading


def _parse_int(v: Union[int, str], what: str) -> int:
    if isinstance(v, bool):
        raise PolicyError(f"{what}: expected integer or hex string")
    if isinstance(v, int):
        return v
    if isinstance(v, str):
        try:
            return int(v, 0)
        except ValueError:
            raise PolicyError(f"{what}: bad integer {v!r}") from None
    raise PolicyError(f"{what}: expected integer or hex string, got {type(v).__name__}")


def policy_from_dict(d: Mapping[str, Any]) -> SecurityPolicy:
    try:
        pid = d["id"]
        low = _parse_int(d["low"], "low")
        high = _parse_int(d["high"], "high")
    except KeyError as exc:
        raise PolicyError(f"policy is missing field {exc.args[0]!r}") from None
    rights = {str(m): Rights.parse(r) for m, r in d.get("rights", {}).items()}
    key = d.get("key")
    if key is not None:
        try:
            key = bytes.fromhex(key)
        except (TypeError, ValueError):
            raise PolicyError(f"policy {pid}: key must be 32 hex characters") from None
    return SecurityPolicy(
        id=_parse_int(pid, "id"),
        range_low=low,
        range_high=high,
        rights=rights,
        format=int(d.get("format", 4)),
        cmode=bool(d.get("cmode", False)),
        imode=bool(d.get("imode", False)),
        key=key,
    )


def policy_to_dict(p: SecurityPolicy) -> dict[str, Any]:
    d: dict[str, Any] = {
        "id": p.id,
        "low": f"0x{p.range_low:08x}",
        "high": f"0x{p.range_high:08x}",
        "rights": {m: r.label for m, r in sorted(p.rights.items())},
        "format": p.format,
        "cmode": p.cmode,
        "imode": p.imode,
    }
    if p.key is not None:
        d["key"] = p.key.hex()
    return d


def load_policies(
    doc: Union[Sequence[Any], Mapping[str, Any], None], capacity: int = DEFAULT_CAPACITY
) -> tuple[CorrespondenceTable, dict[int, SecurityPolicy]]:
    """Build the Correspondence Table and policy store from a parsed document.

    ``doc`` is a list of policy objects, or a mapping with a ``"policies"``
    list. Policy locations equal policy ids.
    """
    if doc is None:
        items: Sequence[Any] = []
    elif isinstance(doc, Mapping):
        items = doc.get("policies", [])
    else:
        items = doc
    policies = [p if isinstance(p, SecurityPolicy) else policy_from_dict(p) for p in items]
    store: dict[int, SecurityPolicy] = {}
    for p in policies:
        if p.id in store:
            raise PolicyError(f"duplicate policy id {p.id}")
        store[p.id] = p
    table = CorrespondenceTable(
        (TableEntry(p.range_low, p.range_high, p.id) for p in policies), capacity=capacity
    )
    return table, store


def read_policy_file(path: Union[str, Path], capacity: int = DEFAULT_CAPACITY):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise PolicyError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    try:
        return load_policies(doc, capacity=capacity)
    except PolicyError as exc:
        raise PolicyError(f"{path}: {exc}") from None
