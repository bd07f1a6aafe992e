from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsocfw.policy import (
    NOT_FOUND,
    CapacityError,
    CorrespondenceTable,
    OverlapError,
    PolicyError,
    PolicyKeyMissingError,
    Rights,
    SecurityPolicy,
    SentinelError,
    TableEntry,
    decode_policy_word,
    encode_policy_word,
    linear_scan,
    load_policies,
    lookup,
    policy_from_dict,
    policy_to_dict,
    read_policy_file,
)


def random_table(rng: random.Random, n: int) -> CorrespondenceTable:
    cuts = sorted(rng.sample(range(0, 1 << 20), 2 * n))
    entries = [TableEntry(cuts[2 * i], cuts[2 * i + 1], i + 1) for i in range(n)]
    rng.shuffle(entries)
    return CorrespondenceTable(entries, capacity=n)


def test_lookup_matches_linear_scan_on_random_16_entry_table():
    rng = random.Random(7)
    table = random_table(rng, 16)
    hits = 0
    for _ in range(10_000):
        a = rng.randrange(0, 1 << 20)
        got = lookup(table, a)
        assert got == linear_scan(table.entries, a)
        hits += got != NOT_FOUND
    assert 0 < hits < 10_000


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32), st.lists(st.integers(0, 1 << 20), max_size=50))
def test_lookup_oracle_and_purity(n, seed, addrs):
    table = random_table(random.Random(seed), n)
    for a in addrs:
        assert table.lookup(a) == linear_scan(table.entries, a) == table.lookup(a)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32))
def test_every_entry_reachable_at_its_low_bound(n, seed):
    table = random_table(random.Random(seed), n)
    for e in table.entries:
        assert table.lookup(e.range_low) == e.location
        assert table.lookup(e.range_high - 1) == e.location


def test_half_open_boundaries():
    t = CorrespondenceTable([TableEntry(0x1000, 0x2000, 1)])
    assert t.lookup(0x1000) == 1
    assert t.lookup(0x1FFF) == 1
    assert t.lookup(0x2000) == NOT_FOUND
    assert t.lookup(0x0FFF) == NOT_FOUND


def test_empty_document_gives_empty_table():
    table, store = load_policies([])
    assert len(table) == 0 and store == {}
    assert table.lookup(0) == NOT_FOUND
    table, _ = load_policies(None)
    assert table.lookup(0xFFFFFFFF) == NOT_FOUND


def test_overlap_rejected():
    with pytest.raises(OverlapError):
        load_policies([{"id": 1, "low": 0, "high": 16}, {"id": 2, "low": 8, "high": 32}])


def test_adjacent_ranges_allowed():
    table, _ = load_policies([{"id": 1, "low": 0, "high": 16}, {"id": 2, "low": 16, "high": 32}])
    assert table.lookup(15) == 1 and table.lookup(16) == 2


def test_capacity_enforced():
    pols = [{"id": i + 1, "low": 16 * i, "high": 16 * i + 16} for i in range(11)]
    with pytest.raises(CapacityError):
        load_policies(pols)
    load_policies(pols[:10])


def test_sentinel_and_key_errors():
    with pytest.raises(SentinelError):
        load_policies([{"id": 0, "low": 0, "high": 16}])
    with pytest.raises(PolicyKeyMissingError):
        load_policies([{"id": 1, "low": 0, "high": 16, "cmode": True}])
    with pytest.raises(PolicyError):
        load_policies([{"id": 1, "low": 16, "high": 16}])
    with pytest.raises(PolicyError):
        load_policies([{"id": 1, "low": 0, "high": 16, "format": 3}])
    with pytest.raises(PolicyError):
        load_policies([{"id": 1, "low": 0, "high": 16, "rights": {"MB1": "rx"}}])


def test_rights_semantics():
    assert Rights.RO.permits(True) and not Rights.RO.permits(False)
    assert Rights.WO.permits(False) and not Rights.WO.permits(True)
    assert Rights.RW.permits(True) and Rights.RW.permits(False)
    assert not Rights.NONE.permits(True) and not Rights.NONE.permits(False)
    p = SecurityPolicy(1, 0, 16, rights={"MB1": Rights.RO})
    assert p.right_for("MB1") is Rights.RO
    assert p.right_for("stranger") is Rights.NONE


@settings(max_examples=100, deadline=None)
@given(
    st.sampled_from([1, 2, 4]),
    st.booleans(),
    st.booleans(),
    st.lists(st.sampled_from(list(Rights)), min_size=1, max_size=12),
)
def test_policy_word_round_trip(fmt, cmode, imode, rights):
    masters = [f"M{i}" for i in range(len(rights))]
    key = bytes(16) if (cmode or imode) else None
    p = SecurityPolicy(1, 0, 64, dict(zip(masters, rights)), fmt, cmode, imode, key)
    r, f, c, i = decode_policy_word(encode_policy_word(p, masters), masters)
    assert (r, f, c, i) == (dict(zip(masters, rights)), fmt, cmode, imode)


def test_json_round_trip_and_file_errors(tmp_path):
    p = SecurityPolicy(3, 0x8000_0000, 0x8200_0000, {"MB1": Rights.RW}, 4, True, True, bytes(range(16)))
    assert policy_from_dict(json.loads(json.dumps(policy_to_dict(p)))) == p
    good = tmp_path / "p.json"
    good.write_text(json.dumps([policy_to_dict(p)]))
    table, store = read_policy_file(good)
    assert store[3] == p and table.lookup(0x8000_0004) == 3
    bad = tmp_path / "bad.json"
    bad.write_text('[\n  {"id": 1,\n   "low": }\n]')
    with pytest.raises(PolicyError, match=r"bad\.json:3:"):
        read_policy_file(bad)
