from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpsocfw.bus import Kind, Memory, Transaction
from mpsocfw.crypto import AuthFailure
from mpsocfw.firewall_crypto import (
    CryptoFirewall,
    MemoryEffect,
    TagStore,
    TagStoreFull,
    max_protectable,
    parse_capacity,
    tag_budget,
)
from mpsocfw.firewall_local import Block, Forward
from mpsocfw.harness import MARKER, SECTION_SIZE, build_case_study, plaintext_hits, section_base
from mpsocfw.kernel import Simulator, TraceItem

D11, D12, D21, C11 = (section_base(n) for n in ("D11", "D12", "D21", "C11"))


def make_cf(**kw) -> CryptoFirewall:
    spec = build_case_study().firewall("CF_EXT")
    return CryptoFirewall("CF_EXT", spec.policies, ["MB1", "MB2"], Memory(), fw_id=5, **kw)


def test_sections_are_32mb_and_disjoint():
    topo = build_case_study()
    assert len(topo.sections) == 5
    assert all(s.high - s.low == SECTION_SIZE == 32 * 2**20 for s in topo.sections)
    modes = {s.name: (s.cmode, s.imode) for s in make_cf().sections(
        {(s.low, s.high): s.name for s in topo.sections})}
    assert modes == {"C11": (True, True), "D11": (True, True), "D12": (False, True),
                     "C21": (False, False), "D21": (False, False)}


def test_blocked_write_leaves_memory_untouched():
    cf = make_cf()
    verdict, _ = cf.process_write(Transaction.write("MB2", C11, [0xAA]))
    assert isinstance(verdict, Block) and verdict.flags.names == ["cF"]
    assert cf.memory.snapshot() == {} and len(cf.tags) == 0


def test_s2_write_decomposition():
    cf = make_cf()
    effect, ledger = cf.process_write(Transaction.write("MB1", D11, [0x12345678]))
    assert isinstance(effect, MemoryEffect)
    assert (ledger.checking, ledger.crypto, ledger.total) == (6, 22, 28)


def test_plaintext_write_is_bypass():
    cf = make_cf()
    _, ledger = cf.process_write(Transaction.write("MB2", D21, [0xCAFE]))
    assert ledger.total == 6 and ledger.crypto == 0
    assert cf.memory.read_word(D21) == 0xCAFE


def test_read_back_own_write():
    cf = make_cf()
    cf.process_write(Transaction.write("MB1", D11, [0x0BADF00D]))
    assert cf.memory.read_word(D11) != 0x0BADF00D
    verdict, ledger = cf.process_read(Transaction.read("MB1", D11))
    assert isinstance(verdict, Forward) and verdict.payload == (0x0BADF00D,)
    assert ledger.total == 28


def test_tampered_integrity_section_read_gives_af():
    cf = make_cf()
    cf.process_write(Transaction.write("MB1", D12, [1, 2, 3, 4]))
    cf.tamper(D12 + 8, b"\x00\x00\x00\x07")
    verdict, _ = cf.process_read(Transaction.read("MB1", D12))
    assert isinstance(verdict, Block) and verdict.flags.names == ["aF"]


def test_untagged_garbage_in_integrity_section_gives_af():
    cf = make_cf()
    cf.tamper(D12, b"\xff" * 4)
    with pytest.raises(AuthFailure):
        cf.fetch_read(Transaction.read("MB1", D12))


def test_no_access_read_of_plaintext_section():
    verdict, _ = make_cf().process_read(Transaction.read("MB1", D21))
    assert isinstance(verdict, Block) and verdict.flags.names == ["cF"]


def test_tag_budget_figures():
    bits = parse_capacity("14976Kbit")
    assert bits == 14_976_000
    assert abs(max_protectable(bits) / 1.87e6 - 1) <= 0.03
    assert tag_budget(0) == 0 and tag_budget(128) == 128
    assert max_protectable(0) == 0
    assert parse_capacity("1Kibit") == 1024


def test_tag_store_occupancy_after_eight_block_writes():
    cf = make_cf()
    for i in range(8):
        cf.process_write(Transaction.write("MB1", D12 + 16 * i, [i, i, i, i]))
    # rewrite two blocks: no new entries
    cf.process_write(Transaction.write("MB1", D12, [9]))
    cf.process_write(Transaction.write("MB1", D12 + 16, [9, 9, 9, 9]))
    assert len(cf.tags) == 8
    assert cf.tags.occupancy_bits // 8 == 128 == tag_budget(8 * 16)


def test_tag_store_full_is_an_error():
    cf = make_cf(tag_capacity_bits=2 * 128)
    cf.process_write(Transaction.write("MB1", D12, [1, 2, 3, 4, 5, 6, 7, 8]))
    with pytest.raises(TagStoreFull):
        cf.process_write(Transaction.write("MB1", D12 + 32, [1]))
    store = TagStore(128)
    store.put(0, bytes(16), 1)
    store.put(0, bytes(16), 2)
    with pytest.raises(TagStoreFull):
        store.put(16, bytes(16), 3)


def test_sub_block_write_is_read_modify_write():
    cf = make_cf()
    cf.process_write(Transaction.write("MB1", D11, [1, 2, 3, 4]))
    cf.process_write(Transaction.write("MB1", D11 + 8, [30]))
    verdict, _ = cf.process_read(Transaction.read("MB1", D11, 4))
    assert verdict.payload == (1, 2, 30, 4)


def test_timestamps_strictly_increase_per_block():
    cf = make_cf()
    seen = []
    for v in range(5):
        cf.process_write(Transaction.write("MB1", D11, [v]))
        seen.append(cf.timestamps[D11])
    assert seen == sorted(set(seen))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["D11", "D12", "C11"]), st.integers(0, 15),
                          st.lists(st.integers(0, 2**32 - 1), min_size=1, max_size=4)),
                min_size=1, max_size=12))
def test_functional_memory_model_and_occupancy(writes):
    """Reads always return the last written value; tag count equals distinct protected blocks."""
    cf = make_cf()
    model: dict[int, int] = {}
    blocks = set()
    for sec, slot, words in writes:
        base = section_base(sec) + 4 * slot
        cf.process_write(Transaction.write("MB1", base, words))
        for i, w in enumerate(words):
            a = base + 4 * i
            model[a] = w
            blocks.add(a - a % 16)
    for a, w in model.items():
        verdict, _ = cf.process_read(Transaction.read("MB1", a))
        assert verdict.payload == (w,)
    assert len(cf.tags) == len(blocks)
    assert not plaintext_hits_cf(cf, words_bytes(MARKER))


def words_bytes(ws):
    return b"".join(w.to_bytes(4, "big") for w in ws)


def plaintext_hits_cf(cf, needle):
    return [a for p in cf.policies if p.cmode for a in cf.memory.find(needle, p.range_low, p.range_high)]


def test_marker_never_visible_in_confidential_sections():
    sim = Simulator(build_case_study(), [
        TraceItem("MB1", Kind.WRITE, C11, payload=list(MARKER)),
        TraceItem("MB1", Kind.WRITE, D11 + 4, payload=list(MARKER)),
        TraceItem("MB1", Kind.WRITE, D12, payload=list(MARKER)),
    ]).run()
    assert all(c.status == "ok" for c in sim.completions)
    assert plaintext_hits(sim) == []
    # the integrity-only section is allowed to hold it in clear
    assert sim.crypto_firewalls[0].memory.find(words_bytes(MARKER), D12, D12 + 64) == [D12]


def _stage_order(sim, seq):
    return [e.detail["stage"] for e in sim.events if e.txn == seq and e.kind == "stage" and e.detail["stage"] != "bus"]


def test_datapath_order_in_event_log():
    sim = Simulator(build_case_study(), [
        TraceItem("MB1", Kind.WRITE, D11, payload=[5]),
        TraceItem("MB1", Kind.READ, D11),
    ]).run()
    w, r = sim.completions
    wo, ro = _stage_order(sim, w.seq), _stage_order(sim, r.seq)
    assert wo.index("crypto") > max(i for i, s in enumerate(wo) if s == "check")
    assert ro.index("crypto") < min(i for i, s in enumerate(ro) if s == "check")
    assert r.data == [5]
    assert r.ledger.total == w.ledger.total == 28
