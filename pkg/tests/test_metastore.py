import math
import random

import pytest

from tagsafe.core import PRESETS, encode
from tagsafe.metastore import (DoubleFreeError, LinkedListStore, MetadataEntry, OracleStore,
                               StoreKind, StructuralError, TreeStore, make_store)

CFG = PRESETS["va57t7"]
HEAP = 0x1_0000_0000


def entry(base, size, tag=0x15):
    return MetadataEntry(encode(base, tag, CFG), size)


@pytest.fixture(params=list(StoreKind))
def store(request):
    return make_store(request.param, CFG)


def test_insert_then_find(store):
    ref = store.insert(entry(HEAP, 0x300))
    res = store.find_containing(HEAP + 0x150)
    assert res.found and res.ref == ref and res.entry.size == 0x300
    assert res.entry.tag(CFG) == 0x15
    assert not store.find_containing(HEAP + 0x300).found


def test_overlap_with_live_range_rejected(store):
    store.insert(entry(HEAP, 0x300))
    with pytest.raises(StructuralError):
        store.insert(entry(HEAP + 0x200, 0x100))


def test_unaligned_base_rejected(store):
    with pytest.raises(StructuralError):
        store.insert(entry(HEAP + 16, 16))


def test_identical_tombstoned_range_is_replaced_in_place(store):
    ref = store.insert(entry(HEAP, 0x300))
    store.tombstone(ref)
    ref2 = store.insert(entry(HEAP, 0x300, tag=0x2A))
    assert ref2 == ref
    assert len(store) == 1
    res = store.find_containing(HEAP + 1)
    assert res.entry.tag(CFG) == 0x2A


def test_overlapping_tombstoned_range_is_removed(store):
    ref = store.insert(entry(HEAP, 0x300))
    store.tombstone(ref)
    ref2 = store.insert(entry(HEAP, 0x100, tag=0x2A))
    assert len(store) == 1 and ref2 != ref
    assert not store.find_containing(HEAP + 0x200).found


def test_tombstone_semantics(store):
    ref = store.insert(entry(HEAP, 0x300))
    store.tombstone(ref)
    assert store.read_at(ref).tag(CFG) == CFG.tombstone
    res = store.find_containing(HEAP + 0x10)
    assert res.found and res.entry.tag(CFG) == CFG.tombstone
    with pytest.raises(DoubleFreeError):
        store.tombstone(ref)


def test_reclamation_threshold(store):
    s = make_store(store.kind, CFG, reclaim_threshold=2)
    a = s.insert(entry(HEAP, 256))          # churn 1
    s.tombstone(a)                          # churn 2
    assert s.find_containing(HEAP).found
    s.insert(entry(HEAP + 256, 256))        # churn 3 > 2: reclaim
    assert not s.find_containing(HEAP).found
    assert s.reclaimed == 1
    with pytest.raises(StructuralError):
        s.read_at(a)


def test_storage_bytes():
    for kind, want in ((StoreKind.TREE, 320), (StoreKind.LIST, 320), (StoreKind.ORACLE, 160)):
        s = make_store(kind, CFG)
        assert s.storage_bytes() == 0
        for i in range(10):
            s.insert(entry(HEAP + i * 256, 256))
        assert s.storage_bytes() == want


def test_entry_bytes_roundtrip():
    e = entry(HEAP, 0x300)
    raw = e.to_bytes()
    assert len(raw) == 16
    assert MetadataEntry.from_bytes(raw) == e


def test_list_loads_follow_head_insertion():
    s = LinkedListStore(CFG)
    for i in range(3):   # A, B, C
        s.insert(entry(HEAP + i * 256, 256))
    assert s.find_containing(HEAP + 2 * 256).loads == 1   # C at head
    assert s.find_containing(HEAP).loads == 3             # A at tail
    assert s.find_containing(HEAP + 10 * 256).loads == 3  # miss walks everything


def test_tree_seven_entries_three_loads():
    s = TreeStore(CFG)
    for i in range(7):
        s.insert(entry(HEAP + i * 256, 256))
    assert s.height == 3
    for i in range(8):
        assert s.find_containing(HEAP + i * 256 + 8).loads <= 3


def test_oracle_always_one_load():
    s = OracleStore(CFG)
    assert s.find_containing(HEAP).loads == 1
    for i in range(50):
        s.insert(entry(HEAP + i * 256, 256))
    for addr in (HEAP, HEAP + 49 * 256 + 255, HEAP - 1, HEAP + 50 * 256):
        assert s.find_containing(addr).loads == 1


def test_tree_stays_balanced_under_churn():
    rng = random.Random(5)
    s = TreeStore(CFG, reclaim_threshold=50)
    live = {}
    for step in range(3000):
        slot = rng.randrange(400)
        if slot in live:
            s.tombstone(live.pop(slot))
        else:
            live[slot] = s.insert(entry(HEAP + slot * 256, 256, tag=rng.randint(1, 126)))
        n = len(s)
        if n:
            assert s.height <= 1.45 * math.log2(n + 2)
