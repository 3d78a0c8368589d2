import pytest

from tagsafe.core import PRESETS, encode
from tagsafe.metastore import MetadataEntry
from tagsafe.mlb import Mlb, MlbConfig, MlbEntry

CFG = PRESETS["va57t7"]


def line(base, size, loc, tag=3):
    return MlbEntry(MetadataEntry(encode(base, tag, CFG), size), loc)


def test_empty_misses():
    m = Mlb(MlbConfig(), CFG)
    assert m.lookup_by_addr(0x1000) is None
    assert m.stats.misses == 1


def test_half_open_range():
    m = Mlb(MlbConfig(), CFG)
    m.fill(line(0x1000, 0x100, 1))
    assert m.lookup_by_addr(0x10FF) is not None
    assert m.lookup_by_addr(0x1100) is None


def test_disjoint_residents():
    m = Mlb(MlbConfig(), CFG)
    m.fill(line(0x1000, 0x100, 1))
    m.fill(line(0x2000, 0x100, 2))
    assert m.lookup_by_addr(0x2010).location == 2


def test_location_lookup_and_invalidate():
    m = Mlb(MlbConfig(), CFG)
    m.fill(line(0x1000, 0x100, 7))
    assert m.lookup_by_location(7) is not None
    assert m.lookup_by_location(8) is None
    m.invalidate(7)
    assert m.lookup_by_location(7) is None
    assert m.lookup_by_addr(0x1000) is None
    m.invalidate(7)  # absent: no-op
    assert m.stats.invalidations == 1
    m.fill(line(0x1000, 0x100, 7, tag=9))
    assert m.lookup_by_addr(0x1000).entry.tag(CFG) == 9


def test_lru_eviction():
    m = Mlb(MlbConfig(8), CFG)
    for i in range(9):
        m.fill(line(0x1000 * (i + 1), 0x100, i))
    assert 0 not in m and all(i in m for i in range(1, 9))
    assert m.stats.evictions == 1


def test_touch_protects_from_eviction():
    m = Mlb(MlbConfig(2), CFG)
    m.fill(line(0x1000, 0x100, 1))
    m.fill(line(0x2000, 0x100, 2))
    m.lookup_by_location(1)
    m.fill(line(0x3000, 0x100, 3))
    assert 1 in m and 2 not in m


def test_refill_refreshes():
    m = Mlb(MlbConfig(), CFG)
    m.fill(line(0x1000, 0x100, 1))
    m.fill(line(0x1000, 0x100, 1))
    assert len(m) == 1


def test_capacity_one():
    m = Mlb(MlbConfig(1), CFG)
    m.fill(line(0x1000, 0x100, 1))
    m.fill(line(0x2000, 0x100, 2))
    assert [r.location for r in m.residents()] == [2]


def test_tombstoned_fill_rejected():
    m = Mlb(MlbConfig(), CFG)
    with pytest.raises(ValueError):
        m.fill(line(0x1000, 0x100, 1, tag=CFG.tombstone))


@pytest.mark.parametrize("cap", [0, 65])
def test_capacity_bounds(cap):
    with pytest.raises(ValueError):
        MlbConfig(cap)


def test_line_bytes():
    assert len(line(0x1000, 0x100, 1).to_bytes()) == 24
