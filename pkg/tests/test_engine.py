import pytest

from tagsafe.core import PRESETS, encode, mask, preset, tag_of
from tagsafe.engine import (HEAP_BASE, BumpAllocator, Engine, EngineConfig, EngineMode,
                            SafetyViolation, TraceError, ViolationKind)
from tagsafe.metastore import StoreKind
from tagsafe.mlb import MlbConfig

CFG = PRESETS["va57t7"]


def violation(fn, *args):
    with pytest.raises(SafetyViolation) as exc:
        fn(*args)
    return exc.value.violation.kind


def test_bump_allocator_alignment_and_reuse():
    h = BumpAllocator()
    a = h.alloc(1)
    b = h.alloc(300)
    c = h.alloc(16)
    assert a == HEAP_BASE and b == a + 256 and c == b + 512
    h.free(b, 300)
    assert h.alloc(299) == c + 256   # exact-size reuse only
    assert h.alloc(300) == b


def test_first_alloc_aligned():
    e = Engine()
    rec = e.alloc(1, 1)
    assert mask(rec.base_tagged, CFG) % 256 == 0
    assert 1 <= tag_of(rec.base_tagged, CFG) <= 126


def test_realloc_same_size_same_base_new_tag_rate():
    # oracle: 125/126 of re-draws differ, binomial over 20000 seeded draws
    differ = 0
    n = 20000
    e = Engine(EngineConfig(seed=11))
    for i in range(n):
        a = e.alloc(2 * i, 512)
        e.free(2 * i)
        b = e.alloc(2 * i + 1, 512)
        assert mask(a.base_tagged, CFG) == mask(b.base_tagged, CFG)
        differ += tag_of(a.base_tagged, CFG) != tag_of(b.base_tagged, CFG)
        e.free(2 * i + 1)
    p = 125 / 126
    sd = (n * p * (1 - p)) ** 0.5
    assert abs(differ - n * p) < 4 * sd


def test_distinct_adjacent_tags():
    e = Engine(EngineConfig(arch=preset("va57t7", distinct_adjacent_tags=True), seed=2))
    tags = [tag_of(e.alloc(i, 256).base_tagged, CFG) for i in range(3000)]
    assert all(x != y for x, y in zip(tags, tags[1:]))


def test_free_then_hwonly_is_temporal():
    e = Engine(EngineConfig(mode=EngineMode.HWONLY))
    e.alloc(1, 768)
    p = e.pointer(1, 100)
    e.free(1)
    assert violation(e.hwonly_access, p, 4) is ViolationKind.TEMPORAL


def test_free_invalidates_mlb():
    e = Engine()
    rec = e.alloc(1, 768)
    assert e.loadmeta(e.pointer(1)) == rec.ref
    assert rec.ref in e.mlb
    e.free(1)
    assert rec.ref not in e.mlb
    assert e.mlb.lookup_by_addr(mask(rec.base_tagged, CFG)) is None


def test_double_free_and_unknown_ids_are_trace_errors():
    e = Engine()
    e.alloc(1, 256)
    e.free(1)
    with pytest.raises(TraceError):
        e.free(1)
    with pytest.raises(TraceError):
        e.free(9)
    with pytest.raises(TraceError):
        e.alloc(1, 256)
    with pytest.raises(TraceError):
        e.pointer(5)


def _fixed_alloc(e, tag=0x15, size=0x300):
    rec = e.alloc(1, size)
    base = mask(rec.base_tagged, CFG)
    return rec, base, tag_of(rec.base_tagged, CFG)


def test_loadmeta():
    e = Engine()
    rec, base, tag = _fixed_alloc(e)
    assert e.loadmeta(encode(base + 0x100, tag, CFG)) == rec.ref
    assert e.mlb.lookup_by_location(rec.ref) is not None
    wrong = tag % 126 + 1
    assert e.loadmeta(encode(base + 0x100, wrong, CFG)) == 0
    assert e.loadmeta(encode(base + 0x10000, tag, CFG)) == 0
    assert e.loadmeta(base) == 0   # untagged


def test_memcheck_g_bounds():
    e = Engine()
    rec, base, tag = _fixed_alloc(e)
    ref = e.loadmeta(e.pointer(1))
    assert e.memcheck_g(e.pointer(1, 0x300 - 4), ref, 4) == base + 0x2FC
    assert violation(e.memcheck_g, e.pointer(1, 0x300), ref, 4) is ViolationKind.SPATIAL_OOB
    assert violation(e.memcheck_g, e.pointer(1, 0x2FE), ref, 4) is ViolationKind.SPATIAL_OOB
    assert violation(e.memcheck_g, e.pointer(1, -4), ref, 4) is ViolationKind.SPATIAL_OOB
    # null metadata and untagged pointers pass through
    assert e.memcheck_g(e.pointer(1, 0x1000), 0, 4) == base + 0x1000
    assert e.memcheck_g(base + 0x1000, ref, 4) == base + 0x1000


def test_point_check_ignores_width():
    e = Engine(EngineConfig(point_check=True))
    _fixed_alloc(e)
    ref = e.loadmeta(e.pointer(1))
    e.memcheck_g(e.pointer(1, 0x2FE), ref, 4)
    assert violation(e.memcheck_g, e.pointer(1, 0x300), ref, 4) is ViolationKind.SPATIAL_OOB


@pytest.mark.parametrize("mlb", [MlbConfig(), None])
def test_free_between_loadmeta_and_check_is_temporal(mlb):
    e = Engine(EngineConfig(mlb=mlb))
    _fixed_alloc(e)
    ref = e.loadmeta(e.pointer(1))
    e.free(1)
    assert violation(e.memcheck_g, e.pointer(1, 8), ref, 4) is ViolationKind.TEMPORAL


def test_reclaimed_ref_is_temporal():
    e = Engine(EngineConfig(reclaim_threshold=2, mlb=None))
    _fixed_alloc(e)
    ref = e.loadmeta(e.pointer(1))
    e.free(1)
    e.alloc(2, 256)   # churn 3 > 2 reclaims the tombstone
    assert violation(e.memcheck_g, e.pointer(1, 8), ref, 4) is ViolationKind.TEMPORAL


def test_memcheck_s():
    e = Engine()
    e.memcheck_s(0x120, 0x100, 0x40, 4)
    assert violation(e.memcheck_s, 0x140, 0x100, 0x40, 4) is ViolationKind.SHARED_SPATIAL
    assert violation(e.memcheck_s, 0xFC, 0x100, 0x40, 4) is ViolationKind.SHARED_SPATIAL
    assert violation(e.memcheck_s, 0x13E, 0x100, 0x40, 4) is ViolationKind.SHARED_SPATIAL


def test_hwonly_cross_allocation_and_unmapped():
    e = Engine(EngineConfig(mode=EngineMode.HWONLY, seed=1))
    a = e.alloc(1, 256)
    b = e.alloc(2, 256)
    assert tag_of(a.base_tagged, CFG) != tag_of(b.base_tagged, CFG)  # seed chosen for distinct draws
    assert violation(e.hwonly_access, e.pointer(1, 256), 4) is ViolationKind.TEMPORAL
    assert violation(e.hwonly_access, e.pointer(1, 4096), 4) is ViolationKind.UNMAPPED
    assert violation(e.hwonly_access, e.pointer(1, 254), 4) is ViolationKind.SPATIAL_OOB
    e.hwonly_access(e.pointer(2, 252), 4)


@pytest.mark.parametrize("kind", list(StoreKind))
def test_mlb_disabled_counts_every_traversal(kind):
    e = Engine(EngineConfig(store=kind, mlb=None))
    e.alloc(1, 256)
    for _ in range(5):
        e.loadmeta(e.pointer(1))
    assert e.counters.traversals == 5


def test_config_dict_is_json_ready():
    import json
    d = EngineConfig().as_dict()
    assert json.loads(json.dumps(d)) == d
    assert d["reclaim_threshold"] is None and d["arch"]["preset"] == "va57t7"
