from fractions import Fraction

import pytest

from tagsafe.engine import EngineConfig, EngineMode, TraceError, ViolationKind
from tagsafe.metastore import StoreKind
from tagsafe.mlb import MlbConfig
from tagsafe.sim import (SCHEMES, SchemeModel, characterize, detection_rate, format_rate,
                         instr_mix, live_allocations, predict_mlb_misses, replay, scheme,
                         size_distribution, storage_overhead, working_set)
from tagsafe.trace import (Access, Alloc, CheckG, CheckS, Free, LoadMeta, Nop, PtrExpr, SynthSpec,
                           generate, parse)

from .oracles import lru_misses


def touches(seq):
    """Alloc each id once (256B) then one X access per id in ``seq``."""
    ids = sorted(set(seq))
    return [Alloc(i, 256) for i in ids] + [Access("LD", PtrExpr(i, 0), 4) for i in seq]


@pytest.mark.parametrize("kind", list(StoreKind))
@pytest.mark.parametrize("mlb", [None, MlbConfig(1), MlbConfig(8)])
@pytest.mark.parametrize("style", ["compiled", "hwonly"])
def test_clean_traces_have_no_violations(kind, mlb, style):
    evs = generate(SynthSpec(allocs=40, working_set=6, kernels=3, style=style, seed=1,
                             free_policy="eager", shared_per_access=1, nops_per_access=2))
    mode = EngineMode(style)
    stats = replay(evs, EngineConfig(store=kind, mlb=mlb, mode=mode))
    assert stats.violations == []


def test_three_allocations_eight_entry_mlb():
    evs = touches([1, 2, 3] * 10)
    stats = replay(evs, EngineConfig(mlb=MlbConfig(8)))
    assert stats.loads["traversals"] == 3


def test_capacity_one_round_robin_always_misses():
    evs = touches([1, 2, 3] * 10)
    stats = replay(evs, EngineConfig(mlb=MlbConfig(1)))
    assert stats.mlb["misses"] == 30 and stats.loads["traversals"] == 30


def test_predicted_misses_match_replay():
    for cap in (1, 2, 4, 8):
        evs = generate(SynthSpec(allocs=30, working_set=5, kernels=2, style="hwonly", seed=cap,
                                 free_policy="eager"))
        stats = replay(evs, EngineConfig(mlb=MlbConfig(cap), mode=EngineMode.HWONLY))
        assert stats.mlb["misses"] == predict_mlb_misses(evs, cap)


def test_working_set_examples():
    assert working_set(touches([1, 2, 1, 3, 2])) == 3
    assert working_set(touches([1] * 5)) == 1
    assert working_set(touches([1, 2, 3, 4])) == 1
    assert working_set([]) == 0


def test_working_set_is_min_capacity_without_capacity_misses():
    evs = generate(SynthSpec(allocs=25, working_set=6, kernels=2, style="hwonly", seed=9))
    ids = [ev.ptr.alloc_id for ev in evs if isinstance(ev, Access)]
    compulsory = len(set(ids))
    ops = [0] * len(ids)
    assert lru_misses(ids, ops, 6) == compulsory
    assert lru_misses(ids, ops, 5) > compulsory


def test_live_allocations():
    evs = [Alloc(1, 256), Alloc(2, 256), Free(1), Alloc(3, 256)]
    assert live_allocations(evs) == 2
    assert live_allocations([Alloc(i, 256) for i in range(1081)]) == 1081
    assert live_allocations([]) == 0


def test_size_distribution():
    d = size_distribution([Alloc(1, 256), Alloc(2, 512), Alloc(3, 1024)])
    assert d["p50"] == 512
    one = size_distribution([Alloc(1, 768)])
    assert one["p25"] == one["p50"] == one["p75"] == 768
    evs = generate(SynthSpec(allocs=300, seed=3))
    assert size_distribution(evs)["min"] >= 256


def test_instr_mix():
    evs = [Alloc(1, 256)] + [Access("LD", PtrExpr(1, 0), 4)] * 6 \
        + [CheckS(0, 0, 64, 4)] * 6 + [Nop(88)]
    mix = instr_mix(evs)
    assert mix == {"global": 0.06, "shared": 0.06, "other": 0.88}
    assert instr_mix([Nop(5)]) == {"global": 0.0, "shared": 0.0, "other": 1.0}
    assert instr_mix([]) == {"global": 0.0, "shared": 0.0, "other": 0.0}


def test_characterize_report():
    rep = characterize(generate(SynthSpec(allocs=12, working_set=3, seed=2)))
    assert rep.working_set == 3 and rep.live_allocations == 12
    assert set(rep.as_dict()) == {"sizes", "live_allocations", "working_set", "instr_mix"}


def test_concurrent_free_refetch_is_temporal():
    evs = parse("A 1 768\nL v 1+0\nF 1\nG LD v 1+16 4\n")
    for mlb in (None, MlbConfig()):
        stats = replay(evs, EngineConfig(mlb=mlb))
        assert [v.kind for v in stats.violations] == [ViolationKind.TEMPORAL]
        assert stats.violations[0].event_index == 3


def test_violations_recorded_trace_errors_raised():
    stats = replay(parse("A 1 256\nX LD 1+256 4\nX LD 1+0 4\n"), EngineConfig(mode=EngineMode.HWONLY))
    assert len(stats.violations) == 1
    with pytest.raises(TraceError, match="event 2"):
        replay([Alloc(1, 256), Free(1), Free(1)])


def test_per_kernel_deltas_sum_to_totals():
    evs = generate(SynthSpec(allocs=20, working_set=4, kernels=4, seed=5))
    stats = replay(evs)
    assert sum(k["loads"]["loads"] for k in stats.kernels) == stats.loads["loads"]
    assert sum(k["mlb"]["lookups"] for k in stats.kernels) == stats.mlb["lookups"]


# -- calculators -------------------------------------------------------------


def test_storage_reference_values():
    kb32 = 32 * 1024
    assert storage_overhead(kb32, 1, scheme("mte"))[0] == 1024
    assert storage_overhead(kb32, 1, scheme("lak-a"))[0] == 2048
    assert storage_overhead(kb32, 1, scheme("tagged-sol"))[0] == 16
    assert storage_overhead(kb32, 1, scheme("mte"))[0] / storage_overhead(kb32, 1, scheme("tagged-sol"))[0] == 64
    assert storage_overhead(kb32, 1, scheme("cucatch"))[1] == Fraction(25, 2)


def test_storage_object_split_and_rounding():
    # 3 objects of 1000 bytes: ceil(1000/16)=63 granules each at 4 bits
    meta, _ = storage_overhead(3000, 3, scheme("mte"))
    assert meta == Fraction(3 * 63 * 4, 8)
    meta, pct = storage_overhead(3000, [1000, 2000], scheme("gmod"))
    assert meta == 16 and pct == Fraction(1600, 3000)
    with pytest.raises(ValueError):
        storage_overhead(0, 1, scheme("mte"))
    with pytest.raises(ValueError):
        scheme("nope")
    with pytest.raises(ValueError):
        SchemeModel("bad", per_object_bytes=8, bits_per_granule=4, granule_bytes=16)
    assert SCHEMES["imt"].metadata_bytes([4096]) == 0


def test_detection_rate():
    assert detection_rate(126) == 1 - 1 / 126
    assert format_rate(detection_rate(126)) == "99.2%"
    assert detection_rate(1) == 0
    assert detection_rate(65534) == pytest.approx(0.99998474, abs=1e-8)
    with pytest.raises(ValueError):
        detection_rate(0)
