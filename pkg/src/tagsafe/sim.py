"""Trace replay, workload characterization and analytic calculators."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import _kernels
from .core import CodecError
from .engine import Engine, EngineConfig, SafetyViolation, TraceError, Violation
from .metastore import StructuralError
from .trace import (Access, Alloc, CheckG, CheckS, Free, KernelBegin, KernelEnd, LoadMeta,
                    Nop)

_EVENT_NAMES = {
    KernelBegin: "kernel_begin", KernelEnd: "kernel_end", Alloc: "alloc", Free: "free",
    LoadMeta: "loadmeta", CheckG: "check_g", CheckS: "check_s", Access: "access", Nop: "nop",
}


@dataclass
class ReplayStats:
    config: dict
    events: dict = field(default_factory=dict)
    loads: dict = field(default_factory=dict)
    mlb: dict | None = None
    violations: list[Violation] = field(default_factory=list)
    kernels: list[dict] = field(default_factory=list)
    instr_mix: dict = field(default_factory=dict)
    storage_bytes: int = 0

    def violation_counts(self) -> dict:
        return dict(sorted(Counter(v.kind.value for v in self.violations).items()))

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "events": self.events,
            "loads": self.loads,
            "mlb": self.mlb,
            "violations": {
                "total": len(self.violations),
                "by_kind": self.violation_counts(),
                "list": [v.as_dict() for v in self.violations],
            },
            "kernels": self.kernels,
            "instr_mix": self.instr_mix,
            "storage_bytes": self.storage_bytes,
        }


def _snapshot(engine: Engine):
    c = engine.counters.as_dict()
    m = engine.mlb.stats.as_dict() if engine.mlb is not None else {}
    return c, m


def _delta(after, before):
    return {k: after[k] - before.get(k, 0) for k in after}


def replay(events, config: EngineConfig = EngineConfig()) -> ReplayStats:
    """Run every event through a fresh engine; violations are recorded, not raised."""
    engine = Engine(config)
    stats = ReplayStats(config=config.as_dict())
    counts = Counter()
    vregs: list[dict] = [{}]
    open_kernel = None

    for i, ev in enumerate(events):
        engine.event_index = i
        counts[_EVENT_NAMES[type(ev)]] += 1
        try:
            if isinstance(ev, Alloc):
                engine.alloc(ev.id, ev.size)
            elif isinstance(ev, Free):
                engine.free(ev.id)
            elif isinstance(ev, LoadMeta):
                ra = engine.pointer(ev.ptr.alloc_id, ev.ptr.offset)
                vregs[-1][ev.vreg] = engine.loadmeta(ra)
            elif isinstance(ev, CheckG):
                ra = engine.pointer(ev.ptr.alloc_id, ev.ptr.offset)
                if ev.vreg is None:
                    rb = 0
                elif ev.vreg in vregs[-1]:
                    rb = vregs[-1][ev.vreg]
                else:
                    raise TraceError(f"vreg {ev.vreg!r} undefined")
                engine.memcheck_g(ra, rb, ev.width)
            elif isinstance(ev, CheckS):
                engine.memcheck_s(ev.addr, ev.base, ev.size, ev.width)
            elif isinstance(ev, Access):
                ra = engine.pointer(ev.ptr.alloc_id, ev.ptr.offset)
                engine.hwonly_access(ra, ev.width)
            elif isinstance(ev, KernelBegin):
                vregs.append({})
                open_kernel = (ev.id, i, _snapshot(engine), len(stats.violations))
            elif isinstance(ev, KernelEnd):
                if len(vregs) > 1:
                    vregs.pop()
                if open_kernel is not None:
                    kid, start, (c0, m0), v0 = open_kernel
                    c1, m1 = _snapshot(engine)
                    stats.kernels.append({
                        "id": kid, "first_event": start, "last_event": i,
                        "loads": _delta(c1, c0), "mlb": _delta(m1, m0) if m1 else None,
                        "violations": len(stats.violations) - v0,
                    })
                    open_kernel = None
        except SafetyViolation as exc:
            stats.violations.append(exc.violation)
        except (TraceError, StructuralError, CodecError) as exc:
            raise TraceError(f"event {i}: {exc}") from exc

    stats.events = dict(sorted(counts.items()))
    stats.loads = {"store": engine.store.kind.value, **engine.counters.as_dict()}
    stats.mlb = engine.mlb.stats.as_dict() if engine.mlb is not None else None
    stats.instr_mix = instr_mix(events)
    stats.storage_bytes = engine.store.storage_bytes()
    return stats


# -- characterization -------------------------------------------------------------


def access_stream(events) -> list[int]:
    """Allocation ids in the order metadata-consuming events touch them."""
    return [ev.ptr.alloc_id for ev in events if isinstance(ev, (LoadMeta, CheckG, Access))]


def working_set(events) -> int:
    """Max allocation-level LRU stack distance; first touches count as 1."""
    ids = access_stream(events)
    if not ids:
        return 0
    d = _kernels.stack_distances(np.asarray(ids, dtype=np.int64))
    return max(1, int(d.max()))


def predict_mlb_misses(events, capacity: int) -> int:
    """MLB misses an LRU buffer of ``capacity`` lines takes on a clean trace.

    Works at allocation granularity: every L/G/X touches its allocation's
    line and every free invalidates it. Assumes checks fill on miss and all
    G events carry a valid metadata operand.
    """
    ids, ops = [], []
    for ev in events:
        if isinstance(ev, (LoadMeta, CheckG, Access)):
            ids.append(ev.ptr.alloc_id)
            ops.append(0)
        elif isinstance(ev, Free):
            ids.append(ev.id)
            ops.append(1)
    if not ids:
        return 0
    return int(_kernels.lru_misses(np.asarray(ids, dtype=np.int64),
                                   np.asarray(ops, dtype=np.int8), capacity))


def live_allocations(events) -> int:
    live = peak = 0
    for ev in events:
        if isinstance(ev, Alloc):
            live += 1
            peak = max(peak, live)
        elif isinstance(ev, Free):
            live -= 1
    return peak


def size_distribution(events) -> dict:
    sizes = [ev.size for ev in events if isinstance(ev, Alloc)]
    if not sizes:
        raise ValueError("size distribution of a trace without allocations")
    p25, p50, p75 = np.percentile(sizes, [25, 50, 75])
    return {"p25": float(p25), "p50": float(p50), "p75": float(p75),
            "min": min(sizes), "max": max(sizes), "count": len(sizes)}


def instr_mix(events) -> dict:
    g = s = other = 0
    for ev in events:
        if isinstance(ev, (CheckG, Access)):
            g += 1
        elif isinstance(ev, CheckS):
            s += 1
        elif isinstance(ev, Nop):
            other += ev.count
    total = g + s + other
    if total == 0:
        return {"global": 0.0, "shared": 0.0, "other": 0.0}
    return {"global": g / total, "shared": s / total, "other": other / total}


@dataclass(frozen=True)
class CharacterizationReport:
    sizes: dict | None
    live_allocations: int
    working_set: int
    instr_mix: dict

    def as_dict(self):
        return {"sizes": self.sizes, "live_allocations": self.live_allocations,
                "working_set": self.working_set, "instr_mix": self.instr_mix}


def characterize(events) -> CharacterizationReport:
    has_alloc = any(isinstance(ev, Alloc) for ev in events)
    return CharacterizationReport(
        sizes=size_distribution(events) if has_alloc else None,
        live_allocations=live_allocations(events),
        working_set=working_set(events),
        instr_mix=instr_mix(events),
    )


# -- analytic calculators -----------------------------------------------------


@dataclass(frozen=True)
class SchemeModel:
    name: str
    per_object_bytes: int | None = None
    bits_per_granule: int | None = None
    granule_bytes: int | None = None

    def __post_init__(self):
        per_granule = self.bits_per_granule is not None
        if per_granule == (self.per_object_bytes is not None):
            raise ValueError("scheme needs exactly one of per-object or per-granule cost")
        if per_granule:
            g = self.granule_bytes
            if g is None or g < 1 or g & (g - 1):
                raise ValueError("granule_bytes must be a power of two")

    def metadata_bytes(self, sizes) -> Fraction:
        if self.per_object_bytes is not None:
            return Fraction(self.per_object_bytes * len(sizes))
        g = self.granule_bytes
        bits = sum(-(-s // g) for s in sizes) * self.bits_per_granule
        return Fraction(bits, 8)


SCHEMES = {
    "cucatch": SchemeModel("cucatch", bits_per_granule=32, granule_bytes=32),
    "lak-a": SchemeModel("lak-a", bits_per_granule=8, granule_bytes=16),
    "lak-b": SchemeModel("lak-b", bits_per_granule=4, granule_bytes=16),
    "mte": SchemeModel("mte", bits_per_granule=4, granule_bytes=16),
    "gmod": SchemeModel("gmod", per_object_bytes=8),
    "clarmor": SchemeModel("clarmor", per_object_bytes=8),
    "compute-sanitizer": SchemeModel("compute-sanitizer", per_object_bytes=16),
    "tagged-list": SchemeModel("tagged-list", per_object_bytes=32),
    "tagged-tree": SchemeModel("tagged-tree", per_object_bytes=32),
    "tagged-sol": SchemeModel("tagged-sol", per_object_bytes=16),
    "imt": SchemeModel("imt", per_object_bytes=0),
}


def scheme(name: str) -> SchemeModel:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None


def storage_overhead(footprint_bytes: int, objects, model: SchemeModel):
    """(metadata bytes, percent of footprint).

    ``objects`` is either a list of object sizes or an object count, in which
    case the footprint is split evenly across that many objects.
    """
    if footprint_bytes <= 0:
        raise ValueError("footprint must be positive")
    if isinstance(objects, int):
        if objects < 1:
            raise ValueError("need at least one object")
        q, r = divmod(footprint_bytes, objects)
        sizes = [q + 1] * r + [q] * (objects - r)
    else:
        sizes = list(objects)
    meta = model.metadata_bytes(sizes)
    return meta, meta * 100 / footprint_bytes


def detection_rate(valid_tags: int) -> float:
    if valid_tags < 1:
        raise ValueError("need at least one valid tag")
    return 1 - 1 / valid_tags


def format_rate(rate: float, digits: int = 1) -> str:
    return f"{rate * 100:.{digits}f}%"


def fraction_to_json(x: Fraction):
    return int(x) if x.denominator == 1 else float(x)
