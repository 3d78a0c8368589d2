"""Allocator runtime and the metadata/check instruction semantics.

The engine owns one metadata store, one MLB and a simulated heap. Pointers
handed back by ``alloc`` carry a random tag; ``free`` tombstones the entry so
any stale-tagged access mismatches. ``loadmeta`` never faults, while
``memcheck_g``, ``memcheck_s`` and ``hwonly_access`` raise
``SafetyViolation`` when a check fails.
"""
from __future__ import annotations

import enum
import math
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field

from sortedcontainers import SortedDict

from .core import ArchConfig, PRESETS, encode, mask, tag_of
from .metastore import MetadataEntry, StoreKind, StructuralError, make_store
from .mlb import Mlb, MlbConfig, MlbEntry

HEAP_BASE = 0x1_0000_0000
U32 = 0xFFFF_FFFF


class TraceError(RuntimeError):
    """The trace itself is malformed (double free, unknown id, ...)."""


class EngineMode(str, enum.Enum):
    COMPILED = "compiled"
    HWONLY = "hwonly"


class ViolationKind(str, enum.Enum):
    SPATIAL_OOB = "spatial_oob"
    TEMPORAL = "temporal"
    SHARED_SPATIAL = "shared_spatial"
    UNMAPPED = "unmapped_access"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    event_index: int
    addr: int
    entry: MetadataEntry | None = None

    def as_dict(self):
        d = {"kind": self.kind.value, "event_index": self.event_index, "addr": hex(self.addr)}
        if self.entry is not None:
            d["entry"] = {"base_tagged": hex(self.entry.base_tagged), "size": self.entry.size}
        return d


class SafetyViolation(Exception):
    def __init__(self, violation: Violation):
        super().__init__(f"{violation.kind.value} at {violation.addr:#x}")
        self.violation = violation


class AllocState(str, enum.Enum):
    LIVE = "live"
    FREED = "freed"


@dataclass
class AllocRecord:
    id: int
    base_tagged: int
    size: int
    ref: int
    state: AllocState = AllocState.LIVE


@dataclass(frozen=True)
class EngineConfig:
    arch: ArchConfig = PRESETS["va57t7"]
    store: StoreKind = StoreKind.TREE
    mlb: MlbConfig | None = field(default_factory=MlbConfig)
    mode: EngineMode = EngineMode.COMPILED
    seed: int = 0
    reclaim_threshold: float = math.inf
    point_check: bool = False

    def as_dict(self):
        return {
            "arch": {**asdict(self.arch), "preset": self.arch.preset_name},
            "store": StoreKind(self.store).value,
            "mlb": None if self.mlb is None else asdict(self.mlb),
            "mode": EngineMode(self.mode).value,
            "seed": self.seed,
            "reclaim_threshold": None if math.isinf(self.reclaim_threshold) else self.reclaim_threshold,
            "point_check": self.point_check,
        }


class BumpAllocator:
    """Aligned bump allocation with LIFO exact-size reuse of freed regions."""

    def __init__(self, alignment: int = 256, heap_base: int = HEAP_BASE):
        self.alignment = alignment
        self.top = heap_base
        self._free = defaultdict(list)

    def alloc(self, size: int) -> int:
        stack = self._free.get(size)
        if stack:
            return stack.pop()
        base = self.top
        self.top += -(-size // self.alignment) * self.alignment
        return base

    def free(self, base: int, size: int) -> None:
        self._free[size].append(base)


@dataclass
class Counters:
    traversals: int = 0
    traversal_loads: int = 0
    location_reads: int = 0

    @property
    def loads(self):
        return self.traversal_loads + self.location_reads

    def as_dict(self):
        return {**asdict(self), "loads": self.loads}


class Engine:
    def __init__(self, config: EngineConfig = EngineConfig()):
        self.config = config
        self.cfg = config.arch
        self.store = make_store(config.store, self.cfg, config.reclaim_threshold)
        self.mlb = Mlb(config.mlb, self.cfg) if config.mlb is not None else None
        self.rng = random.Random(config.seed)
        self.heap = BumpAllocator(self.cfg.alignment)
        self.records: dict[int, AllocRecord] = {}
        self._live_by_base = SortedDict()
        self.counters = Counters()
        self.event_index = -1

    # -- allocator runtime -------------------------------------------------

    def _neighbour_tags(self, base: int) -> set[int]:
        tags = set()
        idx = self._live_by_base.bisect_left(base)
        for j in (idx - 1, idx):
            if 0 <= j < len(self._live_by_base):
                rec = self.records[self._live_by_base.peekitem(j)[1]]
                tags.add(tag_of(rec.base_tagged, self.cfg))
        return tags

    def _draw_tag(self, base: int) -> int:
        hi = self.cfg.tombstone - 1
        tag = self.rng.randint(1, hi)
        if self.cfg.distinct_adjacent_tags:
            taken = self._neighbour_tags(base)
            while tag in taken:
                tag = self.rng.randint(1, hi)
        return tag

    def alloc(self, id: int, size: int) -> AllocRecord:
        if size < 1:
            raise TraceError(f"allocation {id} has size {size}")
        if id in self.records:
            raise TraceError(f"allocation id {id} reused")
        base = self.heap.alloc(size)
        tagged = encode(base, self._draw_tag(base), self.cfg)
        ref = self.store.insert(MetadataEntry(tagged, size))
        rec = AllocRecord(id, tagged, size, ref)
        self.records[id] = rec
        self._live_by_base[base] = id
        return rec

    def free(self, id: int) -> None:
        rec = self.records.get(id)
        if rec is None:
            raise TraceError(f"free of unknown allocation {id}")
        if rec.state is AllocState.FREED:
            raise TraceError(f"double free of allocation {id}")
        self.store.tombstone(rec.ref)
        if self.mlb is not None:
            self.mlb.invalidate(rec.ref)
        base = mask(rec.base_tagged, self.cfg)
        self.heap.free(base, rec.size)
        del self._live_by_base[base]
        rec.state = AllocState.FREED

    def pointer(self, id: int, offset: int = 0) -> int:
        """Tagged address ``offset`` bytes from allocation ``id``'s base, using its allocation-time tag."""
        rec = self.records.get(id)
        if rec is None:
            raise TraceError(f"pointer into unknown allocation {id}")
        va = (mask(rec.base_tagged, self.cfg) + offset) & self.cfg.va_mask
        return encode(va, tag_of(rec.base_tagged, self.cfg), self.cfg)

    # -- metadata resolution ---------------------------------------------

    def _violation(self, kind, addr, entry=None):
        return SafetyViolation(Violation(kind, self.event_index, addr, entry))

    def _fill(self, entry: MetadataEntry, ref: int) -> None:
        if self.mlb is not None and entry.tag(self.cfg) != self.cfg.tombstone:
            self.mlb.fill(MlbEntry(entry, ref))

    def _resolve_addr(self, addr: int):
        """Covering (entry, ref) for an untagged address via MLB then store."""
        if self.mlb is not None:
            line = self.mlb.lookup_by_addr(addr)
            if line is not None:
                return line.entry, line.location
        res = self.store.find_containing(addr)
        self.counters.traversals += 1
        self.counters.traversal_loads += res.loads
        if not res.found:
            return None, 0
        self._fill(res.entry, res.ref)
        return res.entry, res.ref

    def _resolve_ref(self, ref: int) -> MetadataEntry | None:
        if self.mlb is not None:
            line = self.mlb.lookup_by_location(ref)
            if line is not None:
                return line.entry
        self.counters.location_reads += 1
        try:
            entry = self.store.read_at(ref)
        except StructuralError:
            return None
        if self.config.mlb is not None and self.config.mlb.fill_on_check:
            self._fill(entry, ref)
        return entry

    def _bounds_ok(self, offset: int, width: int, size: int) -> bool:
        if offset < 0 or offset >= size:
            return False
        return self.config.point_check or offset + width <= size

    # -- instructions ------------------------------------------------------

    def loadmeta(self, ra: int) -> int:
        """Metadata location for root pointer ``ra``, or 0. Never faults."""
        cfg = self.cfg
        tag = tag_of(ra, cfg)
        if tag == 0:
            return 0
        addr = mask(ra, cfg)
        entry, ref = self._resolve_addr(addr)
        if entry is None:
            return 0
        if not entry.contains(addr, cfg) or entry.tag(cfg) != tag:
            return 0
        return ref

    def memcheck_g(self, ra: int, rb: int, width: int) -> int:
        cfg = self.cfg
        addr = mask(ra, cfg)
        if rb == 0 or tag_of(ra, cfg) == 0:
            return addr
        entry = self._resolve_ref(rb)
        if entry is None:
            # the node was reclaimed after the root was resolved
            raise self._violation(ViolationKind.TEMPORAL, ra)
        if not self._bounds_ok(addr - entry.base(cfg), width, entry.size):
            raise self._violation(ViolationKind.SPATIAL_OOB, ra, entry)
        if tag_of(ra, cfg) != entry.tag(cfg):
            raise self._violation(ViolationKind.TEMPORAL, ra, entry)
        return addr

    def memcheck_s(self, ra: int, rb: int, rc: int, width: int) -> None:
        offset = ((ra & U32) - (rb & U32)) & U32
        if not self._bounds_ok(offset, width, rc & U32):
            raise self._violation(ViolationKind.SHARED_SPATIAL, ra)

    def hwonly_access(self, ra: int, width: int) -> int:
        cfg = self.cfg
        addr = mask(ra, cfg)
        if tag_of(ra, cfg) == 0:
            return addr
        entry, _ = self._resolve_addr(addr)
        if entry is None:
            raise self._violation(ViolationKind.UNMAPPED, ra)
        if not self._bounds_ok(addr - entry.base(cfg), width, entry.size):
            raise self._violation(ViolationKind.SPATIAL_OOB, ra, entry)
        if tag_of(ra, cfg) != entry.tag(cfg):
            raise self._violation(ViolationKind.TEMPORAL, ra, entry)
        return addr
