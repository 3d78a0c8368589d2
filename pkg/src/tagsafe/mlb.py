"""Metadata lookaside buffer: a tiny fully associative LRU cache of metadata."""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass

from .core import ArchConfig
from .metastore import MetadataEntry

MAX_CAPACITY = 64


@dataclass(frozen=True)
class MlbEntry:
    entry: MetadataEntry
    location: int

    def to_bytes(self) -> bytes:
        return self.entry.to_bytes() + struct.pack("<Q", self.location)


@dataclass(frozen=True)
class MlbConfig:
    capacity: int = 8
    fill_on_check: bool = True

    def __post_init__(self):
        if not 1 <= self.capacity <= MAX_CAPACITY:
            raise ValueError(f"MLB capacity must be in [1, {MAX_CAPACITY}], got {self.capacity}")


@dataclass
class MlbStats:
    lookups: int = 0
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    invalidations: int = 0

    def as_dict(self):
        return asdict(self)


class Mlb:
    def __init__(self, config: MlbConfig, cfg: ArchConfig):
        self.config = config
        self.cfg = cfg
        self.stats = MlbStats()
        # location -> MlbEntry, least recently used first
        self._lines: OrderedDict[int, MlbEntry] = OrderedDict()

    def __len__(self):
        return len(self._lines)

    def __contains__(self, location):
        return location in self._lines

    def residents(self) -> list[MlbEntry]:
        return list(self._lines.values())

    def _record(self, hit: bool):
        self.stats.lookups += 1
        if hit:
            self.stats.hits += 1
        else:
            self.stats.misses += 1

    def lookup_by_addr(self, addr: int) -> MlbEntry | None:
        va_mask = self.cfg.va_mask
        for loc, line in self._lines.items():
            e = line.entry
            if 0 <= addr - (e.base_tagged & va_mask) < e.size:
                self._lines.move_to_end(loc)
                self._record(True)
                return line
        self._record(False)
        return None

    def lookup_by_location(self, location: int) -> MlbEntry | None:
        line = self._lines.get(location)
        if line is not None:
            self._lines.move_to_end(location)
        self._record(line is not None)
        return line

    def fill(self, line: MlbEntry) -> None:
        if line.entry.tag(self.cfg) == self.cfg.tombstone:
            raise ValueError("tombstoned metadata must never be cached")
        if line.location in self._lines:
            self._lines[line.location] = line
            self._lines.move_to_end(line.location)
            return
        if len(self._lines) >= self.config.capacity:
            self._lines.popitem(last=False)
            self.stats.evictions += 1
        self._lines[line.location] = line

    def invalidate(self, location: int) -> None:
        if self._lines.pop(location, None) is not None:
            self.stats.invalidations += 1
