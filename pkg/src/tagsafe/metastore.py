"""Allocation metadata structures with load-cost accounting.

Three interchangeable stores hold one 16-byte ``MetadataEntry`` per
allocation at a stable simulated location:

* ``LinkedListStore`` - head insertion, linear containment search.
* ``TreeStore`` - AVL tree keyed by untagged base.
* ``OracleStore`` - exact lookup with unit cost, used as a cost baseline.

Every lookup reports how many 16-byte metadata loads it performed.
"""
from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass

from sortedcontainers import SortedDict

from .core import ArchConfig, encode, mask, tag_of

METADATA_REGION_BASE = 0x7000_0000_0000
ENTRY_BYTES = 16
NODE_BYTES = 32


class StructuralError(RuntimeError):
    """The driving trace asked the store to do something impossible."""


class DoubleFreeError(StructuralError):
    pass


class StoreKind(str, enum.Enum):
    LIST = "list"
    TREE = "tree"
    ORACLE = "oracle"


@dataclass(frozen=True)
class MetadataEntry:
    base_tagged: int
    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("metadata entry size must be >= 1")

    def base(self, cfg: ArchConfig) -> int:
        return mask(self.base_tagged, cfg)

    def tag(self, cfg: ArchConfig) -> int:
        return tag_of(self.base_tagged, cfg)

    def contains(self, addr: int, cfg: ArchConfig) -> bool:
        return 0 <= addr - mask(self.base_tagged, cfg) < self.size

    def to_bytes(self) -> bytes:
        return struct.pack("<QQ", self.base_tagged, self.size)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "MetadataEntry":
        return cls(*struct.unpack("<QQ", raw))


@dataclass(frozen=True)
class LookupResult:
    found: bool
    ref: int = 0
    entry: MetadataEntry | None = None
    loads: int = 0


class MetadataStore:
    """Shared bookkeeping: node locations, overlap checks, reclamation.

    Subclasses implement the structure-specific link/unlink and the
    cost-counted ``find_containing``.
    """

    kind: StoreKind
    stride = NODE_BYTES

    def __init__(self, cfg: ArchConfig, reclaim_threshold: float = math.inf,
                 region_base: int = METADATA_REGION_BASE):
        self.cfg = cfg
        self.region_base = region_base
        self.reclaim_threshold = reclaim_threshold
        self._entries: dict[int, MetadataEntry] = {}
        # untagged base -> location, for structural checks only (never cost-counted)
        self._by_base = SortedDict()
        self._next_slot = 0
        self._churn = 0
        self.reclaimed = 0

    def __len__(self):
        return len(self._entries)

    def _fresh_location(self) -> int:
        loc = self.region_base + self._next_slot * self.stride
        self._next_slot += 1
        return loc

    def _overlapping(self, lo: int, hi: int) -> list[int]:
        locs = []
        idx = self._by_base.bisect_right(lo) - 1
        if idx >= 0:
            base, loc = self._by_base.peekitem(idx)
            if base + self._entries[loc].size > lo:
                locs.append(loc)
        for base in self._by_base.irange(lo, hi, inclusive=(False, False)):
            locs.append(self._by_base[base])
        return locs

    def is_tombstoned(self, entry: MetadataEntry) -> bool:
        return entry.tag(self.cfg) == self.cfg.tombstone

    def insert(self, entry: MetadataEntry) -> int:
        lo = entry.base(self.cfg)
        if lo % self.cfg.alignment:
            raise StructuralError(f"base {lo:#x} is not {self.cfg.alignment}-aligned")
        hi = lo + entry.size
        reuse = None
        for loc in self._overlapping(lo, hi):
            old = self._entries[loc]
            if not self.is_tombstoned(old):
                raise StructuralError(
                    f"range [{lo:#x}, {hi:#x}) overlaps live allocation at {old.base(self.cfg):#x}"
                )
            if old.base(self.cfg) == lo and old.size == entry.size:
                reuse = loc
            else:
                self._remove(loc)
        if reuse is not None:
            self._entries[reuse] = entry
            loc = reuse
        else:
            loc = self._fresh_location()
            self._entries[loc] = entry
            self._by_base[lo] = loc
            self._link(loc, lo)
        self._count_churn()
        return loc

    def read_at(self, ref: int) -> MetadataEntry:
        try:
            return self._entries[ref]
        except KeyError:
            raise StructuralError(f"no metadata node at {ref:#x}") from None

    def tombstone(self, ref: int) -> None:
        entry = self.read_at(ref)
        if self.is_tombstoned(entry):
            raise DoubleFreeError(f"metadata at {ref:#x} is already tombstoned")
        dead = encode(entry.base(self.cfg), self.cfg.tombstone, self.cfg)
        self._entries[ref] = MetadataEntry(dead, entry.size)
        self._count_churn()

    def _count_churn(self):
        self._churn += 1
        if self._churn > self.reclaim_threshold:
            self._churn = 0
            for loc in [l for l, e in self._entries.items() if self.is_tombstoned(e)]:
                self._remove(loc)
                self.reclaimed += 1

    def _remove(self, loc: int) -> None:
        entry = self._entries.pop(loc)
        base = entry.base(self.cfg)
        del self._by_base[base]
        self._unlink(loc, base)

    def storage_bytes(self) -> int:
        return self.stride * len(self._entries)

    def entries(self):
        """Yield (location, entry) pairs in location order."""
        return sorted(self._entries.items())

    # structure hooks
    def _link(self, loc: int, base: int) -> None:
        raise NotImplementedError

    def _unlink(self, loc: int, base: int) -> None:
        raise NotImplementedError

    def find_containing(self, addr: int) -> LookupResult:
        raise NotImplementedError


class LinkedListStore(MetadataStore):
    kind = StoreKind.LIST

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # stored tail-first so head insertion is an append; head is the last element
        self._order: list[int] = []

    def _link(self, loc, base):
        self._order.append(loc)

    def _unlink(self, loc, base):
        self._order.remove(loc)

    def find_containing(self, addr: int) -> LookupResult:
        cfg = self.cfg
        entries = self._entries
        loads = 0
        for loc in reversed(self._order):
            loads += 1
            e = entries[loc]
            if 0 <= addr - (e.base_tagged & cfg.va_mask) < e.size:
                return LookupResult(True, loc, e, loads)
        return LookupResult(False, 0, None, loads)

    def position(self, loc: int) -> int:
        """1-based position of ``loc`` counted from the list head."""
        return len(self._order) - self._order.index(loc)


class _AvlNode:
    __slots__ = ("key", "loc", "left", "right", "height")

    def __init__(self, key, loc):
        self.key = key
        self.loc = loc
        self.left = None
        self.right = None
        self.height = 1


def _h(n):
    return n.height if n else 0


def _fix(n):
    n.height = 1 + max(_h(n.left), _h(n.right))


def _rotate_right(n):
    l = n.left
    n.left = l.right
    l.right = n
    _fix(n)
    _fix(l)
    return l


def _rotate_left(n):
    r = n.right
    n.right = r.left
    r.left = n
    _fix(n)
    _fix(r)
    return r


def _rebalance(n):
    _fix(n)
    bal = _h(n.left) - _h(n.right)
    if bal > 1:
        if _h(n.left.left) < _h(n.left.right):
            n.left = _rotate_left(n.left)
        return _rotate_right(n)
    if bal < -1:
        if _h(n.right.right) < _h(n.right.left):
            n.right = _rotate_right(n.right)
        return _rotate_left(n)
    return n


def _avl_insert(n, key, loc):
    if n is None:
        return _AvlNode(key, loc)
    if key < n.key:
        n.left = _avl_insert(n.left, key, loc)
    else:
        n.right = _avl_insert(n.right, key, loc)
    return _rebalance(n)


def _avl_delete(n, key):
    if n is None:
        raise KeyError(key)
    if key < n.key:
        n.left = _avl_delete(n.left, key)
    elif key > n.key:
        n.right = _avl_delete(n.right, key)
    else:
        if n.left is None:
            return n.right
        if n.right is None:
            return n.left
        succ = n.right
        while succ.left is not None:
            succ = succ.left
        n.key, n.loc = succ.key, succ.loc
        n.right = _avl_delete(n.right, succ.key)
    return _rebalance(n)


class TreeStore(MetadataStore):
    kind = StoreKind.TREE

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._root = None

    def _link(self, loc, base):
        self._root = _avl_insert(self._root, base, loc)

    def _unlink(self, loc, base):
        self._root = _avl_delete(self._root, base)

    @property
    def height(self) -> int:
        return _h(self._root)

    def find_containing(self, addr: int) -> LookupResult:
        cfg = self.cfg
        entries = self._entries
        n = self._root
        loads = 0
        while n is not None:
            loads += 1
            e = entries[n.loc]
            off = addr - (e.base_tagged & cfg.va_mask)
            if 0 <= off < e.size:
                return LookupResult(True, n.loc, e, loads)
            n = n.right if off >= 0 else n.left
        return LookupResult(False, 0, None, loads)


class OracleStore(MetadataStore):
    """Speed-of-light table: a flat array of 16-byte entries found in one load."""

    kind = StoreKind.ORACLE
    stride = ENTRY_BYTES

    def _link(self, loc, base):
        pass

    def _unlink(self, loc, base):
        pass

    def find_containing(self, addr: int) -> LookupResult:
        idx = self._by_base.bisect_right(addr) - 1
        if idx >= 0:
            _, loc = self._by_base.peekitem(idx)
            e = self._entries[loc]
            if e.contains(addr, self.cfg):
                return LookupResult(True, loc, e, 1)
        return LookupResult(False, 0, None, 1)


_STORES = {
    StoreKind.LIST: LinkedListStore,
    StoreKind.TREE: TreeStore,
    StoreKind.ORACLE: OracleStore,
}


def make_store(kind, cfg: ArchConfig, reclaim_threshold: float = math.inf) -> MetadataStore:
    return _STORES[StoreKind(kind)](cfg, reclaim_threshold=reclaim_threshold)
