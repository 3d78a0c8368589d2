"""Replayable workload traces.

One event per line, ``#`` starts a comment::

    K <id> BEGIN | K <id> END
    A <id> <size>            F <id>
    L <vreg> <id>+<offset>
    G <LD|ST> <vreg|NULL> <id>+<offset> <width>
    S <addr32> <base32> <size32> <width>
    X <LD|ST> <id>+<offset> <width>
    N <count>

Pointers are symbolic: ``3+256`` means 256 bytes past allocation 3's base,
carrying the tag allocation 3 received. Offsets may be negative (``3-16``).
Integers are decimal or ``0x`` hex.
"""
from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field
from typing import Union


class TraceParseError(ValueError):
    def __init__(self, msg, line=None, col=None):
        where = "" if line is None else f"line {line}" + ("" if col is None else f", col {col}")
        super().__init__(f"{where}: {msg}" if where else msg)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class PtrExpr:
    alloc_id: int
    offset: int = 0

    def __str__(self):
        sign = "-" if self.offset < 0 else "+"
        return f"{self.alloc_id}{sign}{abs(self.offset)}"


@dataclass(frozen=True)
class KernelBegin:
    id: int


@dataclass(frozen=True)
class KernelEnd:
    id: int


@dataclass(frozen=True)
class Alloc:
    id: int
    size: int


@dataclass(frozen=True)
class Free:
    id: int


@dataclass(frozen=True)
class LoadMeta:
    vreg: str
    ptr: PtrExpr


@dataclass(frozen=True)
class CheckG:
    kind: str
    vreg: str | None
    ptr: PtrExpr
    width: int


@dataclass(frozen=True)
class CheckS:
    addr: int
    base: int
    size: int
    width: int


@dataclass(frozen=True)
class Access:
    kind: str
    ptr: PtrExpr
    width: int


@dataclass(frozen=True)
class Nop:
    count: int


TraceEvent = Union[KernelBegin, KernelEnd, Alloc, Free, LoadMeta, CheckG, CheckS, Access, Nop]

NULL_VREG = "NULL"
_VREG = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*$")
_PTR = re.compile(r"(0x[0-9a-fA-F]+|\d+)([+-])(0x[0-9a-fA-F]+|\d+)$")


def _int(tok: str) -> int:
    return int(tok, 16) if tok.lower().startswith("0x") else int(tok, 10)


def format_event(ev) -> str:
    if isinstance(ev, KernelBegin):
        return f"K {ev.id} BEGIN"
    if isinstance(ev, KernelEnd):
        return f"K {ev.id} END"
    if isinstance(ev, Alloc):
        return f"A {ev.id} {ev.size}"
    if isinstance(ev, Free):
        return f"F {ev.id}"
    if isinstance(ev, LoadMeta):
        return f"L {ev.vreg} {ev.ptr}"
    if isinstance(ev, CheckG):
        return f"G {ev.kind} {ev.vreg or NULL_VREG} {ev.ptr} {ev.width}"
    if isinstance(ev, CheckS):
        return f"S {ev.addr:#x} {ev.base:#x} {ev.size:#x} {ev.width}"
    if isinstance(ev, Access):
        return f"X {ev.kind} {ev.ptr} {ev.width}"
    if isinstance(ev, Nop):
        return f"N {ev.count}"
    raise TypeError(f"not a trace event: {ev!r}")


def serialize(events) -> str:
    return "".join(format_event(ev) + "\n" for ev in events)


_ARITY = {"K": 2, "A": 2, "F": 1, "L": 2, "G": 4, "S": 4, "X": 3, "N": 1}


def _tokens(line: str):
    """(column, token) pairs, 1-based columns, comment stripped."""
    code = line.split("#", 1)[0]
    return [(m.start() + 1, m.group()) for m in re.finditer(r"\S+", code)]


def _parse_line(toks, lineno):
    def num(i, what):
        col, tok = toks[i]
        try:
            return _int(tok)
        except ValueError:
            raise TraceParseError(f"expected integer {what}, got {tok!r}", lineno, col) from None

    def ptr(i):
        col, tok = toks[i]
        m = _PTR.match(tok)
        if not m:
            raise TraceParseError(f"expected <id>+<offset>, got {tok!r}", lineno, col)
        off = _int(m.group(3))
        return PtrExpr(_int(m.group(1)), -off if m.group(2) == "-" else off)

    def kind(i):
        col, tok = toks[i]
        if tok not in ("LD", "ST"):
            raise TraceParseError(f"expected LD or ST, got {tok!r}", lineno, col)
        return tok

    def vreg(i, allow_null):
        col, tok = toks[i]
        if tok == NULL_VREG:
            if allow_null:
                return None
            raise TraceParseError("NULL is not a definable vreg", lineno, col)
        if not _VREG.match(tok):
            raise TraceParseError(f"bad vreg name {tok!r}", lineno, col)
        return tok

    def positive(i, what):
        v = num(i, what)
        if v < 1:
            raise TraceParseError(f"{what} must be >= 1", lineno, toks[i][0])
        return v

    col, op = toks[0]
    if op not in _ARITY:
        raise TraceParseError(f"unknown opcode {op!r}", lineno, col)
    if len(toks) - 1 != _ARITY[op]:
        raise TraceParseError(f"{op} takes {_ARITY[op]} operands, got {len(toks) - 1}", lineno, col)
    if op == "K":
        which = toks[2][1]
        if which not in ("BEGIN", "END"):
            raise TraceParseError(f"expected BEGIN or END, got {which!r}", lineno, toks[2][0])
        return (KernelBegin if which == "BEGIN" else KernelEnd)(num(1, "kernel id"))
    if op == "A":
        return Alloc(num(1, "alloc id"), num(2, "size"))
    if op == "F":
        return Free(num(1, "alloc id"))
    if op == "L":
        return LoadMeta(vreg(1, False), ptr(2))
    if op == "G":
        return CheckG(kind(1), vreg(2, True), ptr(3), positive(4, "width"))
    if op == "S":
        return CheckS(num(1, "addr"), num(2, "base"), num(3, "size"), positive(4, "width"))
    if op == "X":
        return Access(kind(1), ptr(2), positive(3, "width"))
    return Nop(num(1, "count"))


def check_events(events, lines=None):
    """Enforce id and vreg scoping rules. ``lines`` maps event index -> source line."""
    def fail(i, msg):
        raise TraceParseError(msg, None if lines is None else lines[i])

    allocated: set[int] = set()
    scopes = [set()]
    for i, ev in enumerate(events):
        if isinstance(ev, Alloc):
            if ev.size < 1:
                fail(i, f"allocation {ev.id} has size {ev.size}")
            allocated.add(ev.id)
        elif isinstance(ev, Free):
            if ev.id not in allocated:
                fail(i, f"undefined allocation id {ev.id}")
        elif isinstance(ev, KernelBegin):
            scopes.append(set())
        elif isinstance(ev, KernelEnd):
            if len(scopes) > 1:
                scopes.pop()
        elif isinstance(ev, (LoadMeta, CheckG, Access)):
            if ev.ptr.alloc_id not in allocated:
                fail(i, f"undefined allocation id {ev.ptr.alloc_id}")
            if isinstance(ev, LoadMeta):
                scopes[-1].add(ev.vreg)
            elif isinstance(ev, CheckG) and ev.vreg is not None and ev.vreg not in scopes[-1]:
                fail(i, f"vreg {ev.vreg!r} used before any L defines it in this kernel")


def parse(text: str) -> list:
    events, lines = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        toks = _tokens(line)
        if toks:
            events.append(_parse_line(toks, lineno))
            lines.append(lineno)
    check_events(events, lines)
    return events


def ptr_of(ev) -> PtrExpr | None:
    return getattr(ev, "ptr", None)


# -- synthetic generation --------------------------------------------------------


@dataclass(frozen=True)
class SynthSpec:
    allocs: int
    working_set: int = 1
    accesses: int = 0
    kernels: int = 1
    seed: int = 0
    min_size: int = 256
    max_size: int = 1 << 20
    style: str = "compiled"
    alloc_policy: str = "upfront"
    free_policy: str = "end"
    nops_per_access: int = 0
    shared_per_access: int = 0
    width: int = 4
    size_granule: int = 256

    def validate(self):
        if self.allocs < 1:
            raise ValueError("need at least one allocation")
        if not 1 <= self.working_set <= self.allocs:
            raise ValueError(
                f"working-set target {self.working_set} infeasible for {self.allocs} allocations"
            )
        if self.kernels < 1:
            raise ValueError("need at least one kernel")
        if self.style not in ("compiled", "hwonly"):
            raise ValueError(f"unknown style {self.style!r}")
        if self.alloc_policy not in ("upfront", "lazy"):
            raise ValueError(f"unknown alloc policy {self.alloc_policy!r}")
        if self.free_policy not in ("end", "eager", "none"):
            raise ValueError(f"unknown free policy {self.free_policy!r}")
        if not self.size_granule <= self.min_size <= self.max_size:
            raise ValueError("need size_granule <= min_size <= max_size")
        if self.width < 1 or self.width > self.min_size:
            raise ValueError("access width must fit the smallest allocation")


def _touch_order(n: int, w: int, accesses: int) -> list[int]:
    """Sliding windows of ``w`` allocations, each swept at least twice.

    Sweeping a window twice makes the maximum LRU stack distance exactly
    ``w``; moving the window by one never exceeds it.
    """
    phases = n - w + 1
    total = max(accesses, 2 * w * phases)
    rounds = [2] * phases
    for j in range(math.ceil(total / w) - 2 * phases):
        rounds[j % phases] += 1
    order = []
    for j, r in enumerate(rounds):
        window = list(range(j, j + w))
        order.extend(window * r)
    return order[:total]


def _split(seq, k):
    q, r = divmod(len(seq), k)
    out, start = [], 0
    for i in range(k):
        end = start + q + (1 if i < r else 0)
        out.append(seq[start:end])
        start = end
    return out


def generate(spec: SynthSpec) -> list:
    """A clean trace meeting ``spec``; deterministic under ``spec.seed``."""
    spec.validate()
    rng = random.Random(spec.seed)
    g = spec.size_granule
    lo, hi = math.log(spec.min_size), math.log(spec.max_size)
    sizes = []
    for _ in range(spec.allocs):
        raw = math.exp(rng.uniform(lo, hi))
        sizes.append(min(spec.max_size, max(spec.min_size, -(-int(raw) // g) * g)))
    ids = list(range(1, spec.allocs + 1))

    order = _touch_order(spec.allocs, spec.working_set, spec.accesses)
    chunks = [c for c in _split(order, spec.kernels) if c] or [[]]
    first = {}
    last = {}
    for k, chunk in enumerate(chunks):
        for a in chunk:
            first.setdefault(a, k)
            last[a] = k

    events = []
    if spec.alloc_policy == "upfront":
        events.extend(Alloc(ids[a], sizes[a]) for a in range(spec.allocs))
    allocated = set(range(spec.allocs)) if spec.alloc_policy == "upfront" else set()
    shared_base, shared_size = 0, 4096

    for k, chunk in enumerate(chunks):
        for a in sorted({a for a in chunk if first[a] == k}):
            if a not in allocated:
                events.append(Alloc(ids[a], sizes[a]))
                allocated.add(a)
        events.append(KernelBegin(k + 1))
        defined = set()
        for a in chunk:
            size = sizes[a]
            off = rng.randrange(0, (size - spec.width) // spec.width + 1) * spec.width
            kind = "ST" if rng.random() < 0.3 else "LD"
            ptr = PtrExpr(ids[a], off)
            if spec.style == "compiled":
                vreg = f"v{ids[a]}"
                if a not in defined:
                    events.append(LoadMeta(vreg, PtrExpr(ids[a], 0)))
                    defined.add(a)
                events.append(CheckG(kind, vreg, ptr, spec.width))
            else:
                events.append(Access(kind, ptr, spec.width))
            for _ in range(spec.shared_per_access):
                soff = rng.randrange(0, shared_size // spec.width) * spec.width
                events.append(CheckS(shared_base + soff, shared_base, shared_size, spec.width))
            if spec.nops_per_access:
                events.append(Nop(spec.nops_per_access))
        events.append(KernelEnd(k + 1))
        if spec.free_policy == "eager":
            events.extend(Free(ids[a]) for a in sorted(a for a in last if last[a] == k))
    # allocations the access pattern never touched
    for a in range(spec.allocs):
        if a not in allocated:
            events.append(Alloc(ids[a], sizes[a]))
    if spec.free_policy == "end":
        events.extend(Free(i) for i in ids)
    elif spec.free_policy == "eager":
        events.extend(Free(ids[a]) for a in range(spec.allocs) if a not in last)
    return events
