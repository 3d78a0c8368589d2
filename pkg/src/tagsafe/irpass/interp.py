"""Deterministic interpreter for the toy IR, plus the metrics built on it.

Global pointers are symbolic ``Ptr(alloc, offset)`` pairs so a kernel's
accesses translate one-to-one into trace pointer expressions. Threads run
one after another over a flat tid range; there is no divergence model.
"""
from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

from ..trace import (Alloc, CheckG, CheckS, KernelBegin, KernelEnd, LoadMeta, Nop, PtrExpr)
from .ir import Function, IrError, is_literal

STEP_LIMIT = 1_000_000
_QUIET = {"LOADMETA", "MEMCHECK_G", "MEMCHECK_S", "LDG", "STG", "LDS", "STS"}


@dataclass(frozen=True)
class Ptr:
    alloc: int
    offset: int = 0

    def add(self, n):
        return Ptr(self.alloc, self.offset + n)


@dataclass(frozen=True)
class MetaRef:
    root: Ptr
    valid: bool


@dataclass
class KernelInput:
    """Bindings for one launch: parameter values, allocation sizes, initial memory."""
    args: dict
    allocs: dict[int, int]
    memory: dict = field(default_factory=dict)
    tids: range | list = range(1)


class CheckOutcome(str, enum.Enum):
    PASS = "pass"
    SPATIAL_OOB = "spatial_oob"
    SHARED_SPATIAL = "shared_spatial"


@dataclass(frozen=True)
class CheckRecord:
    tid: int
    op: str
    address: object
    meta: MetaRef | None
    width: int
    outcome: CheckOutcome
    kind: str


@dataclass
class Execution:
    instructions: int = 0
    per_thread: list[int] = field(default_factory=list)
    checks: list[CheckRecord] = field(default_factory=list)
    stores: list[tuple] = field(default_factory=list)
    # (tid, inst, values) for every executed instruction, used by lowering
    log: list[tuple] = field(default_factory=list)


def _check_kinds(fn: Function) -> dict[str, str]:
    """MEMCHECK_G result -> LD/ST of the access consuming it."""
    kinds = {}
    for b in fn.blocks:
        for inst in b.insts:
            if inst.op in ("LDG", "STG") and not is_literal(inst.args[0]):
                kinds[inst.args[0]] = "LD" if inst.op == "LDG" else "ST"
    return kinds


def _arith(op, a, b):
    if op == "eq":
        return int(a == b)
    if op == "ne":
        return int(a != b)
    if not (isinstance(a, int) and isinstance(b, int)):
        raise IrError(f"OTHER.{op} on non-integer operands {a!r}, {b!r}")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "lt":
        return int(a < b)
    return int(a <= b)


def execute(fn: Function, inp: KernelInput, keep_log: bool = False) -> Execution:
    ex = Execution()
    memory = dict(inp.memory)
    shared_mem = {}
    shared_top = 0
    shared_bases = {}
    kinds = _check_kinds(fn)
    blocks = {b.label: b for b in fn.blocks}
    for _, name in fn.params:
        if name not in inp.args:
            raise IrError(f"no argument bound for parameter {name}")

    for tid in inp.tids:
        env = dict(inp.args)
        count = 0
        prev, block = None, fn.entry
        while True:
            # phis read their inputs simultaneously on block entry
            phis = [i for i in block.insts if i.op == "PHI"]
            if phis:
                vals = {}
                for phi in phis:
                    src = dict((l, v) for v, l in phi.args)[prev]
                    vals[phi.res] = src if is_literal(src) else env[src]
                env.update(vals)
                count += len(phis)
                if keep_log:
                    ex.log.extend((tid, phi, vals[phi.res]) for phi in phis)

            nxt = None
            for inst in block.insts:
                if inst.op == "PHI":
                    continue
                count += 1
                if count > STEP_LIMIT:
                    raise IrError(f"thread {tid} exceeded {STEP_LIMIT} steps")
                a = [x if is_literal(x) else env[x] for x in inst.args] \
                    if inst.op not in ("BR", "CBR") else None
                op = inst.op
                val = None
                if op == "MOV":
                    val = a[0]
                elif op == "PTRADD":
                    if not isinstance(a[1], int):
                        raise IrError(f"PTRADD offset {a[1]!r} is not an integer")
                    val = a[0].add(a[1]) if isinstance(a[0], Ptr) else a[0] + a[1]
                elif op == "OTHER":
                    sub = inst.sub
                    if sub == "tid":
                        val = tid
                    elif sub == "const":
                        val = a[0]
                    elif sub == "select":
                        val = a[1] if a[0] else a[2]
                    elif sub == "shared":
                        key = inst.res
                        if key not in shared_bases:
                            shared_bases[key] = shared_top
                            shared_top += -(-a[0] // 16) * 16
                        val = shared_bases[key]
                    else:
                        val = _arith(sub, a[0], a[1])
                elif op == "LDG":
                    p = a[0]
                    if not isinstance(p, Ptr):
                        raise IrError(f"LDG through non-pointer {p!r}")
                    val = memory.get((p.alloc, p.offset), Ptr(p.alloc, 0) if inst.sub == "ptr" else 0)
                elif op == "STG":
                    if not isinstance(a[0], Ptr):
                        raise IrError(f"STG through non-pointer {a[0]!r}")
                    memory[(a[0].alloc, a[0].offset)] = a[1]
                    ex.stores.append((tid, a[0], a[1]))
                elif op == "LDS":
                    val = shared_mem.get(a[0], 0)
                elif op == "STS":
                    shared_mem[a[0]] = a[1]
                    ex.stores.append((tid, ("shared", a[0]), a[1]))
                elif op == "LOADMETA":
                    p = a[0]
                    size = inp.allocs.get(p.alloc) if isinstance(p, Ptr) else None
                    val = MetaRef(p, size is not None and 0 <= p.offset < size)
                elif op == "MEMCHECK_G":
                    p, meta, width = a
                    outcome = CheckOutcome.PASS
                    if isinstance(meta, MetaRef) and meta.valid:
                        size = inp.allocs[meta.root.alloc]
                        off = p.offset if p.alloc == meta.root.alloc else -1
                        if off < 0 or off + width > size:
                            outcome = CheckOutcome.SPATIAL_OOB
                    ex.checks.append(CheckRecord(tid, op, p, meta if meta != 0 else None, width,
                                                 outcome, kinds.get(inst.res, "LD")))
                    val = p
                elif op == "MEMCHECK_S":
                    addr, base, size, width = a
                    off = (addr - base) & 0xFFFF_FFFF
                    outcome = CheckOutcome.PASS if off < size and off + width <= size \
                        else CheckOutcome.SHARED_SPATIAL
                    ex.checks.append(CheckRecord(tid, op, (addr, base, size), None, width, outcome,
                                                 "LD"))
                elif op == "BR":
                    nxt = inst.args[0]
                elif op == "CBR":
                    c = inst.args[0] if is_literal(inst.args[0]) else env[inst.args[0]]
                    nxt = inst.args[1] if c else inst.args[2]
                elif op == "RET":
                    nxt = None
                if inst.res is not None:
                    env[inst.res] = val
                if keep_log:
                    ex.log.append((tid, inst, a if op not in ("BR", "CBR") else None))
            if nxt is None:
                break
            prev, block = block.label, blocks[nxt]
        ex.per_thread.append(count)
        ex.instructions += count
    return ex


def bloat(fn: Function, instrumented: Function, inp: KernelInput) -> float:
    """Relative growth in dynamically executed instructions."""
    base = execute(fn, inp).instructions
    if base == 0:
        return 0.0
    return execute(instrumented, inp).instructions / base - 1


class CoverageClass(str, enum.Enum):
    FULL = "full"
    PARTIAL = "partial"
    TAGGING_ONLY = "tagging_only"


def classify_check(rec: CheckRecord, alloc_map: dict[int, int]) -> CoverageClass | None:
    if rec.meta is None:
        return None
    root = rec.meta.root
    if root.alloc in alloc_map and root.offset == 0:
        return CoverageClass.FULL
    if root != rec.address:
        return CoverageClass.PARTIAL
    return CoverageClass.TAGGING_ONLY


def classify_coverage(instrumented: Function, inp: KernelInput, alloc_map=None) -> dict:
    """Histogram of coverage classes over executed MEMCHECK_G instructions."""
    alloc_map = inp.allocs if alloc_map is None else alloc_map
    hist = Counter({c.value: 0 for c in CoverageClass})
    unchecked = 0
    for rec in execute(instrumented, inp).checks:
        if rec.op != "MEMCHECK_G":
            continue
        cls = classify_check(rec, alloc_map)
        if cls is None:
            unchecked += 1
        else:
            hist[cls.value] += 1
    out = dict(hist)
    if unchecked:
        out["unchecked"] = unchecked
    return out


def lower(instrumented: Function, inp: KernelInput, kernel_id: int = 1) -> list:
    """Trace events whose replay reproduces the interpreter's check outcomes."""
    ex = execute(instrumented, inp, keep_log=True)
    events = [Alloc(i, inp.allocs[i]) for i in sorted(inp.allocs)]
    events.append(KernelBegin(kernel_id))
    nops = 0

    def flush():
        nonlocal nops
        if nops:
            events.append(Nop(nops))
            nops = 0

    kinds = _check_kinds(instrumented)
    # runtime metadata value -> the L vreg that produced it; phi-merged
    # metadata operands resolve to whichever LOADMETA actually flowed in
    produced: dict[tuple, str] = {}
    for tid, inst, vals in ex.log:
        op = inst.op
        if op not in _QUIET:
            nops += 1
            continue
        if op == "LOADMETA":
            p = vals[0]
            vreg = f"t{tid}_{inst.res}"
            size = inp.allocs.get(p.alloc)
            produced[(tid, MetaRef(p, size is not None and 0 <= p.offset < size))] = vreg
            flush()
            events.append(LoadMeta(vreg, PtrExpr(p.alloc, p.offset)))
        elif op == "MEMCHECK_G":
            p, meta, width = vals
            vreg = produced.get((tid, meta)) if isinstance(meta, MetaRef) else None
            flush()
            events.append(CheckG(kinds.get(inst.res, "LD"), vreg, PtrExpr(p.alloc, p.offset), width))
        elif op == "MEMCHECK_S":
            addr, base, size, width = vals
            flush()
            events.append(CheckS(addr, base, size, width))
    flush()
    events.append(KernelEnd(kernel_id))
    return events
