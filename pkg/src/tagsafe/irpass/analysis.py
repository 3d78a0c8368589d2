"""Root-pointer analysis and check insertion."""
from __future__ import annotations

import copy
from dataclasses import dataclass

from .ir import (GLOBAL_ACCESS, SHARED_ACCESS, Function, Inst, IrError, is_literal, verify)

# defs the backward walk looks through; everything else defining a pointer is a root
_TRANSPARENT = {"MOV", "PTRADD", "PHI"}


@dataclass(frozen=True)
class Access:
    block: str
    index: int
    op: str
    address: str


def accesses(fn: Function, ops=GLOBAL_ACCESS | SHARED_ACCESS) -> list[Access]:
    out = []
    for b in fn.blocks:
        for i, inst in enumerate(b.insts):
            if inst.op in ops:
                out.append(Access(b.label, i, inst.op, inst.address()))
    return out


class RootFinder:
    """Backward search through reaching definitions, memoized per value.

    MOV and PTRADD continue through their pointer operand, PHI unions its
    inputs, and any other definition (parameter, loaded pointer, OTHER
    result) is itself a root. Cyclic phis terminate because each walk keeps
    a visited set.
    """

    def __init__(self, fn: Function):
        self.fn = fn
        self.defs = {}
        for b in fn.blocks:
            for inst in b.insts:
                if inst.res is not None:
                    self.defs[inst.res] = inst
        self._memo: dict[str, frozenset] = {}

    def roots(self, value: str) -> frozenset:
        if value in self._memo:
            return self._memo[value]
        found, seen, stack = set(), set(), [value]
        while stack:
            v = stack.pop()
            if v in seen:
                continue
            seen.add(v)
            inst = self.defs.get(v)
            if inst is None or inst.op not in _TRANSPARENT:
                found.add(v)
            elif inst.op == "PHI":
                stack.extend(x for x, _ in inst.args if not is_literal(x))
            elif not is_literal(inst.args[0]):
                stack.append(inst.args[0])
        result = frozenset(found)
        self._memo[value] = result
        return result


def find_roots(fn: Function) -> dict[str, frozenset]:
    """Address value of every memory access -> the roots reaching it."""
    rf = RootFinder(fn)
    return {a.address: rf.roots(a.address) for a in accesses(fn)}


def _fresh(base, taken):
    name, k = base, 1
    while name in taken:
        name = f"{base}_{k}"
        k += 1
    taken.add(name)
    return name


def instrument(fn: Function) -> Function:
    """One LOADMETA per root, a mirrored metadata value, a check before every access."""
    verify(fn)
    out = copy.deepcopy(fn)
    rf = RootFinder(out)
    types = out.value_types()
    taken = set(out.definitions())

    global_acc = accesses(out, GLOBAL_ACCESS)
    shared_acc = accesses(out, SHARED_ACCESS)

    # pointer values whose metadata must exist: closure of global access addresses
    needed, stack = set(), [a.address for a in global_acc]
    while stack:
        v = stack.pop()
        if v in needed:
            continue
        needed.add(v)
        inst = rf.defs.get(v)
        if inst is None or inst.op not in _TRANSPARENT:
            continue
        if inst.op == "PHI":
            stack.extend(x for x, _ in inst.args if not is_literal(x))
        elif not is_literal(inst.args[0]):
            stack.append(inst.args[0])

    md: dict[str, object] = {}
    loadmetas: dict[str, Inst] = {}
    md_phis: dict[str, Inst] = {}
    for v in sorted(needed):
        inst = rf.defs.get(v)
        if inst is None or inst.op not in _TRANSPARENT:
            name = _fresh(f"md_{v}", taken)
            md[v] = name
            loadmetas[v] = Inst("LOADMETA", (v,), name)
        elif inst.op == "PHI":
            name = _fresh(f"md_{v}", taken)
            md[v] = name
            md_phis[v] = Inst("PHI", (), name)

    def md_of(v):
        if is_literal(v):
            return 0
        seen = set()
        while v not in md:
            if v in seen:
                raise IrError(f"metadata for {v} is undefined")
            seen.add(v)
            v = rf.defs[v].args[0]
            if is_literal(v):
                return 0
        return md[v]

    for v, phi in md_phis.items():
        phi.args = tuple((md_of(x), l) for x, l in rf.defs[v].args)

    param_names = {n for _, n in out.params}
    entry_meta = [loadmetas[v] for v in sorted(loadmetas) if v in param_names]
    shared_size = {}
    for b in out.blocks:
        for inst in b.insts:
            if inst.op == "OTHER" and inst.sub == "shared":
                shared_size[inst.res] = inst.args[0]

    checks = 0
    for b in out.blocks:
        new = list(entry_meta) if b is out.entry else []
        for inst in b.insts:
            if inst.op in GLOBAL_ACCESS:
                addr = inst.args[0]
                chk = _fresh(f"chk{checks}", taken)
                checks += 1
                new.append(Inst("MEMCHECK_G", (addr, md_of(addr), inst.width), chk))
                inst.args = (chk,) + inst.args[1:]
            elif inst.op in SHARED_ACCESS:
                addr = inst.args[0]
                roots = rf.roots(addr)
                if len(roots) != 1 or next(iter(roots)) not in shared_size:
                    raise IrError(f"{b.label}: shared access via {addr} has no static base/size")
                base = next(iter(roots))
                new.append(Inst("MEMCHECK_S", (addr, base, shared_size[base], inst.width)))
            new.append(inst)
            if inst.res in loadmetas and inst.res not in param_names:
                new.append(loadmetas[inst.res])
            if inst.res in md_phis:
                new.append(md_phis[inst.res])
        b.insts = new

    unresolved = [a.address for a in global_acc if types.get(a.address) != "ptr"]
    if unresolved:
        raise IrError(f"global accesses through non-pointer values: {unresolved}")
    verify(out)
    return out


def loadmeta_count(fn: Function) -> int:
    return sum(inst.op == "LOADMETA" for b in fn.blocks for inst in b.insts)
