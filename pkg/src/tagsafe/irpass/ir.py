"""A toy SSA kernel IR: data model, parser, printer and well-formedness checks.

Syntax::

    kernel <name>(<type> <param>, ...)
    <label>:
      [<value> =] <OPCODE>[.<sub>] <operand>, ...
    end

Types are ``ptr`` (global pointer), ``int``. Operands are value names or
integer literals. ``PHI`` operands are ``<value>:<label>`` pairs. Memory
opcodes take a width suffix (``LDG.i32``; ``.ptr`` loads a global pointer).
``OTHER`` covers every non-memory computation; its suffix names the
operation (``tid``, ``const``, ``add``, ``sub``, ``mul``, ``lt``, ``le``,
``eq``, ``ne``, ``select``, ``shared``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field


class IrError(ValueError):
    pass


TERMINATORS = {"BR", "CBR", "RET"}
GLOBAL_ACCESS = {"LDG", "STG"}
SHARED_ACCESS = {"LDS", "STS"}
OPCODES = {"MOV", "PHI", "PTRADD", "LDG", "STG", "LDS", "STS", "LOADMETA", "MEMCHECK_G",
           "MEMCHECK_S", "BR", "CBR", "RET", "OTHER"}
OTHER_OPS = {"tid", "const", "add", "sub", "mul", "lt", "le", "eq", "ne", "select", "shared"}
WIDTHS = {"i8": 1, "i16": 2, "i32": 4, "i64": 8, "ptr": 8}
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.]*$")
_INT = re.compile(r"-?(0x[0-9a-fA-F]+|\d+)$")


def is_literal(x) -> bool:
    return isinstance(x, int)


@dataclass
class Inst:
    op: str
    args: tuple = ()
    res: str | None = None
    sub: str | None = None

    @property
    def width(self) -> int:
        return WIDTHS[self.sub]

    def uses(self):
        if self.op == "PHI":
            return [v for v, _ in self.args if not is_literal(v)]
        if self.op == "BR":
            return []
        if self.op == "CBR":
            return [] if is_literal(self.args[0]) else [self.args[0]]
        return [a for a in self.args if not is_literal(a)]

    def address(self):
        """Address operand of a memory access, else None."""
        if self.op in GLOBAL_ACCESS or self.op in SHARED_ACCESS:
            return self.args[0]
        return None

    def __str__(self):
        head = self.op + (f".{self.sub}" if self.sub else "")
        if self.op == "PHI":
            ops = ", ".join(f"{v}:{l}" for v, l in self.args)
        else:
            ops = ", ".join(str(a) for a in self.args)
        text = f"{head} {ops}" if ops else head
        return f"{self.res} = {text}" if self.res else text


@dataclass
class Block:
    label: str
    insts: list[Inst] = field(default_factory=list)

    @property
    def terminator(self) -> Inst:
        return self.insts[-1]

    def successors(self):
        t = self.terminator
        if t.op == "BR":
            return [t.args[0]]
        if t.op == "CBR":
            return [t.args[1], t.args[2]]
        return []


@dataclass
class Function:
    name: str
    params: list[tuple[str, str]]
    blocks: list[Block]

    @property
    def entry(self) -> Block:
        return self.blocks[0]

    def block(self, label) -> Block:
        for b in self.blocks:
            if b.label == label:
                return b
        raise IrError(f"no block {label!r}")

    def predecessors(self):
        preds = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for s in b.successors():
                preds[s].append(b.label)
        return preds

    def definitions(self):
        """value name -> (block label, index) or ('<param>', position)."""
        defs = {}
        for k, (_, name) in enumerate(self.params):
            defs[name] = ("<param>", k)
        for b in self.blocks:
            for i, inst in enumerate(b.insts):
                if inst.res is not None:
                    defs[inst.res] = (b.label, i)
        return defs

    def inst_of(self, name):
        where = self.definitions()[name]
        if where[0] == "<param>":
            return None
        return self.block(where[0]).insts[where[1]]

    def value_types(self) -> dict[str, str]:
        types = {name: ty for ty, name in self.params}
        # phis may reference values defined later; iterate to a fixpoint
        changed = True
        while changed:
            changed = False
            for b in self.blocks:
                for inst in b.insts:
                    if inst.res is None or inst.res in types:
                        continue
                    ty = _result_type(inst, types)
                    if ty is not None:
                        types[inst.res] = ty
                        changed = True
        return types

    def __str__(self):
        params = ", ".join(f"{t} {n}" for t, n in self.params)
        lines = [f"kernel {self.name}({params})"]
        for b in self.blocks:
            lines.append(f"{b.label}:")
            lines.extend(f"  {inst}" for inst in b.insts)
        lines.append("end")
        return "\n".join(lines) + "\n"


def _result_type(inst, types):
    op = inst.op
    if op in ("MOV", "PTRADD"):
        return types.get(inst.args[0]) if not is_literal(inst.args[0]) else "int"
    if op == "PHI":
        for v, _ in inst.args:
            if not is_literal(v) and v in types:
                return types[v]
        return None
    if op in ("LDG", "LDS"):
        return "ptr" if inst.sub == "ptr" else "int"
    if op == "LOADMETA":
        return "md"
    if op == "MEMCHECK_G":
        return "ptr"
    if op == "OTHER":
        if inst.sub == "shared":
            return "sptr"
        if inst.sub == "select":
            a = inst.args[1]
            return "int" if is_literal(a) else types.get(a)
        return "int"
    return "int"


def _operand(tok, lineno):
    if _INT.match(tok):
        neg = tok.startswith("-")
        body = tok[1:] if neg else tok
        val = int(body, 16) if body.lower().startswith("0x") else int(body, 10)
        return -val if neg else val
    if _NAME.match(tok):
        return tok
    raise IrError(f"line {lineno}: bad operand {tok!r}")


def parse_ir(text: str) -> Function:
    name = params = None
    blocks: list[Block] = []
    ended = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ended:
            raise IrError(f"line {lineno}: text after 'end'")
        if name is None:
            m = re.match(r"kernel\s+([A-Za-z_]\w*)\s*\((.*)\)$", line)
            if not m:
                raise IrError(f"line {lineno}: expected 'kernel <name>(<params>)'")
            name = m.group(1)
            params = []
            for p in filter(None, (s.strip() for s in m.group(2).split(","))):
                parts = p.split()
                if len(parts) != 2 or parts[0] not in ("ptr", "int") or not _NAME.match(parts[1]):
                    raise IrError(f"line {lineno}: bad parameter {p!r}")
                params.append((parts[0], parts[1]))
            continue
        if line == "end":
            ended = True
            continue
        if line.endswith(":"):
            label = line[:-1].strip()
            if not _NAME.match(label):
                raise IrError(f"line {lineno}: bad block label {label!r}")
            blocks.append(Block(label))
            continue
        if not blocks:
            raise IrError(f"line {lineno}: instruction outside a block")
        res = None
        if "=" in line:
            lhs, line = (s.strip() for s in line.split("=", 1))
            if not _NAME.match(lhs):
                raise IrError(f"line {lineno}: bad result name {lhs!r}")
            res = lhs
        head, _, rest = line.partition(" ")
        op, _, sub = head.partition(".")
        if op not in OPCODES:
            raise IrError(f"line {lineno}: unknown opcode {op!r}")
        toks = [t.strip() for t in rest.split(",")] if rest.strip() else []
        if op == "PHI":
            args = []
            for t in toks:
                v, sep, l = t.partition(":")
                if not sep:
                    raise IrError(f"line {lineno}: phi operand {t!r} needs <value>:<label>")
                args.append((_operand(v.strip(), lineno), l.strip()))
            args = tuple(args)
        else:
            args = tuple(_operand(t, lineno) for t in toks)
        blocks[-1].insts.append(Inst(op, args, res, sub or None))
    if name is None:
        raise IrError("empty IR text")
    if not ended:
        raise IrError("missing 'end'")
    fn = Function(name, params, blocks)
    verify(fn)
    return fn


_ARITY = {"MOV": 1, "PTRADD": 2, "LDG": 1, "STG": 2, "LDS": 1, "STS": 2, "LOADMETA": 1,
          "MEMCHECK_G": 3, "MEMCHECK_S": 4, "BR": 1, "CBR": 3, "RET": 0}
_HAS_RESULT = {"MOV", "PHI", "PTRADD", "LDG", "LDS", "LOADMETA", "MEMCHECK_G", "OTHER"}
_OTHER_ARITY = {"tid": 0, "const": 1, "add": 2, "sub": 2, "mul": 2, "lt": 2, "le": 2,
                "eq": 2, "ne": 2, "select": 3, "shared": 1}


def verify(fn: Function) -> None:
    if not fn.blocks:
        raise IrError(f"{fn.name}: no blocks")
    labels = [b.label for b in fn.blocks]
    if len(set(labels)) != len(labels):
        raise IrError(f"{fn.name}: duplicate block labels")
    seen = set()
    for _, n in fn.params:
        if n in seen:
            raise IrError(f"{fn.name}: {n} defined twice")
        seen.add(n)
    for b in fn.blocks:
        if not b.insts or b.insts[-1].op not in TERMINATORS:
            raise IrError(f"{b.label}: block must end in a terminator")
        for i, inst in enumerate(b.insts):
            where = f"{b.label}[{i}] {inst.op}"
            if inst.op in TERMINATORS and i != len(b.insts) - 1:
                raise IrError(f"{where}: terminator before end of block")
            if (inst.res is not None) != (inst.op in _HAS_RESULT):
                raise IrError(f"{where}: result presence mismatch")
            if inst.op in _ARITY and len(inst.args) != _ARITY[inst.op]:
                raise IrError(f"{where}: expects {_ARITY[inst.op]} operands")
            if inst.op == "OTHER":
                if inst.sub not in OTHER_OPS:
                    raise IrError(f"{where}: unknown OTHER operation {inst.sub!r}")
                if len(inst.args) != _OTHER_ARITY[inst.sub]:
                    raise IrError(f"{where}: OTHER.{inst.sub} takes {_OTHER_ARITY[inst.sub]} operands")
            if inst.op in GLOBAL_ACCESS | SHARED_ACCESS and inst.sub not in WIDTHS:
                raise IrError(f"{where}: needs a width suffix from {sorted(WIDTHS)}")
            if inst.op in ("BR", "CBR"):
                for l in (inst.args if inst.op == "BR" else inst.args[1:]):
                    if l not in labels:
                        raise IrError(f"{where}: unknown label {l!r}")
            if inst.res is not None:
                if inst.res in seen:
                    raise IrError(f"{where}: {inst.res} defined twice (not SSA)")
                seen.add(inst.res)
    preds = fn.predecessors()
    for b in fn.blocks:
        for inst in b.insts:
            for v in inst.uses():
                if v not in seen:
                    raise IrError(f"{b.label}: use of undefined value {v!r}")
            if inst.op == "PHI":
                got = sorted(l for _, l in inst.args)
                if got != sorted(preds[b.label]):
                    raise IrError(f"{b.label}: phi {inst.res} inputs {got} do not match predecessors "
                                  f"{sorted(preds[b.label])}")
    types = fn.value_types()
    for b in fn.blocks:
        for inst in b.insts:
            addr = inst.address()
            if addr is None:
                continue
            want = "ptr" if inst.op in GLOBAL_ACCESS else "sptr"
            if is_literal(addr) or types.get(addr) != want:
                raise IrError(f"{b.label}: {inst.op} address {addr!r} is not {want}-typed")
