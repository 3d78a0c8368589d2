"""Fault injection over clean traces and per-fault detection scoring.

Each injection inserts new events into a clean host trace. Exactly one of
them, the faulting access, is labeled; the others (a free or a reallocation
needed to set the fault up) are recorded as support events so the original
trace can be recovered by dropping every injected line.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace

from scipy.stats import binomtest

from .engine import BumpAllocator, EngineConfig, EngineMode
from .sim import replay
from .trace import (Access, Alloc, CheckG, Free, PtrExpr, SynthSpec, format_event, generate,
                    parse)


class FaultClass(str, enum.Enum):
    ADJ_OOB = "adj-oob"
    NONADJ_INTRA_OOB = "nonadj-intra-oob"
    NONADJ_INTER_OOB = "nonadj-inter-oob"
    UAF_IMMEDIATE = "uaf-immediate"
    UAF_DELAYED = "uaf-delayed"


class InjectionError(ValueError):
    """The host trace cannot host the requested faults."""


@dataclass(frozen=True)
class FaultSpec:
    fault: FaultClass
    count: int
    seed: int = 0
    mode: EngineMode = EngineMode.HWONLY

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("fault count must be >= 1")


@dataclass(frozen=True)
class Injection:
    fault: FaultClass
    event_index: int
    support: tuple[int, ...] = ()


@dataclass
class LabeledTrace:
    events: list
    injections: list[Injection] = field(default_factory=list)

    def injected_indices(self) -> set[int]:
        out = set()
        for inj in self.injections:
            out.add(inj.event_index)
            out.update(inj.support)
        return out

    def stripped(self) -> list:
        drop = self.injected_indices()
        return [ev for i, ev in enumerate(self.events) if i not in drop]

    def dumps(self) -> str:
        notes = {}
        for inj in self.injections:
            notes[inj.event_index] = f"fault {inj.fault.value}"
            for s in inj.support:
                notes[s] = f"support {inj.fault.value}"
        lines = []
        for i, ev in enumerate(self.events):
            line = format_event(ev)
            if i in notes:
                line += f"  # {notes[i]}"
            lines.append(line + "\n")
        return "".join(lines)

    @classmethod
    def loads(cls, text: str) -> "LabeledTrace":
        events = parse(text)
        faults, support = [], {}
        idx = -1
        for line in text.splitlines():
            code, _, comment = line.partition("#")
            if not code.strip():
                continue
            idx += 1
            words = comment.split()
            if len(words) == 2 and words[0] in ("fault", "support"):
                fc = FaultClass(words[1])
                if words[0] == "fault":
                    faults.append((idx, fc))
                else:
                    support.setdefault(fc, []).append(idx)
        # support events precede their fault; pair them up in order
        injections = []
        pending = {fc: sorted(v) for fc, v in support.items()}
        for idx, fc in faults:
            mine = []
            queue = pending.get(fc, [])
            while queue and queue[0] < idx:
                mine.append(queue.pop(0))
            injections.append(Injection(fc, idx, tuple(mine)))
        return cls(events, injections)


# -- host layout ----------------------------------------------------------------


class _Layout:
    """Replays only the allocator so injection sites know the address map."""

    def __init__(self, events, alignment=256):
        heap = BumpAllocator(alignment)
        self.base, self.size = {}, {}
        self.born, self.died = {}, {}
        for i, ev in enumerate(events):
            if isinstance(ev, Alloc):
                self.base[ev.id] = heap.alloc(ev.size)
                self.size[ev.id] = ev.size
                self.born[ev.id] = i
            elif isinstance(ev, Free):
                heap.free(self.base[ev.id], self.size[ev.id])
                self.died[ev.id] = i
        self.by_addr = sorted(self.base, key=lambda a: (self.base[a], self.born[a]))
        self._rank = {a: k for k, a in enumerate(self.by_addr)}
        self._at_base = {}
        for a in self.by_addr:
            self._at_base.setdefault(self.base[a], []).append(a)

    def live(self, a, i) -> bool:
        """Whether allocation ``a`` exists right after event ``i``."""
        return a in self.born and self.born[a] <= i < self.died.get(a, float("inf"))

    def neighbours(self, victim, i):
        """Nearest live allocations below and above ``victim`` in address order."""
        out = set()
        k = self._rank[victim]
        for step in (-1, 1):
            j = k + step
            while 0 <= j < len(self.by_addr):
                if self.live(self.by_addr[j], i):
                    out.add(self.by_addr[j])
                    break
                j += step
        return out

    def upper_neighbour(self, victim, i):
        end = self.base[victim] + self.size[victim]
        for other in self._at_base.get(end, ()):
            if self.live(other, i):
                return other
        return None

    def pick_live(self, rng, i, banned, tries=64):
        """Uniform live allocation outside ``banned``, or None."""
        ids = self.by_addr
        for _ in range(tries):
            a = ids[rng.randrange(len(ids))]
            if a not in banned and self.live(a, i):
                return a
        pool = [a for a in ids if a not in banned and self.live(a, i)]
        return rng.choice(pool) if pool else None


def _rand_offset(rng, size, width):
    return rng.randrange(0, (size - width) // width + 1) * width


def _host_accesses(events, mode):
    want = CheckG if mode is EngineMode.COMPILED else Access
    return [i for i, ev in enumerate(events)
            if isinstance(ev, want) and not (isinstance(ev, CheckG) and ev.vreg is None)]


def _plan(events, spec: FaultSpec, rng, alignment):
    """List of (insert_after_index, [new events], fault position within them)."""
    lay = _Layout(events, alignment)
    fc = spec.fault
    plans = []

    if fc in (FaultClass.UAF_IMMEDIATE, FaultClass.UAF_DELAYED):
        frees = [i for i, ev in enumerate(events) if isinstance(ev, Free)]
        if len(frees) < spec.count:
            raise InjectionError(f"{fc.value} needs {spec.count} frees, trace has {len(frees)}")
        next_id = max(lay.base, default=0) + 1
        for i in sorted(rng.sample(frees, spec.count)):
            victim = events[i].id
            size = lay.size[victim]
            off = _rand_offset(rng, size, 4)
            fault = Access("LD", PtrExpr(victim, off), 4)
            if fc is FaultClass.UAF_IMMEDIATE:
                plans.append((i, [fault], 0))
            else:
                plans.append((i, [Alloc(next_id, size), fault], 1))
                next_id += 1
        return plans

    sites = _host_accesses(events, spec.mode)
    rng.shuffle(sites)
    used_victims: set[int] = set()
    used_targets: set[int] = set()
    for i in sites:
        if len(plans) == spec.count:
            break
        host = events[i]
        victim = host.ptr.alloc_id
        if victim in used_victims or victim in used_targets or not lay.live(victim, i):
            continue
        width = host.width
        if fc is FaultClass.ADJ_OOB:
            target = lay.upper_neighbour(victim, i)
        else:
            banned = lay.neighbours(victim, i) | {victim} | used_victims
            target = lay.pick_live(rng, i, banned)
        if target is None:
            continue
        off = lay.base[target] - lay.base[victim] + _rand_offset(rng, lay.size[target], width)
        ptr = PtrExpr(victim, off)
        # without compiler support, or beyond the pass's scope, the access is unchecked
        if fc is FaultClass.NONADJ_INTER_OOB or spec.mode is EngineMode.HWONLY:
            fault = Access(host.kind, ptr, width)
        else:
            if not isinstance(host, CheckG):
                raise InjectionError(f"{fc.value} in compiled mode needs checked (G) accesses")
            fault = CheckG(host.kind, host.vreg, ptr, width)
        used_victims.add(victim)
        if fc is FaultClass.NONADJ_INTER_OOB:
            used_targets.add(target)
        plans.append((i, [fault], 0))
    if len(plans) < spec.count:
        raise InjectionError(f"only {len(plans)} sites can host {fc.value}, {spec.count} requested")
    return sorted(plans, key=lambda p: p[0])


def inject(events, spec: FaultSpec, alignment: int = 256) -> LabeledTrace:
    """Insert ``spec.count`` faults of one class; deterministic under ``spec.seed``."""
    rng = random.Random(spec.seed)
    plans = _plan(list(events), spec, rng, alignment)
    out, injections = [], []
    p = 0
    for i, ev in enumerate(events):
        out.append(ev)
        while p < len(plans) and plans[p][0] == i:
            _, new, pos = plans[p]
            start = len(out)
            out.extend(new)
            idx = [start + k for k in range(len(new))]
            injections.append(Injection(spec.fault, idx[pos],
                                        tuple(j for k, j in enumerate(idx) if k != pos)))
            p += 1
    return LabeledTrace(out, injections)


# -- scoring ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassScore:
    fault: FaultClass
    injected: int
    detected: int
    ci_low: float
    ci_high: float

    @property
    def rate(self) -> float:
        return self.detected / self.injected if self.injected else 0.0

    def as_dict(self):
        return {"class": self.fault.value, "injected": self.injected, "detected": self.detected,
                "rate": self.rate, "ci95": [self.ci_low, self.ci_high]}


@dataclass
class DetectionReport:
    config: dict
    classes: list[ClassScore]
    unexpected_violations: list[int] = field(default_factory=list)

    def as_dict(self):
        return {"config": self.config, "classes": [c.as_dict() for c in self.classes],
                "unexpected_violations": self.unexpected_violations}


def binomial_ci(k: int, n: int, level: float = 0.95):
    """Two-sided Clopper-Pearson interval."""
    ci = binomtest(k, n).proportion_ci(confidence_level=level, method="exact")
    return float(ci.low), float(ci.high)


def score(labeled: LabeledTrace, config: EngineConfig) -> DetectionReport:
    stats = replay(labeled.events, config)
    hit = {v.event_index for v in stats.violations}
    faulted = {inj.event_index for inj in labeled.injections}
    per_class: dict[FaultClass, list[int]] = {}
    for inj in labeled.injections:
        tally = per_class.setdefault(inj.fault, [0, 0])
        tally[0] += 1
        tally[1] += inj.event_index in hit
    classes = [ClassScore(fc, n, k, *binomial_ci(k, n)) for fc, (n, k) in per_class.items()]
    return DetectionReport(config.as_dict(), classes, sorted(hit - faulted))


def host_trace(fault: FaultClass, count: int, seed: int = 0,
               mode: EngineMode = EngineMode.HWONLY) -> list:
    """A clean trace large enough to host ``count`` faults of class ``fault``."""
    style = "compiled" if mode is EngineMode.COMPILED else "hwonly"
    allocs = 2 * count + 8 if fault is FaultClass.NONADJ_INTER_OOB else count + 8
    return generate(SynthSpec(allocs=allocs, working_set=4, seed=seed, style=style,
                              min_size=256, max_size=1 << 16, free_policy="end"))


# Published rates of two other tagging schemes, carried as static reference
# columns; they describe other designs and are never simulated here.
REFERENCE_COLUMNS = {
    "gpushield": {"adj-oob": "100%", "nonadj-intra-oob": "99.2%", "nonadj-inter-oob": "99.2%",
                  "sub-object-oob": "0%", "uaf-immediate": "0%", "uaf-delayed": "0%"},
    "lak-int": {"adj-oob": "100%", "nonadj-intra-oob": "99.2%", "nonadj-inter-oob": "99.2%",
                "sub-object-oob": "0%", "uaf-immediate": "100%", "uaf-delayed": "99.2%"},
}
NOT_INJECTABLE = ("sub-object-oob",)


def detection_matrix(count: int, seed: int = 0, config: EngineConfig = EngineConfig()) -> dict:
    """Every fault class scored in both modes, plus the reference columns.

    Sub-object overflow has no injector (a single allocation entry cannot
    see struct fields), so its row carries reference values only.
    """
    rows = []
    for fc in FaultClass:
        row = {"class": fc.value}
        for mode in EngineMode:
            lt = inject(host_trace(fc, count, seed=seed, mode=mode),
                        FaultSpec(fc, count, seed=seed, mode=mode))
            rep = score(lt, replace(config, mode=mode))
            (c,) = rep.classes
            row[mode.value] = {**c.as_dict(), "unexpected_violations": len(rep.unexpected_violations)}
            del row[mode.value]["class"]
        row["reference"] = {name: col[fc.value] for name, col in REFERENCE_COLUMNS.items()}
        rows.append(row)
    for name in NOT_INJECTABLE:
        rows.append({"class": name, **{m.value: None for m in EngineMode},
                     "reference": {k: col[name] for k, col in REFERENCE_COLUMNS.items()}})
    cfg = config.as_dict()
    cfg["mode"] = [m.value for m in EngineMode]
    return {"config": cfg, "count": count, "seed": seed, "rows": rows}
