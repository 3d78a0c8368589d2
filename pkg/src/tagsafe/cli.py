"""Command-line front end.

Every report is JSON (sorted keys) carrying the full run configuration, so
identical argv and inputs give byte-identical output. Safety violations are
results and never change the exit status; malformed inputs exit with 2.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

from .core import PRESETS, preset
from .engine import EngineConfig, EngineMode, TraceError
from .faults import (FaultClass, FaultSpec, InjectionError, LabeledTrace, detection_matrix,
                     host_trace, inject, score)
from .irpass import (IrError, KernelInput, Ptr, bloat, classify_coverage, find_roots, instrument,
                     loadmeta_count, lower, parse_ir)
from .metastore import StoreKind
from .mlb import MlbConfig
from .sim import (SCHEMES, characterize, detection_rate, format_rate, fraction_to_json, replay,
                  scheme, storage_overhead)
from .trace import SynthSpec, TraceParseError, generate, parse, serialize


class UsageError(Exception):
    pass


def _engine_flags(p):
    p.add_argument("--arch", choices=sorted(PRESETS), default="va57t7")
    p.add_argument("--store", choices=[k.value for k in StoreKind], default="tree")
    p.add_argument("--mlb", type=int, default=8, metavar="N",
                   help="MLB capacity in entries, 0 disables it (default 8)")
    p.add_argument("--mlb-no-check-fill", action="store_true",
                   help="MEMCHECK misses do not fill the MLB")
    p.add_argument("--mode", choices=[m.value for m in EngineMode], default="compiled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reclaim", type=int, default=None, metavar="R",
                   help="remove tombstoned entries once churn exceeds R (default never)")
    p.add_argument("--point-check", action="store_true",
                   help="bounds-check the first byte only instead of offset+width")
    p.add_argument("--distinct-adjacent-tags", action="store_true")


def _output_flags(p):
    p.add_argument("--json", dest="json_path", metavar="PATH", help="write the JSON report here")
    p.add_argument("--csv", dest="csv_path", metavar="PATH", help="also write a flat CSV")


def _engine_config(args) -> EngineConfig:
    if not 0 <= args.mlb <= 64:
        raise UsageError(f"--mlb must be in [0, 64], got {args.mlb}")
    if args.reclaim is not None and args.reclaim < 0:
        raise UsageError("--reclaim must be non-negative")
    arch = preset(args.arch, distinct_adjacent_tags=args.distinct_adjacent_tags)
    mlb = None if args.mlb == 0 else MlbConfig(args.mlb, not args.mlb_no_check_fill)
    return EngineConfig(arch=arch, store=StoreKind(args.store), mlb=mlb,
                        mode=EngineMode(args.mode), seed=args.seed,
                        reclaim_threshold=math.inf if args.reclaim is None else args.reclaim,
                        point_check=args.point_check)


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        out = {}
        for k, v in obj.items():
            out.update(_flatten(v, f"{prefix}{k}."))
        return out
    if isinstance(obj, list):
        return {prefix[:-1]: json.dumps(obj, sort_keys=True)}
    return {prefix[:-1]: obj}


def _emit(report: dict, args, rows=None):
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if getattr(args, "json_path", None):
        Path(args.json_path).write_text(text)
    else:
        sys.stdout.write(text)
    if getattr(args, "csv_path", None):
        rows = rows if rows is not None else [_flatten(report)]
        cols = sorted({k for r in rows for k in r})
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        Path(args.csv_path).write_text(buf.getvalue())


def _read_trace(path):
    try:
        return parse(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _write_text(text, path):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ------------------------------------------------------------------


def cmd_simulate(args):
    cfg = _engine_config(args)
    stats = replay(_read_trace(args.trace), cfg)
    report = stats.as_dict()
    report["input"] = str(args.trace)
    if args.no_violation_list:
        del report["violations"]["list"]
    _emit(report, args)


def cmd_characterize(args):
    events = _read_trace(args.trace)
    report = {"input": str(args.trace), **characterize(events).as_dict()}
    _emit(report, args)


def cmd_gen(args):
    spec = SynthSpec(allocs=args.allocs, working_set=args.working_set, accesses=args.accesses,
                     kernels=args.kernels, seed=args.seed, min_size=args.min_size,
                     max_size=args.max_size, style=args.style, alloc_policy=args.alloc_policy,
                     free_policy=args.free_policy, nops_per_access=args.nops,
                     shared_per_access=args.shared, width=args.width)
    try:
        events = generate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _write_text(serialize(events), args.output)


def _labeled(args, mode):
    fc = FaultClass(args.fault_class)
    if args.trace:
        events = _read_trace(args.trace)
    else:
        events = host_trace(fc, args.count, seed=args.seed, mode=mode)
    return inject(events, FaultSpec(fc, args.count, seed=args.seed, mode=mode))


def cmd_inject(args):
    _write_text(_labeled(args, EngineMode(args.mode)).dumps(), args.output)


def cmd_score(args):
    cfg = _engine_config(args)
    if args.matrix:
        if args.labeled or args.fault_class or args.trace:
            raise UsageError("--matrix generates its own traces; drop the trace and --class")
        report = detection_matrix(args.count, seed=args.seed, config=cfg)
        rows = []
        for r in report["rows"]:
            flat = {"class": r["class"]}
            for m in ("compiled", "hwonly"):
                cell = r[m] or {}
                flat[f"{m}.rate"] = cell.get("rate")
                flat[f"{m}.ci_low"] = cell.get("ci95", [None])[0]
                flat[f"{m}.ci_high"] = cell.get("ci95", [None, None])[1]
            flat.update({f"reference.{k}": v for k, v in r["reference"].items()})
            rows.append(flat)
        _emit(report, args, rows)
        return
    if args.labeled:
        try:
            labeled = LabeledTrace.loads(Path(args.labeled).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read {args.labeled}: {exc.strerror}") from None
    else:
        if args.fault_class is None:
            raise UsageError("score needs a labeled trace or --class")
        labeled = _labeled(args, cfg.mode)
    rep = score(labeled, cfg)
    report = rep.as_dict()
    report["input"] = args.labeled or {"class": args.fault_class, "count": args.count,
                                       "seed": args.seed, "generated": True}
    report["analytic_rate"] = detection_rate(cfg.arch.valid_tag_count)
    rows = [{**_flatten(report["config"], "config."), **c, "ci95": None,
             "ci_low": c["ci95"][0], "ci_high": c["ci95"][1]} for c in report["classes"]]
    for r in rows:
        del r["ci95"]
    _emit(report, args, rows)


def _bindings(fn, args):
    allocs, memory, bound = {}, {}, {}
    sizes = dict(_kv(s, "--alloc") for s in args.alloc)
    ints = dict(_kv(s, "--int") for s in args.int)
    next_id = 1
    for ty, name in fn.params:
        if ty == "ptr":
            allocs[next_id] = sizes.pop(name, args.default_size)
            bound[name] = Ptr(next_id)
            next_id += 1
        else:
            bound[name] = ints.pop(name, 0)
    unknown = sorted(set(sizes) | set(ints))
    if unknown:
        raise UsageError(f"no parameter named {', '.join(unknown)}")
    if args.tid_count < 1:
        raise UsageError("--tid-count must be >= 1")
    return KernelInput(bound, allocs, memory, range(args.tid_count))


def _kv(s, flag):
    name, sep, val = s.partition("=")
    if not sep:
        raise UsageError(f"{flag} expects NAME=VALUE, got {s!r}")
    try:
        return name, int(val, 0)
    except ValueError:
        raise UsageError(f"{flag} {name}: {val!r} is not an integer") from None


def _read_ir(path):
    try:
        return parse_ir(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def cmd_instrument(args):
    fn = _read_ir(args.ir)
    out = instrument(fn)
    _write_text(str(out), args.output)
    inp = _bindings(fn, args)
    report = {
        "input": str(args.ir),
        "tid_count": args.tid_count,
        "roots": {a: sorted(r) for a, r in sorted(find_roots(fn).items())},
        "loadmeta": loadmeta_count(out),
        "bloat": bloat(fn, out, inp),
        "coverage": classify_coverage(out, inp),
    }
    if args.json_path or args.output:
        # stdout already carries the IR unless it went to a file
        _emit(report, args)
    else:
        sys.stderr.write(json.dumps(report, sort_keys=True) + "\n")


def cmd_lower(args):
    fn = _read_ir(args.ir)
    out = instrument(fn)
    _write_text(serialize(lower(out, _bindings(fn, args))), args.output)


def cmd_storage(args):
    names = sorted(SCHEMES) if args.scheme == "all" else [args.scheme]
    if args.footprint <= 0 or args.objects < 1:
        raise UsageError("--footprint and --objects must be positive")
    rows = []
    for name in names:
        meta, pct = storage_overhead(args.footprint, args.objects, scheme(name))
        rows.append({"scheme": name, "metadata_bytes": fraction_to_json(meta),
                     "percent": fraction_to_json(pct)})
    report = {"footprint": args.footprint, "objects": args.objects, "schemes": rows}
    if args.tag_bits is not None:
        valid = (1 << args.tag_bits) - 2
        rate = detection_rate(valid)
        report["detection"] = {"tag_bits": args.tag_bits, "valid_tags": valid, "rate": rate,
                               "formatted": format_rate(rate)}
    _emit(report, args, rows)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tagsafe", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replay a trace and report loads, MLB and violations")
    p.add_argument("trace")
    _engine_flags(p)
    _output_flags(p)
    p.add_argument("--no-violation-list", action="store_true", help="report counts only")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("characterize", help="size distribution, live allocations, working set")
    p.add_argument("trace")
    _output_flags(p)
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("gen", help="generate a synthetic trace")
    p.add_argument("--allocs", type=int, required=True)
    p.add_argument("--working-set", type=int, default=1)
    p.add_argument("--accesses", type=int, default=0)
    p.add_argument("--kernels", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-size", type=int, default=256)
    p.add_argument("--max-size", type=int, default=1 << 20)
    p.add_argument("--style", choices=["compiled", "hwonly"], default="compiled")
    p.add_argument("--alloc-policy", choices=["upfront", "lazy"], default="upfront")
    p.add_argument("--free-policy", choices=["end", "eager", "none"], default="end")
    p.add_argument("--nops", type=int, default=0, help="N events per access")
    p.add_argument("--shared", type=int, default=0, help="S events per access")
    p.add_argument("--width", type=int, default=4)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gen)

    for name, helptext in (("inject", "insert labeled faults into a clean trace"),
                           ("score", "replay a labeled trace and score detection per class")):
        p = sub.add_parser(name, help=helptext)
        if name == "inject":
            p.add_argument("trace", nargs="?", help="host trace (default: generate one)")
            p.add_argument("--class", dest="fault_class", required=True,
                           choices=[f.value for f in FaultClass])
            p.add_argument("--mode", choices=[m.value for m in EngineMode], default="hwonly")
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("-o", "--output")
            p.set_defaults(func=cmd_inject)
        else:
            p.add_argument("labeled", nargs="?", help="labeled trace from 'inject'")
            p.add_argument("--class", dest="fault_class", choices=[f.value for f in FaultClass])
            p.add_argument("--trace", help="host trace when generating injections")
            p.add_argument("--matrix", action="store_true",
                           help="score every class in both modes, with reference columns")
            _engine_flags(p)
            _output_flags(p)
            p.set_defaults(func=cmd_score)
        p.add_argument("--count", type=int, default=100)

    for name, func in (("instrument", cmd_instrument), ("lower", cmd_lower)):
        p = sub.add_parser(name, help=f"{name} an IR kernel")
        p.add_argument("ir")
        p.add_argument("-o", "--output")
        p.add_argument("--tid-count", type=int, default=1)
        p.add_argument("--alloc", action="append", default=[], metavar="PARAM=SIZE",
                       help="allocation size bound to a pointer parameter")
        p.add_argument("--int", action="append", default=[], metavar="PARAM=VALUE")
        p.add_argument("--default-size", type=int, default=1024)
        if name == "instrument":
            p.add_argument("--json", dest="json_path", metavar="PATH")
        p.set_defaults(func=func)

    p = sub.add_parser("storage", help="metadata storage cost of a footprint under a scheme")
    p.add_argument("--footprint", type=int, required=True, help="bytes")
    p.add_argument("--objects", type=int, default=1)
    p.add_argument("--scheme", choices=sorted(SCHEMES) + ["all"], default="all")
    p.add_argument("--tag-bits", type=int, help="also report the tag-collision detection rate")
    _output_flags(p)
    p.set_defaults(func=cmd_storage)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.func(args)
    except UsageError as exc:
        ap.error(str(exc))
    except (TraceParseError, TraceError, IrError, InjectionError, ValueError) as exc:
        print(f"{ap.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
