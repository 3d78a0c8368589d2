"""Root-pointer instrumentation over a small SSA kernel IR."""
from importlib import resources

from .analysis import RootFinder, accesses, find_roots, instrument, loadmeta_count
from .interp import (CheckOutcome, CoverageClass, KernelInput, MetaRef, Ptr, bloat,
                     classify_coverage, execute, lower)
from .ir import Function, IrError, parse_ir, verify


def sample(name: str = "two_buffer") -> Function:
    """Bundled example kernel."""
    return parse_ir(resources.files(__package__).joinpath(f"{name}.ir").read_text())


__all__ = ["CheckOutcome", "CoverageClass", "Function", "IrError", "KernelInput", "MetaRef", "Ptr",
           "RootFinder", "accesses", "bloat", "classify_coverage", "execute", "find_roots",
           "instrument", "loadmeta_count", "lower", "parse_ir", "sample", "verify"]
