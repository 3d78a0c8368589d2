"""LRU kernels, compiled when the extension is built and pure Python otherwise."""
from . import _slow

try:
    from . import _fast as _impl
    BACKEND = "cython"
except ImportError:
    _impl = _slow
    BACKEND = "python"

stack_distances = _impl.stack_distances
lru_misses = _impl.lru_misses

__all__ = ["BACKEND", "stack_distances", "lru_misses"]
