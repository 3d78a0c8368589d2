# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LRU kernels. Must stay behaviour-identical to ``_slow.py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def stack_distances(ids):
    """LRU stack distance of every access; -1 marks a first touch.

    Fenwick tree over access times: an access at time t to an id last seen
    at time p has distance = number of ids whose latest access lies in [p, t).
    """
    cdef cnp.int64_t[::1] seq = np.ascontiguousarray(ids, dtype=np.int64)
    cdef Py_ssize_t n = seq.shape[0]
    out_arr = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] out = out_arr
    cdef cnp.int64_t[::1] tree = np.zeros(n + 1, dtype=np.int64)
    cdef dict last = {}
    cdef Py_ssize_t t, i, p
    cdef cnp.int64_t s, total = 0
    for t in range(n):
        key = seq[t]
        prev = last.get(key)
        if prev is None:
            out[t] = -1
        else:
            p = <Py_ssize_t>prev
            # marks at times >= p: total - prefix(p - 1)
            s = 0
            i = p
            while i > 0:
                s += tree[i]
                i -= i & (-i)
            out[t] = total - s
            i = p + 1
            while i <= n:
                tree[i] -= 1
                i += i & (-i)
            total -= 1
        i = t + 1
        while i <= n:
            tree[i] += 1
            i += i & (-i)
        total += 1
        last[key] = t
    return out_arr


def lru_misses(ids, ops, Py_ssize_t capacity):
    """Misses of a fully associative LRU cache of ``capacity`` lines.

    ``ops[i] == 0`` accesses ``ids[i]`` (filling on miss); ``ops[i] == 1``
    invalidates it.
    """
    cdef cnp.int64_t[::1] seq = np.ascontiguousarray(ids, dtype=np.int64)
    cdef cnp.int8_t[::1] kind = np.ascontiguousarray(ops, dtype=np.int8)
    cdef Py_ssize_t n = seq.shape[0]
    cdef cnp.int64_t[::1] lines = np.empty(max(capacity, 1), dtype=np.int64)
    cdef Py_ssize_t used = 0, t, j, k
    cdef cnp.int64_t key, misses = 0
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    for t in range(n):
        key = seq[t]
        j = -1
        for k in range(used):
            if lines[k] == key:
                j = k
                break
        if kind[t] == 1:
            if j >= 0:
                for k in range(j, used - 1):
                    lines[k] = lines[k + 1]
                used -= 1
            continue
        if j < 0:
            misses += 1
            if used == capacity:
                j = 0
            else:
                j = used
                used += 1
                lines[j] = key
                continue
        # move slot j to the most-recent end; slot 0 is least recent
        for k in range(j, used - 1):
            lines[k] = lines[k + 1]
        lines[used - 1] = key
    return misses
