"""Pure-Python twins of the compiled LRU kernels."""
from collections import OrderedDict

import numpy as np


def stack_distances(ids):
    seq = [int(x) for x in ids]
    n = len(seq)
    out = np.empty(n, dtype=np.int64)
    tree = [0] * (n + 1)
    last = {}
    total = 0
    for t, key in enumerate(seq):
        p = last.get(key)
        if p is None:
            out[t] = -1
        else:
            s, i = 0, p
            while i > 0:
                s += tree[i]
                i -= i & -i
            out[t] = total - s
            i = p + 1
            while i <= n:
                tree[i] -= 1
                i += i & -i
            total -= 1
        i = t + 1
        while i <= n:
            tree[i] += 1
            i += i & -i
        total += 1
        last[key] = t
    return out


def lru_misses(ids, ops, capacity):
    if capacity < 1:
        raise ValueError("capacity must be >= 1")
    lines = OrderedDict()
    misses = 0
    for key, op in zip(ids, ops):
        key = int(key)
        if op == 1:
            lines.pop(key, None)
            continue
        if key in lines:
            lines.move_to_end(key)
            continue
        misses += 1
        if len(lines) >= capacity:
            lines.popitem(last=False)
        lines[key] = None
    return misses
