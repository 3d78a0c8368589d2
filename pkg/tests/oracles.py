"""Brute-force reference implementations the fast paths are checked against."""


def stack_distances(ids):
    """O(n^2) LRU stack distance: distinct ids since the previous touch, inclusive."""
    out = []
    for i, x in enumerate(ids):
        prev = None
        for j in range(i - 1, -1, -1):
            if ids[j] == x:
                prev = j
                break
        out.append(-1 if prev is None else len(set(ids[prev + 1:i + 1])))
    return out


def lru_misses(ids, ops, capacity):
    """List-based LRU with explicit invalidation (op 1)."""
    stack, misses = [], 0
    for x, op in zip(ids, ops):
        if op == 1:
            if x in stack:
                stack.remove(x)
            continue
        if x in stack:
            stack.remove(x)
        else:
            misses += 1
            if len(stack) == capacity:
                stack.pop(0)
        stack.append(x)
    return misses
