"""Compiled vs pure-Python LRU kernels on a generated access stream.

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 3]
"""
import argparse
import sys
import timeit

import numpy as np

from tagsafe import _kernels
from tagsafe._kernels import _slow


def stream(n, universe, seed):
    rng = np.random.default_rng(seed)
    # mostly-local reuse with occasional jumps, like a sliding working set
    ids = np.cumsum(rng.integers(-3, 4, n)) % universe
    ops = (rng.random(n) < 0.01).astype(np.int8)
    return ids.astype(np.int64), ops


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--universe", type=int, default=5_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels.BACKEND != "cython":
        print("compiled extension not built; run 'pip install -e . --no-build-isolation'")
        return 1
    from tagsafe._kernels import _fast

    ids, ops = stream(args.n, args.universe, args.seed)
    assert np.array_equal(_fast.stack_distances(ids), _slow.stack_distances(ids))
    assert _fast.lru_misses(ids, ops, 8) == _slow.lru_misses(ids, ops, 8)

    print(f"n={args.n} universe={args.universe} best of {args.repeat}")
    print(f"{'kernel':<18}{'python s':>10}{'cython s':>10}{'speedup':>9}")
    for name, call in (("stack_distances", lambda m: m.stack_distances(ids)),
                       ("lru_misses(8)", lambda m: m.lru_misses(ids, ops, 8))):
        slow = min(timeit.repeat(lambda: call(_slow), number=1, repeat=args.repeat))
        fast = min(timeit.repeat(lambda: call(_fast), number=1, repeat=args.repeat))
        print(f"{name:<18}{slow:>10.4f}{fast:>10.4f}{slow / fast:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
