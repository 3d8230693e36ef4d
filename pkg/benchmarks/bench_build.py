"""Compare the numba and numpy kernel backends.

    python benchmarks/bench_build.py --docs 40000 --repeat 3

Times the raw pair kernels on pre-encoded id arrays and the full
``build_index`` path (tokenizing included) for each available backend, and
checks both backends produce the same index.
"""

from __future__ import annotations

import argparse
import itertools
import random
import statistics
import time

import numpy as np

from termsuggest._kernels import HAVE_NUMBA, Backend
from termsuggest.engine import build_index
from termsuggest.metadata import FieldExtraction


def synthetic(n_docs: int, seed: int, n_src: int = 30_000, n_tgt: int = 3_000, per_src: int = 10, per_tgt: int = 5):
    rng = random.Random(seed)
    words = [f"w{i}" for i in range(n_src)]
    subjects = [f"subject {i}" for i in range(n_tgt)]
    cw_src = list(itertools.accumulate(1 / (i + 1) for i in range(n_src)))
    cw_tgt = list(itertools.accumulate(1 / (i + 1) for i in range(n_tgt)))
    return [
        FieldExtraction(f"d{d}", [" ".join(rng.choices(words, cum_weights=cw_src, k=per_src))],
                        rng.choices(subjects, cum_weights=cw_tgt, k=per_tgt))
        for d in range(n_docs)
    ]


def id_arrays(n_docs: int, seed: int):
    rng = np.random.default_rng(seed)
    ns = rng.integers(5, 15, n_docs)
    nt = rng.integers(2, 8, n_docs)
    src_ptr = np.concatenate(([0], np.cumsum(ns)))
    tgt_ptr = np.concatenate(([0], np.cumsum(nt)))
    src_ids = rng.zipf(1.3, src_ptr[-1]) % 30_000
    tgt_ids = rng.zipf(1.3, tgt_ptr[-1]) % 3_000
    return src_ptr, src_ids, tgt_ptr, tgt_ids, 3_000


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times), statistics.median(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--docs", type=int, default=40_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    names = ["numpy"] + (["numba"] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba unavailable or disabled; timing numpy only")
    arrays = id_arrays(args.docs, args.seed)
    corpus = synthetic(args.docs, args.seed)

    results = {}
    for name in names:
        be = Backend(name)
        be.count_keys(be.pair_keys(*id_arrays(10, 0)))  # compile outside the timing
        be.merge_counts(np.arange(3), np.ones(3, dtype=np.int64))

        def kernels():
            keys = be.pair_keys(*arrays)
            uniq, counts = be.count_keys(keys)
            be.merge_counts(np.concatenate([uniq, uniq]), np.concatenate([counts, counts]))

        k_best, k_med = best_of(kernels, args.repeat)
        b_best, b_med = best_of(lambda: build_index(corpus, backend=be), args.repeat)
        results[name] = build_index(corpus, backend=be)
        print(f"{name:6s} kernels best {k_best * 1e3:8.1f} ms  median {k_med * 1e3:8.1f} ms | "
              f"build_index best {b_best:6.2f} s  median {b_med:6.2f} s  ({args.docs / b_best:,.0f} docs/s)")

    if len(results) == 2:
        same = results["numpy"] == results["numba"]
        print(f"indices identical: {same}")
        if not same:
            raise SystemExit(1)


if __name__ == "__main__":
    main()
