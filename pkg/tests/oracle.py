"""Brute-force reference: explicit document-ID sets and exact fractions.

Shares no code with the engine on purpose.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction


def doc_sets(docs):
    """docs: list of (source set, target set) -> (DS_source, DS_target) dicts of id sets."""
    ds_src, ds_tgt = {}, {}
    for i, (src, tgt) in enumerate(docs):
        for t in src:
            ds_src.setdefault(t, set()).add(i)
        for t in tgt:
            ds_tgt.setdefault(t, set()).add(i)
    return ds_src, ds_tgt


def jaccard_ranking(docs, query):
    """[(term, Fraction score, joint)] best-first; None if query unknown."""
    ds_src, ds_tgt = doc_sets(docs)
    if query not in ds_src:
        return None
    x = ds_src[query]
    out = []
    for term, y in ds_tgt.items():
        inter = x & y
        if inter:
            out.append((term, Fraction(len(inter), len(x | y)), len(inter)))
    out.sort(key=lambda r: (-r[1], -r[2], r[0]))
    return out


def dice(df_x, df_y, df_xy):
    return Fraction(2 * df_xy, df_x + df_y)


def nwd(df_x, df_y, df_xy, n):
    lx, ly = math.log(df_x), math.log(df_y)
    den = math.log(n) - min(lx, ly)
    if den == 0:
        return 0.0 if df_xy == df_x else math.inf
    return (max(lx, ly) - math.log(df_xy)) / den


def random_corpus(rng: random.Random, max_docs=50, n_src=20, n_tgt=10):
    src_vocab = [f"s{i:02d}" for i in range(rng.randint(1, n_src))]
    tgt_vocab = [f"t{i:02d}" for i in range(rng.randint(1, n_tgt))]
    docs = []
    for _ in range(rng.randint(1, max_docs)):
        src = set(rng.sample(src_vocab, rng.randint(0, min(5, len(src_vocab)))))
        tgt = set(rng.sample(tgt_vocab, rng.randint(0, min(4, len(tgt_vocab)))))
        docs.append((src, tgt))
    return docs


def count_tables(docs):
    """(n_docs, source_df, target_df, pair_df) by direct counting."""
    ds_src, ds_tgt = doc_sets(docs)
    pairs = {}
    for s, xs in ds_src.items():
        for t, ys in ds_tgt.items():
            n = len(xs & ys)
            if n:
                pairs[(s, t)] = n
    return (
        len(docs),
        {k: len(v) for k, v in ds_src.items()},
        {k: len(v) for k, v in ds_tgt.items()},
        pairs,
    )
