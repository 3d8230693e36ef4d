"""Pair-counting kernels for index construction.

Two implementations with identical results: numba-compiled loops and a
vectorized numpy path. Numba is used when importable unless
``TERMSUGGEST_DISABLE_NUMBA`` is set to a truthy value.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("TERMSUGGEST_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by TERMSUGGEST_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


# -- numpy path ------------------------------------------------------------


def pair_keys_numpy(src_ptr, src_ids, tgt_ptr, tgt_ids, n_targets):
    """Encode every (source, target) pair of every document as one int64."""
    ns = np.diff(src_ptr)
    nt = np.diff(tgt_ptr)
    npairs = ns * nt
    total = int(npairs.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    doc = np.repeat(np.arange(len(ns)), npairs)
    start = np.cumsum(npairs) - npairs
    offset = np.arange(total, dtype=np.int64) - start[doc]
    width = nt[doc]
    s = src_ids[src_ptr[:-1][doc] + offset // width]
    t = tgt_ids[tgt_ptr[:-1][doc] + offset % width]
    return s.astype(np.int64) * np.int64(n_targets) + t.astype(np.int64)


def count_keys_numpy(keys):
    uniq, counts = np.unique(keys, return_counts=True)
    return uniq.astype(np.int64), counts.astype(np.int64)


def merge_counts_numpy(keys, counts):
    """Sum ``counts`` over equal ``keys``; output sorted by key."""
    if len(keys) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    order = np.argsort(keys, kind="stable")
    k = keys[order]
    c = counts[order]
    starts = np.flatnonzero(np.concatenate(([True], k[1:] != k[:-1])))
    return k[starts].astype(np.int64), np.add.reduceat(c, starts).astype(np.int64)


# -- numba path ------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def pair_keys_numba(src_ptr, src_ids, tgt_ptr, tgt_ids, n_targets):
        n_docs = len(src_ptr) - 1
        total = 0
        for d in range(n_docs):
            total += (src_ptr[d + 1] - src_ptr[d]) * (tgt_ptr[d + 1] - tgt_ptr[d])
        out = np.empty(total, dtype=np.int64)
        pos = 0
        for d in range(n_docs):
            for i in range(src_ptr[d], src_ptr[d + 1]):
                base = np.int64(src_ids[i]) * n_targets
                for j in range(tgt_ptr[d], tgt_ptr[d + 1]):
                    out[pos] = base + tgt_ids[j]
                    pos += 1
        return out

    @njit(cache=True)
    def _run_length(sorted_keys, weights):
        n = len(sorted_keys)
        uniq = np.empty(n, dtype=np.int64)
        counts = np.empty(n, dtype=np.int64)
        m = 0
        for i in range(n):
            if m > 0 and uniq[m - 1] == sorted_keys[i]:
                counts[m - 1] += weights[i]
            else:
                uniq[m] = sorted_keys[i]
                counts[m] = weights[i]
                m += 1
        return uniq[:m].copy(), counts[:m].copy()

    @njit(cache=True)
    def _run_length_unit(sorted_keys):
        n = len(sorted_keys)
        uniq = np.empty(n, dtype=np.int64)
        counts = np.empty(n, dtype=np.int64)
        m = 0
        for i in range(n):
            if m > 0 and uniq[m - 1] == sorted_keys[i]:
                counts[m - 1] += 1
            else:
                uniq[m] = sorted_keys[i]
                counts[m] = 1
                m += 1
        return uniq[:m].copy(), counts[:m].copy()

    # numba's own sort is several times slower than numpy's, so sorting stays
    # in numpy and only the loops are compiled

    def count_keys_numba(keys):
        return _run_length_unit(np.sort(keys))

    def merge_counts_numba(keys, counts):
        order = np.argsort(keys, kind="stable")
        return _run_length(keys[order], counts[order])

else:  # pragma: no cover - exercised only without numba
    pair_keys_numba = count_keys_numba = merge_counts_numba = None


def _as_i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


class Backend:
    """Bundle of kernels; ``name`` is ``"numba"`` or ``"numpy"``."""

    def __init__(self, name: str):
        if name == "numba" and not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        self.name = name
        if name == "numba":
            self._pair, self._count, self._merge = pair_keys_numba, count_keys_numba, merge_counts_numba
        elif name == "numpy":
            self._pair, self._count, self._merge = pair_keys_numpy, count_keys_numpy, merge_counts_numpy
        else:
            raise ValueError(f"unknown backend {name!r}")

    def pair_keys(self, src_ptr, src_ids, tgt_ptr, tgt_ids, n_targets: int):
        return self._pair(_as_i64(src_ptr), _as_i64(src_ids), _as_i64(tgt_ptr), _as_i64(tgt_ids), np.int64(n_targets))

    def count_keys(self, keys):
        return self._count(_as_i64(keys))

    def merge_counts(self, keys, counts):
        return self._merge(_as_i64(keys), _as_i64(counts))

    def __repr__(self):
        return f"Backend({self.name!r})"


DEFAULT_BACKEND = Backend("numba" if HAVE_NUMBA else "numpy")


def get_backend(name: str | None = None) -> Backend:
    if name is None:
        return DEFAULT_BACKEND
    return Backend(name)
