"""Co-occurrence index over (free term, controlled term) document frequencies.

The index stores, for a corpus of ``n_docs`` documents, how many documents
contain each source term, each target term, and each (source, target) pair.
Relatedness of target ``y`` to query ``x`` is the Jaccard index of their
document sets, computed from those counts:

    J(x, y) = df_xy / (df_x + df_y - df_xy)

Dice and the normalized web distance (NWD) are available as alternatives.
"""

from __future__ import annotations

import enum
import hashlib
import tempfile
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._kernels import Backend, get_backend
from .metadata import FieldExtraction
from .text import PipelineConfig, normalize_term, tokenize_free_text


class Metric(str, enum.Enum):
    JACCARD = "jaccard"
    DICE = "dice"
    NWD = "nwd"

    @property
    def is_distance(self) -> bool:
        return self is Metric.NWD

    @classmethod
    def parse(cls, value: str | Metric) -> Metric:
        if isinstance(value, Metric):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(f"unknown metric {value!r}; expected jaccard, dice or nwd") from None


def score_array(metric: Metric, df_x: int, df_y: np.ndarray, df_xy: np.ndarray, n_docs: int) -> np.ndarray:
    """Vectorized metric for one query term against many targets.

    All counts must already satisfy the preconditions checked by
    :func:`similarity`. NWD uses natural logs; when ``df_x == df_y == n_docs``
    the denominator vanishes and the result is 0 for full overlap, ``inf``
    otherwise.
    """
    df_y = np.asarray(df_y, dtype=np.int64)
    df_xy = np.asarray(df_xy, dtype=np.int64)
    if metric is Metric.JACCARD:
        return df_xy / (df_x + df_y - df_xy)
    if metric is Metric.DICE:
        return (2 * df_xy) / (df_x + df_y)
    log_x = np.log(np.float64(df_x))
    log_y = np.log(df_y.astype(np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        num = np.maximum(log_x, log_y) - np.log(df_xy.astype(np.float64))
        den = np.log(np.float64(n_docs)) - np.minimum(log_x, log_y)
        out = num / den
    degenerate = den == 0
    if degenerate.any():
        out = np.where(degenerate, np.where(df_xy == df_x, 0.0, np.inf), out)
    return out


def similarity(metric: Metric | str, df_x: int, df_y: int, df_xy: int, n_docs: int) -> float:
    metric = Metric.parse(metric)
    if df_x < 1 or df_y < 1:
        raise ValueError("df_x and df_y must be >= 1")
    if not 0 <= df_xy <= min(df_x, df_y):
        raise ValueError("df_xy must lie in [0, min(df_x, df_y)]")
    if n_docs < max(df_x, df_y):
        raise ValueError("n_docs must be >= max(df_x, df_y)")
    if metric is Metric.NWD and (df_xy < 1 or n_docs < 2):
        raise ValueError("NWD needs df_xy >= 1 and n_docs >= 2")
    return float(score_array(metric, df_x, np.array([df_y]), np.array([df_xy]), n_docs)[0])


@dataclass(frozen=True)
class Recommendation:
    term: str
    score: float
    df_term: int
    df_joint: int


class RecommendationList(list):
    """A ranked list of :class:`Recommendation` plus a ``term_found`` flag.

    ``term_found`` is False when no query term occurs in the corpus, which
    distinguishes "unknown term" from "known term without co-occurrences".
    """

    def __init__(self, items: Iterable[Recommendation] = (), term_found: bool = True):
        super().__init__(items)
        self.term_found = term_found


class CooccurrenceIndex:
    """Immutable count tables. Build with :class:`IndexBuilder` or :func:`build_index`.

    Terms on each side are sorted, so target positions follow lexicographic
    order. Pairs are stored row-compressed by source term.
    """

    def __init__(self, n_docs, source_terms, source_df, target_terms, target_df,
                 pair_indptr, pair_target, pair_count):
        self.n_docs = int(n_docs)
        self.source_terms = tuple(source_terms)
        self.target_terms = tuple(target_terms)
        self.source_df = np.asarray(source_df, dtype=np.int64)
        self.target_df = np.asarray(target_df, dtype=np.int64)
        self.pair_indptr = np.asarray(pair_indptr, dtype=np.int64)
        self.pair_target = np.asarray(pair_target, dtype=np.int64)
        self.pair_count = np.asarray(pair_count, dtype=np.int64)
        for arr in (self.source_df, self.target_df, self.pair_indptr, self.pair_target, self.pair_count):
            arr.flags.writeable = False
        if len(self.pair_indptr) != len(self.source_terms) + 1:
            raise ValueError("pair_indptr length must be n_source + 1")

    @classmethod
    def empty(cls) -> CooccurrenceIndex:
        z = np.zeros(0, np.int64)
        return cls(0, (), z, (), z, np.zeros(1, np.int64), z, z)

    @cached_property
    def _source_pos(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.source_terms)}

    @cached_property
    def _target_pos(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.target_terms)}

    @property
    def n_pairs(self) -> int:
        return len(self.pair_count)

    def source_df_of(self, term: str) -> int:
        i = self._source_pos.get(term)
        return 0 if i is None else int(self.source_df[i])

    def target_df_of(self, term: str) -> int:
        i = self._target_pos.get(term)
        return 0 if i is None else int(self.target_df[i])

    def pair_df(self, source: str, target: str) -> int:
        i = self._source_pos.get(source)
        j = self._target_pos.get(target)
        if i is None or j is None:
            return 0
        lo, hi = self.pair_indptr[i], self.pair_indptr[i + 1]
        row = self.pair_target[lo:hi]
        k = np.searchsorted(row, j)
        if k < len(row) and row[k] == j:
            return int(self.pair_count[lo + k])
        return 0

    def row(self, source: str):
        """(target positions, joint counts) for one source term, or None."""
        i = self._source_pos.get(source)
        if i is None:
            return None
        lo, hi = self.pair_indptr[i], self.pair_indptr[i + 1]
        return self.pair_target[lo:hi], self.pair_count[lo:hi]

    def tables(self) -> tuple[int, dict, dict, dict]:
        """Plain-dict view: (n_docs, source_df, target_df, pair_df)."""
        pairs = {}
        for i, s in enumerate(self.source_terms):
            lo, hi = self.pair_indptr[i], self.pair_indptr[i + 1]
            for j, c in zip(self.pair_target[lo:hi], self.pair_count[lo:hi]):
                pairs[(s, self.target_terms[j])] = int(c)
        return (
            self.n_docs,
            dict(zip(self.source_terms, map(int, self.source_df))),
            dict(zip(self.target_terms, map(int, self.target_df))),
            pairs,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.n_docs).encode())
        for terms in (self.source_terms, self.target_terms):
            h.update(b"\x00".join(t.encode("utf-8") for t in terms))
            h.update(b"\x01")
        for arr in (self.source_df, self.target_df, self.pair_indptr, self.pair_target, self.pair_count):
            h.update(arr.astype("<i8").tobytes())
        return h.hexdigest()

    def __eq__(self, other):
        if not isinstance(other, CooccurrenceIndex):
            return NotImplemented
        return (
            self.n_docs == other.n_docs
            and self.source_terms == other.source_terms
            and self.target_terms == other.target_terms
            and all(np.array_equal(a, b) for a, b in zip(self._arrays(), other._arrays()))
        )

    __hash__ = None

    def _arrays(self):
        return (self.source_df, self.target_df, self.pair_indptr, self.pair_target, self.pair_count)

    def __repr__(self):
        return (f"CooccurrenceIndex(n_docs={self.n_docs}, sources={len(self.source_terms)}, "
                f"targets={len(self.target_terms)}, pairs={self.n_pairs})")


class IndexBuilder:
    """Single-writer accumulator; call :meth:`add_document` then :meth:`build`.

    Per-document term ids are buffered in flat arrays. Every ``chunk_docs``
    documents the buffered pairs are reduced to (key, count) runs, which are
    kept in memory or, with ``spill_dir``, written to ``.npy`` files and
    memory-mapped back for the final merge.
    """

    def __init__(self, backend: Backend | str | None = None, chunk_docs: int = 50_000,
                 spill_dir: str | Path | None = None):
        self.backend = backend if isinstance(backend, Backend) else get_backend(backend)
        self.chunk_docs = chunk_docs
        self.spill_dir = Path(spill_dir) if spill_dir is not None else None
        self.n_docs = 0
        self._src_ids: dict[str, int] = {}
        self._tgt_ids: dict[str, int] = {}
        self._src_df: list[int] = []
        self._tgt_df: list[int] = []
        self._reset_buffer()
        self._chunks: list[tuple] = []
        self._built = False

    def _reset_buffer(self):
        self._buf_src: list[int] = []
        self._buf_tgt: list[int] = []
        self._buf_src_ptr = [0]
        self._buf_tgt_ptr = [0]

    @staticmethod
    def _intern(terms, ids: dict[str, int], df: list[int]) -> list[int]:
        out = []
        for t in terms:
            i = ids.get(t)
            if i is None:
                i = ids[t] = len(df)
                df.append(0)
            df[i] += 1
            out.append(i)
        return out

    def add_document(self, source_terms: Iterable[str], target_terms: Iterable[str]) -> None:
        """Count one document. Inputs are treated as sets."""
        if self._built:
            raise RuntimeError("builder already finalized")
        src = self._intern(set(source_terms), self._src_ids, self._src_df)
        tgt = self._intern(set(target_terms), self._tgt_ids, self._tgt_df)
        self.n_docs += 1
        if src and tgt:
            self._buf_src.extend(src)
            self._buf_tgt.extend(tgt)
            self._buf_src_ptr.append(len(self._buf_src))
            self._buf_tgt_ptr.append(len(self._buf_tgt))
            if len(self._buf_src_ptr) > self.chunk_docs:
                self._flush()

    def _flush(self):
        if len(self._buf_src_ptr) <= 1:
            return
        # key width fixed per chunk; chunks are re-keyed to the final width at merge
        width = max(len(self._tgt_df), 1)
        keys = self.backend.pair_keys(
            np.asarray(self._buf_src_ptr), np.asarray(self._buf_src),
            np.asarray(self._buf_tgt_ptr), np.asarray(self._buf_tgt), width,
        )
        uniq, counts = self.backend.count_keys(keys)
        src, tgt = np.divmod(uniq, width)
        if self.spill_dir is not None:
            self.spill_dir.mkdir(parents=True, exist_ok=True)
            n = len(self._chunks)
            paths = []
            for name, arr in (("src", src), ("tgt", tgt), ("cnt", counts)):
                p = self.spill_dir / f"chunk{n:05d}_{name}.npy"
                np.save(p, arr)
                paths.append(p)
            self._chunks.append(tuple(paths))
        else:
            self._chunks.append((src, tgt, counts))
        self._reset_buffer()

    def _load_chunk(self, chunk):
        if isinstance(chunk[0], Path):
            return tuple(np.load(p, mmap_mode="r") for p in chunk)
        return chunk

    def build(self) -> CooccurrenceIndex:
        self._flush()
        self._built = True
        src_terms = sorted(self._src_ids)
        tgt_terms = sorted(self._tgt_ids)
        # first-seen id -> lexicographic rank
        src_rank = np.empty(len(src_terms), np.int64)
        src_rank[[self._src_ids[t] for t in src_terms]] = np.arange(len(src_terms))
        tgt_rank = np.empty(len(tgt_terms), np.int64)
        tgt_rank[[self._tgt_ids[t] for t in tgt_terms]] = np.arange(len(tgt_terms))
        src_df = np.asarray(self._src_df, np.int64)[[self._src_ids[t] for t in src_terms]] if src_terms else np.zeros(0, np.int64)
        tgt_df = np.asarray(self._tgt_df, np.int64)[[self._tgt_ids[t] for t in tgt_terms]] if tgt_terms else np.zeros(0, np.int64)

        width = max(len(tgt_terms), 1)
        parts_k, parts_c = [], []
        for chunk in self._chunks:
            s, t, c = self._load_chunk(chunk)
            parts_k.append(src_rank[np.asarray(s)] * width + tgt_rank[np.asarray(t)])
            parts_c.append(np.asarray(c))
        if parts_k:
            keys, counts = self.backend.merge_counts(np.concatenate(parts_k), np.concatenate(parts_c))
        else:
            keys = counts = np.zeros(0, np.int64)
        pair_src, pair_tgt = np.divmod(keys, width)
        indptr = np.zeros(len(src_terms) + 1, np.int64)
        np.cumsum(np.bincount(pair_src, minlength=len(src_terms)), out=indptr[1:])
        return CooccurrenceIndex(self.n_docs, src_terms, src_df, tgt_terms, tgt_df, indptr, pair_tgt, counts)


def add_document(builder: IndexBuilder, source_terms: Iterable[str], target_terms: Iterable[str]) -> IndexBuilder:
    builder.add_document(source_terms, target_terms)
    return builder


def document_terms(extraction: FieldExtraction, config: PipelineConfig) -> tuple[set[str], set[str]]:
    """Deduplicated (free terms, controlled terms) for one extraction."""
    sources = {tok for text in extraction.source_texts for tok in tokenize_free_text(text, config)}
    targets = {t for t in (normalize_term(v, config) for v in extraction.target_values) if t}
    return sources, targets


def build_index(
    extractions: Iterable[FieldExtraction],
    config: PipelineConfig | None = None,
    *,
    backend: Backend | str | None = None,
    chunk_docs: int = 50_000,
    spill: bool = False,
) -> CooccurrenceIndex:
    config = config or PipelineConfig()
    if spill:
        with tempfile.TemporaryDirectory(prefix="termsuggest-spill-") as tmp:
            return _build(extractions, config, IndexBuilder(backend, chunk_docs, tmp))
    return _build(extractions, config, IndexBuilder(backend, chunk_docs))


def _build(extractions, config, builder: IndexBuilder) -> CooccurrenceIndex:
    for ex in extractions:
        builder.add_document(*document_terms(ex, config))
    index = builder.build()
    if builder.spill_dir is not None:
        # detach from the memory-mapped chunk files before they are deleted
        index = CooccurrenceIndex(index.n_docs, index.source_terms, np.array(index.source_df),
                                  index.target_terms, np.array(index.target_df), np.array(index.pair_indptr),
                                  np.array(index.pair_target), np.array(index.pair_count))
    return index


def _rank_order(metric: Metric, scores, df_joint, positions) -> np.ndarray:
    primary = scores if metric.is_distance else -scores
    # lexsort: last key is primary
    return np.lexsort((positions, -df_joint, primary))


def recommend(index: CooccurrenceIndex, query: str, k: int = 10,
              metric: Metric | str = Metric.JACCARD, min_df: int = 1) -> RecommendationList:
    """Top-``k`` target terms for an already-normalized query term.

    Ordering is best-first by score, then by larger joint count, then by term.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    metric = Metric.parse(metric)
    row = index.row(query)
    if row is None:
        return RecommendationList(term_found=False)
    targets, joint = row
    df_y = index.target_df[targets]
    if min_df > 1:
        keep = df_y >= min_df
        targets, joint, df_y = targets[keep], joint[keep], df_y[keep]
    scores = score_array(metric, index.source_df_of(query), df_y, joint, index.n_docs)
    order = _rank_order(metric, scores, joint, targets)[:k]
    return RecommendationList(
        Recommendation(index.target_terms[targets[i]], float(scores[i]), int(df_y[i]), int(joint[i]))
        for i in order
    )


def recommend_multi(index: CooccurrenceIndex, query_tokens: Sequence[str], k: int = 10,
                    metric: Metric | str = Metric.JACCARD, min_df: int = 1) -> RecommendationList:
    """Merge per-token rankings by summing each target's per-token scores.

    ``df_joint`` of a merged entry is the sum over tokens. For NWD, which is
    a distance, targets related to more query tokens rank first and the
    summed distance orders within that group.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    metric = Metric.parse(metric)
    n_t = len(index.target_terms)
    total = np.zeros(n_t)
    joint_sum = np.zeros(n_t, np.int64)
    matched = np.zeros(n_t, np.int64)
    found = False
    for tok in dict.fromkeys(query_tokens):
        row = index.row(tok)
        if row is None:
            continue
        found = True
        targets, joint = row
        df_y = index.target_df[targets]
        if min_df > 1:
            keep = df_y >= min_df
            targets, joint, df_y = targets[keep], joint[keep], df_y[keep]
        total[targets] += score_array(metric, index.source_df_of(tok), df_y, joint, index.n_docs)
        joint_sum[targets] += joint
        matched[targets] += 1
    if not found:
        return RecommendationList(term_found=False)
    cand = np.flatnonzero(matched)
    scores, joints = total[cand], joint_sum[cand]
    if metric.is_distance:
        order = np.lexsort((cand, -joints, scores, -matched[cand]))[:k]
    else:
        order = _rank_order(metric, scores, joints, cand)[:k]
    return RecommendationList(
        Recommendation(index.target_terms[cand[i]], float(scores[i]), int(index.target_df[cand[i]]), int(joints[i]))
        for i in order
    )

