import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from termsuggest import _kernels
from termsuggest._kernels import Backend, HAVE_NUMBA

BACKENDS = ["numpy"] + (["numba"] if HAVE_NUMBA else [])


def naive_pairs(docs, width):
    return sorted(s * width + t for src, tgt in docs for s in src for t in tgt)


def to_csr(docs):
    src_ptr, tgt_ptr, src, tgt = [0], [0], [], []
    for s, t in docs:
        src.extend(s)
        tgt.extend(t)
        src_ptr.append(len(src))
        tgt_ptr.append(len(tgt))
    return (np.array(src_ptr), np.array(src, dtype=np.int64), np.array(tgt_ptr), np.array(tgt, dtype=np.int64))


docs_st = st.lists(
    st.tuples(st.lists(st.integers(0, 30), unique=True, max_size=6),
              st.lists(st.integers(0, 9), unique=True, max_size=4)),
    max_size=25,
)


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=80, deadline=None)
@given(docs=docs_st)
def test_pair_keys_match_naive(name, docs):
    keys = Backend(name).pair_keys(*to_csr(docs), 10)
    assert sorted(keys.tolist()) == naive_pairs(docs, 10)


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=80, deadline=None)
@given(keys=st.lists(st.integers(0, 50), max_size=60))
def test_count_keys(name, keys):
    uniq, counts = Backend(name).count_keys(np.array(keys, dtype=np.int64))
    expected = {}
    for k in keys:
        expected[k] = expected.get(k, 0) + 1
    assert list(zip(uniq.tolist(), counts.tolist())) == sorted(expected.items())


@pytest.mark.parametrize("name", BACKENDS)
@settings(max_examples=80, deadline=None)
@given(pairs=st.lists(st.tuples(st.integers(0, 20), st.integers(1, 5)), max_size=40))
def test_merge_counts(name, pairs):
    keys = np.array([p[0] for p in pairs], dtype=np.int64)
    counts = np.array([p[1] for p in pairs], dtype=np.int64)
    uniq, summed = Backend(name).merge_counts(keys, counts)
    expected = {}
    for k, c in pairs:
        expected[k] = expected.get(k, 0) + c
    assert list(zip(uniq.tolist(), summed.tolist())) == sorted(expected.items())


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
def test_backends_agree_on_large_input():
    rng = np.random.default_rng(7)
    docs = [(rng.choice(500, 8, replace=False).tolist(), rng.choice(80, 4, replace=False).tolist())
            for _ in range(2000)]
    csr = to_csr(docs)
    a = Backend("numpy")
    b = Backend("numba")
    ka, kb = a.pair_keys(*csr, 80), b.pair_keys(*csr, 80)
    assert np.array_equal(ka, kb)
    for x, y in zip(a.count_keys(ka), b.count_keys(kb)):
        assert np.array_equal(x, y)


def test_unknown_backend():
    with pytest.raises(ValueError):
        Backend("cuda")


def test_env_flag_selects_numpy():
    code = "from termsuggest import _kernels; print(_kernels.DEFAULT_BACKEND.name)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True,
                         env={"TERMSUGGEST_DISABLE_NUMBA": "1", "PATH": ""})
    assert out.stdout.strip() == "numpy"


def test_default_backend():
    assert _kernels.DEFAULT_BACKEND.name == ("numba" if HAVE_NUMBA else "numpy")
