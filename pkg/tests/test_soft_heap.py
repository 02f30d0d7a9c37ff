import heapq
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ggssm.errors import EmptyStructure, InvalidConfig, InvalidInput
from ggssm.harness.selftest import soft_heap_sequence
from ggssm.mst import make_soft_heap, soft_heap_extract_min, soft_heap_insert


def drain(heap):
    out = []
    while len(heap):
        out.append(soft_heap_extract_min(heap))
    return out


def test_three_items(backend):
    h = make_soft_heap(0.05)
    for k in (3, 1, 2):
        soft_heap_insert(h, k, k)
    assert Counter(item for item, _, _ in drain(h)) == Counter([1, 2, 3])


def test_hundred_items_bound(backend):
    h = make_soft_heap(0.1)
    keys = np.random.default_rng(100).normal(size=100)
    for i, k in enumerate(keys):
        soft_heap_insert(h, k, i)
    out = drain(h)
    assert h.corrupted_count <= 10
    assert sorted(i for i, _, _ in out) == list(range(100))


def test_tiny_epsilon_is_exact(backend):
    keys = np.random.default_rng(64).normal(size=64)
    h = make_soft_heap(1 / 128)
    ref = []
    for i, k in enumerate(keys):
        soft_heap_insert(h, k, i)
        heapq.heappush(ref, (k, i))
    got = [i for i, _, bad in drain(h)]
    assert got == [heapq.heappop(ref)[1] for _ in range(64)]


def test_extract_returns_original_key(backend):
    h = make_soft_heap(0.25)
    keys = np.random.default_rng(3).normal(size=500)
    for i, k in enumerate(keys):
        soft_heap_insert(h, k, i)
    for item, key, _ in drain(h):
        assert key == keys[item]


def test_corruption_happens_for_large_n(backend):
    # otherwise the bound checks below would be vacuous
    h = make_soft_heap(1 / 8)
    for i, k in enumerate(np.random.default_rng(0).normal(size=4000)):
        soft_heap_insert(h, k, i)
    peak = 0
    while len(h):
        soft_heap_extract_min(h)
        peak = max(peak, h.corrupted_count)
    assert peak > 0


def test_empty_extract(backend):
    with pytest.raises(EmptyStructure):
        soft_heap_extract_min(make_soft_heap())


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
def test_bad_epsilon(eps, backend):
    with pytest.raises(InvalidConfig):
        make_soft_heap(eps)


def test_non_finite_key(backend):
    with pytest.raises(InvalidInput):
        soft_heap_insert(make_soft_heap(), math.nan, 0)


@given(st.integers(1, 3000), st.sampled_from([1 / 4, 1 / 8, 1 / 16]), st.integers(0, 2 ** 31))
def test_bound_and_conservation(n, eps, seed):
    ok, why = soft_heap_sequence(np.random.default_rng(seed), n, eps)
    assert ok, why


def test_bound_and_conservation_both_backends(backend):
    rng = np.random.default_rng(11)
    for s in range(10):
        ok, why = soft_heap_sequence(rng, 3000, (1 / 8, 1 / 16)[s % 2])
        assert ok, why


def test_payloads_can_be_any_object(backend):
    h = make_soft_heap()
    soft_heap_insert(h, 2.0, ("b", 2))
    soft_heap_insert(h, 1.0, None)
    assert [i for i, _, _ in drain(h)] == [None, ("b", 2)]
