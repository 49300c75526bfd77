from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from casa.memory import FifoMemory, MemoryInvariantError, MemoryItem, TrainingMemory


def item(i, domain=0, emb=None, rng=None):
    if emb is None:
        emb = (rng or np.random.default_rng(i)).standard_normal(4)
    return MemoryItem(i, np.full((2, 2), float(i)), float(i), domain, np.asarray(emb, float))


def pretrain_items(n):
    return [item(i) for i in range(n)]


def test_init_from_pretrain():
    mem = TrainingMemory.init_from_pretrain(pretrain_items(201), 128, np.random.default_rng(0))
    assert len(mem) == 128 and mem.composition()["total"] == {0: 128}
    small = TrainingMemory.init_from_pretrain(pretrain_items(50), 64, np.random.default_rng(0))
    assert len(small) == 50
    again = TrainingMemory.init_from_pretrain(pretrain_items(201), 128, np.random.default_rng(0))
    assert mem.sample_ids() == again.sample_ids()


def test_requota_counts():
    mem = TrainingMemory.init_from_pretrain(pretrain_items(128), 128, np.random.default_rng(1))
    flagged = mem.requota(2)
    assert len(flagged) == 64 and mem.unflagged_count(0) == 64
    # fill domain 1 to its quota through the flagged pool
    for i in range(64):
        mem.insert(item(1000 + i, domain=1))
    assert mem.composition()["unflagged"] == {0: 64, 1: 64}
    mem.requota(3)
    assert mem.quota == 42
    assert mem.unflagged_count(0) == 42 and mem.unflagged_count(1) == 42
    with pytest.raises(ValueError):
        mem.requota(2)


def test_requota_below_quota_flags_nothing():
    mem = TrainingMemory(10, np.random.default_rng(0))
    for i in range(3):
        mem.insert(item(i))
    assert mem.requota(2) == []


def test_insert_append_and_flagged_replacement():
    mem = TrainingMemory(4, np.random.default_rng(0), n_domains=2)
    assert mem.insert(item(0, 0))["action"] == "append"
    assert len(mem) == 1
    mem = TrainingMemory.init_from_pretrain(pretrain_items(4), 4, np.random.default_rng(0))
    flagged = set(mem.requota(2))
    assert len(flagged) == 2
    out = mem.insert(item(9, 1))
    assert out["action"] == "replace_flagged" and out["victim"] in flagged
    assert len(mem) == 4 and mem.items[out["slot"]].sample_id == 9


def test_nearest_replacement_matches_exhaustive_scan():
    rng = np.random.default_rng(3)
    mem = TrainingMemory(12, rng, n_domains=2)
    for i in range(6):
        mem.insert(item(i, 0, rng=rng))
        mem.insert(item(100 + i, 1, rng=rng))
    new = item(999, 1, rng=rng)
    d2 = {it.sample_id: float(((it.embedding - new.embedding) ** 2).sum())
          for it in mem.items if it.domain == 1 and not it.flagged}
    expected = min(d2, key=d2.get)
    out = mem.insert(new)
    assert out["action"] == "replace_nearest" and out["victim"] == expected


def test_nearest_replacement_closest_item_named():
    mem = TrainingMemory(2, np.random.default_rng(0), n_domains=1)
    mem.insert(item(1, 0, emb=[0.0, 0.0]))
    mem.insert(item(2, 0, emb=[5.0, 5.0]))
    out = mem.insert(item(3, 0, emb=[4.0, 4.5]))
    assert out["victim"] == 2


def test_insert_requires_domain():
    mem = TrainingMemory(2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mem.insert(item(0, None))


def test_full_without_flagged_is_invariant_error():
    # unreachable through the public API; build the state by hand
    mem = TrainingMemory(2, np.random.default_rng(0), n_domains=2)
    mem.items = [item(0, 0), item(1, 1)]
    with pytest.raises(MemoryInvariantError):
        mem.insert(item(2, 2))


def test_sample_batch():
    mem = TrainingMemory(1, np.random.default_rng(0))
    mem.insert(item(7))
    batch = mem.sample_batch(4, np.random.default_rng(0))
    assert len(batch) == 4 and all(b[1] == 7.0 for b in batch)
    with pytest.raises(ValueError):
        TrainingMemory(2, np.random.default_rng(0)).sample_batch(1, np.random.default_rng(0))
    big = TrainingMemory.init_from_pretrain(pretrain_items(128), 128, np.random.default_rng(0))
    a = big.sample_batch(8, np.random.default_rng(5))
    b = big.sample_batch(8, np.random.default_rng(5))
    assert len(a) == 8 and [x[1] for x in a] == [x[1] for x in b]


def test_composition_empty():
    assert TrainingMemory(3, np.random.default_rng(0)).composition()["total"] == {}


def test_flagged_items_stay_sampleable():
    mem = TrainingMemory.init_from_pretrain(pretrain_items(8), 8, np.random.default_rng(0))
    mem.requota(4)
    labels = {x[1] for x in mem.sample_batch(400, np.random.default_rng(0))}
    assert labels == {float(i) for i in range(8)}


def test_fifo():
    mem = FifoMemory(3)
    for i in range(3):
        assert mem.insert(item(i))["victim"] is None
    assert mem.insert(item(3))["victim"] == 0
    assert mem.sample_ids() == {1, 2, 3}


ops = st.lists(
    st.one_of(st.tuples(st.just("add_domain")), st.tuples(st.just("insert"), st.integers(0, 9))),
    max_size=80,
)


@settings(max_examples=60, deadline=None)
@given(ops, st.integers(1, 40), st.integers(0, 1000))
def test_quota_invariant_over_operation_sequences(seq, capacity, seed):
    rng = np.random.default_rng(seed)
    mem = TrainingMemory(capacity, rng)
    n_domains, next_id = 1, 0
    for op in seq:
        if op[0] == "add_domain":
            if capacity // (n_domains + 1) < 1:
                continue
            n_domains += 1
            mem.requota(n_domains)
        else:
            d = op[1] % n_domains
            new = item(next_id, d, rng=rng)
            next_id += 1
            before = {it.sample_id: it for it in mem.items}
            out = mem.insert(new)
            if out["action"] == "replace_nearest":
                cand = [it for it in before.values() if it.domain == d and not it.flagged]
                d2 = [((it.embedding - new.embedding) ** 2).sum() for it in cand]
                assert before[out["victim"]].domain == d
                assert min(d2) == ((before[out["victim"]].embedding - new.embedding) ** 2).sum()
        assert len(mem) <= capacity
        counts = Counter(it.domain for it in mem.items if not it.flagged)
        assert all(c <= capacity // n_domains for c in counts.values())
