import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from otl.errors import EntryTooLarge
from otl.memory_bank import MemoryBank


def _bank_with(ids, capacity=4):
    bank = MemoryBank(capacity, 1)
    bank.enqueue(np.ones((len(ids), 1)), np.zeros(len(ids)), ids)
    return bank


def test_fifo_example():
    bank = _bank_with([0, 1, 2, 3])
    bank.enqueue(np.ones((2, 1)), [0, 0], [4, 5])
    assert_array_equal(bank.ids, [2, 3, 4, 5])
    assert_array_equal(_bank_with([7, 8]).ids, [7, 8])


def test_repeated_batches_keep_last_entries():
    bank = MemoryBank(6, 1)
    for start in range(0, 20, 2):
        bank.enqueue(np.ones((2, 1)), [0, 0], [start, start + 1])
        stream = np.arange(start + 2)
        assert_array_equal(bank.ids, stream[-6:])


def test_suffix_invariant_random_sequences():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        cap = int(rng.integers(1, 12))
        bank = MemoryBank(cap, 2, n_groups=2)
        stream_f, stream_l, stream_i = [], [], []
        for _ in range(int(rng.integers(1, 15))):
            b = int(rng.integers(1, cap + 1))
            f = rng.standard_normal((b, 2))
            lab = rng.integers(0, 5, (b, 2))
            ids = rng.integers(0, 100, b)
            bank.enqueue(f, lab, ids)
            stream_f.append(f)
            stream_l.append(lab)
            stream_i.append(ids)
        assert len(bank) <= cap
        assert_array_equal(bank.features, np.concatenate(stream_f)[-cap:])
        assert_array_equal(bank.labels, np.concatenate(stream_l)[-cap:])
        assert_array_equal(bank.ids, np.concatenate(stream_i)[-cap:])


def test_batch_larger_than_capacity():
    with pytest.raises(EntryTooLarge):
        MemoryBank(2, 1).enqueue(np.ones((3, 1)), [0, 0, 0], [0, 1, 2])


def test_split_pairs_examples():
    a = np.array([0.6, 0.8])
    bank = MemoryBank(4, 2)
    bank.enqueue([a], [3], [9])
    split = bank.split_pairs(a, [3], 9)
    assert split.pos.size == 0 and split.neg.size == 0
    bank.enqueue([a], [3], [1])
    assert_allclose(bank.split_pairs(a, [3], 9).pos, [1.0])

    rng = np.random.default_rng(1)
    feats = rng.standard_normal((4, 2))
    feats /= np.linalg.norm(feats, axis=1, keepdims=True)
    bank = MemoryBank(4, 2)
    bank.enqueue(feats, [0, 1, 0, 1], [10, 11, 12, 13])
    split = bank.split_pairs(a, [0], 99)
    assert_allclose(split.pos, [feats[0] @ a, feats[2] @ a])
    assert_allclose(split.neg, [feats[1] @ a, feats[3] @ a])


def test_split_sizes_identity():
    rng = np.random.default_rng(2)
    for _ in range(200):
        bank = MemoryBank(10, 3, n_groups=2)
        n = int(rng.integers(1, 11))
        feats = rng.standard_normal((n, 3))
        ids = rng.integers(0, 4, n)
        bank.enqueue(feats, rng.integers(0, 3, (n, 2)), ids)
        anchor_id, group = int(rng.integers(0, 4)), int(rng.integers(0, 2))
        split = bank.split_pairs(rng.standard_normal(3), rng.integers(0, 3, 2), anchor_id, group)
        assert split.pos.size + split.neg.size == len(bank) - int((bank.ids == anchor_id).sum())


def test_relabel_and_group_range():
    bank = MemoryBank(3, 1, n_groups=2)
    bank.enqueue(np.ones((2, 1)), [[0, 0], [1, 1]], [2, 0])
    bank.relabel(np.array([[5, 6], [7, 8], [9, 10]]))
    assert_array_equal(bank.labels, [[9, 10], [5, 6]])
    with pytest.raises(IndexError):
        bank.split_pairs([1.0], [0, 0], 0, group=2)
