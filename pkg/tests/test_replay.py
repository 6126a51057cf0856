import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare, norm

from gcl.errors import EmptyBufferError
from gcl.graph import induced_subgraph
from gcl.replay import BufferSlot, Reservoir
from gcl.selfcheck import block_limit, retention_ok, retention_statistics

from conftest import random_graph


def test_two_inserts_both_kept(rng):
    res = Reservoir(2, rng=rng)
    res.insert("a")
    res.insert("b")
    assert res.slots == ["a", "b"] and res.seen == 2


def test_zero_capacity_stores_nothing(rng):
    res = Reservoir(0, rng=rng)
    for i in range(50):
        res.insert(i)
    assert len(res) == 0 and res.seen == 50
    res.insert_many(range(10))
    assert len(res) == 0 and res.seen == 60


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 20), st.integers(0, 200), st.integers(0, 2**31 - 1))
def test_size_invariant_every_step(capacity, inserts, seed):
    res = Reservoir(capacity, rng=np.random.default_rng(seed))
    for i in range(inserts):
        res.insert(i)
        assert len(res) == min(res.seen, capacity)
        assert res.seen >= len(res)


def test_algorithm_r_replacement_rule():
    # with seen = capacity + 1, slot j is replaced iff the draw j < capacity
    class Fixed:
        def __init__(self, value):
            self.value = value

        def integers(self, lo, hi):
            assert (lo, hi) == (0, 3)
            return self.value

    res = Reservoir(2, rng=Fixed(1), slots=["a", "b"], seen=2)
    res.insert("c")
    assert res.slots == ["a", "c"]
    res = Reservoir(2, rng=Fixed(2), slots=["a", "b"], seen=2)
    res.insert("c")
    assert res.slots == ["a", "b"] and res.seen == 3


def test_insert_many_matches_sequential():
    a = Reservoir(30, rng=np.random.default_rng(9))
    b = Reservoir(30, rng=np.random.default_rng(9))
    for i in range(2000):
        a.insert(i)
    b.insert_many(range(10))
    b.insert_many(range(10, 2000))
    assert a.slots == b.slots and a.seen == b.seen


def test_insert_from_builds_only_kept_slots(rng):
    res = Reservoir(5, rng=rng)
    built = []

    def make(i):
        built.append(i)
        return i

    for i in range(500):
        res.insert_from(lambda i=i: make(i))
    assert len(built) < 100
    assert set(res.slots) <= set(built)


def test_retention_frequency(rng):
    stats = retention_statistics(capacity=50, inserts=2_000, reps=400, rng=rng)
    assert retention_ok(stats), stats


def test_late_items_not_favoured(rng):
    # mean retention of the first and last tenth agree with cap/N
    stats = retention_statistics(capacity=20, inserts=1_000, reps=2_000, rng=rng, blocks=10)
    assert max(abs(z) for z in stats["block_z"]) <= stats["block_limit"]


def test_sample_two_single_slot(rng):
    res = Reservoir(3, rng=rng)
    res.insert("only")
    assert res.sample_two() == ("only", "only")


def test_sample_two_empty(rng):
    with pytest.raises(EmptyBufferError):
        Reservoir(3, rng=rng).sample_two()


def test_sample_two_uniform(rng):
    res = Reservoir(5, rng=rng)
    for i in range(5):
        res.insert(i)
    draws = np.array([res.sample_two(rng) for _ in range(5_000)]).ravel()
    counts = np.bincount(draws, minlength=5)
    sigma = np.sqrt(10_000 * 0.2 * 0.8)
    assert np.all(np.abs(counts - 2_000) <= 3 * sigma)
    assert chisquare(counts).pvalue > 1e-3


def test_sample_two_draws_independent(rng):
    res = Reservoir(4, rng=rng)
    for i in range(4):
        res.insert(i)
    pairs = np.array([res.sample_two(rng) for _ in range(8_000)])
    joint = np.zeros((4, 4))
    np.add.at(joint, (pairs[:, 0], pairs[:, 1]), 1)
    assert chisquare(joint.ravel()).pvalue > 1e-3
    assert np.mean(pairs[:, 0] == pairs[:, 1]) == pytest.approx(0.25, abs=0.03)


def test_copy_is_independent(rng):
    res = Reservoir(3, rng=rng)
    for i in range(3):
        res.insert(i)
    twin = res.copy()
    for i in range(3, 50):
        twin.insert(i)
    assert res.slots == [0, 1, 2] and res.seen == 3
    again = res.copy()
    for i in range(3, 50):
        again.insert(i)
    assert again.slots == twin.slots


def test_slot_logits_frozen(rng):
    g = random_graph(rng, 6, 0.5)
    sub = induced_subgraph(g, rng.standard_normal((6, 2)), np.zeros(6, dtype=int), [0, 1, 2])
    logits = rng.standard_normal((3, 2))
    slot = BufferSlot(sub, logits, 0, [0, 1], (0, 1))
    logits[:] = 0.0
    assert not np.all(slot.logits == 0)
    with pytest.raises(ValueError):
        slot.logits[0, 0] = 1.0


def test_slot_rows_must_match_subgraph(rng):
    g = random_graph(rng, 6, 0.5)
    sub = induced_subgraph(g, np.zeros((6, 2)), np.zeros(6, dtype=int), [0, 1, 2])
    with pytest.raises(ValueError):
        BufferSlot(sub, np.zeros((2, 2)), 0, [0], (0, 1))


def test_block_limit():
    # one block is a plain 3 sigma test; more blocks widen the per-block bound
    assert block_limit(1) == pytest.approx(3.0)
    # family-wise two-sided error over 10 blocks equals one 3 sigma test
    assert 10 * 2 * norm.sf(block_limit(10)) == pytest.approx(2 * norm.sf(3.0), rel=1e-9)
