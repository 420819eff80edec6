import statistics
from collections import Counter

import pytest
from hypothesis import given, strategies as st
from scipy.stats import chisquare

from selfstab.scheduler import Hints, SchedulerError, SchedulerPolicy, draw, select


def test_central_picks_one_enabled_agent():
    for r in range(20):
        assert select(SchedulerPolicy("central"), [2, 5], r, 1) in ([2], [5])


def test_synchronous_picks_everyone():
    assert select(SchedulerPolicy("synchronous"), [4, 1, 3], 0, 0) == [1, 3, 4]


def test_randomized_mean_selection():
    policy = SchedulerPolicy("distributed", 0.8)
    sizes = [len(select(policy, range(10), r, 99)) for r in range(100_000)]
    assert abs(statistics.fmean(sizes) - 8.0) <= 0.1


def test_central_is_uniform():
    counts = Counter(select(SchedulerPolicy("central"), range(6), r, 5)[0] for r in range(6000))
    assert chisquare([counts[v] for v in range(6)]).pvalue > 0.001


def test_empty_draws_are_redrawn_and_counted():
    policy = SchedulerPolicy("distributed", 0.05)
    redraws = [draw(policy, [0], r, 2)[1] for r in range(200)]
    assert sum(redraws) > 0
    assert all(draw(policy, [0], r, 2)[0] == [0] for r in range(200))


def test_selection_ignores_listing_order():
    policy = SchedulerPolicy("distributed", 0.5)
    assert select(policy, [3, 1, 2, 7], 4, 11) == select(policy, [7, 2, 1, 3], 4, 11)


def test_adversaries():
    ids = [10, 30, 20]
    hints = Hints(ids=ids, entering={0, 2}, adjacency=[[2], [], [0]])
    assert select(SchedulerPolicy("unfair", adversary="max-id-first"), [0, 1, 2], 0, 0, hints) == [1]
    assert select(SchedulerPolicy("unfair", adversary="worst-chain"), [0, 1, 2], 0, 0, hints) == [2]
    assert select(SchedulerPolicy("unfair", adversary="min-progress"), [0, 1, 2], 0, 0, hints) == [0, 2]


def test_policy_validation():
    with pytest.raises(SchedulerError):
        SchedulerPolicy("lazy")
    with pytest.raises(SchedulerError):
        SchedulerPolicy("distributed", 0.0)
    with pytest.raises(SchedulerError):
        SchedulerPolicy("unfair", adversary="random")


@given(
    st.sampled_from(["central", "synchronous", "distributed", "unfair"]),
    st.floats(0.01, 1.0),
    st.sets(st.integers(0, 40), min_size=1, max_size=15),
    st.integers(0, 10_000),
    st.integers(0, 2**32),
)
def test_selection_is_a_nonempty_subset(kind, p_s, enabled, round_, seed):
    chosen = select(SchedulerPolicy(kind, p_s), sorted(enabled), round_, seed)
    assert chosen and set(chosen) <= enabled
