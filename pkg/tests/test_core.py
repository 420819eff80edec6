import networkx as nx
import pytest

from oracles import mis_by_subsets
from selfstab.core import (
    IN,
    OUT,
    AgentState,
    GainParams,
    all_out,
    config_from_in_set,
    conflict,
    deserialize,
    digest,
    gain,
    in_set,
    is_mis,
    maximal_independent_sets,
    pending,
    serialize,
    state_configs,
    system_property,
)
from selfstab.graph import complete, from_edges, generate_ba, path


def atlas(max_n):
    out = []
    for h in nx.graph_atlas_g()[1:]:
        if h.number_of_nodes() <= max_n and nx.is_connected(h):
            out.append(from_edges(h.number_of_nodes(), h.edges()))
    return out


def test_pending_examples():
    g = path(3)
    assert pending(g, all_out(3), 1)
    assert not pending(g, config_from_in_set(3, {0}), 1)
    k3 = complete(3)
    c = config_from_in_set(3, {0})
    assert not any(pending(k3, c, v) for v in range(3))


def test_conflict_examples():
    g = path(2)
    both = config_from_in_set(2, {0, 1})
    assert conflict(g, both, 0) and conflict(g, both, 1)
    g3 = path(3)
    assert not conflict(g3, config_from_in_set(3, {0, 2}), 0)
    assert not any(conflict(g3, all_out(3), v) for v in range(3))


def test_is_mis_examples():
    g = path(3)
    assert is_mis(g, config_from_in_set(3, {0, 2}))
    assert is_mis(g, config_from_in_set(3, {1}))
    assert not is_mis(g, config_from_in_set(3, {0}))


def test_gain_examples():
    g = path(3)
    params = GainParams(10, 1)
    c = config_from_in_set(3, {0})
    assert gain(g, c, 1, params) == 10
    assert gain(g, c, 0, params) == 9
    assert gain(g, all_out(3), 1, params) == 0
    assert gain(g, all_out(3), 1, GainParams(3, 2)) == 0


def test_system_property_examples():
    g = path(3)
    assert system_property(g, config_from_in_set(3, {0, 2}))
    assert not system_property(g, all_out(3))
    assert not system_property(g, config_from_in_set(3, {0, 1}))


@pytest.mark.parametrize("g", [path(12), generate_ba(12, 2, 1), generate_ba(12, 3, 2)],
                         ids=["path12", "ba12m2", "ba12m3"])
def test_system_property_is_mis_exhaustively(g):
    found = set()
    for c in state_configs(g.n):
        assert system_property(g, c) == is_mis(g, c)
        if is_mis(g, c):
            found.add(frozenset(in_set(c)))
    assert found == set(mis_by_subsets(g.adjacency))


def test_mis_listing_matches_subset_oracle():
    for g in atlas(6):
        assert set(maximal_independent_sets(g)) == set(mis_by_subsets(g.adjacency))


def test_gain_has_exactly_one_case():
    params = GainParams(10, 1)
    for g in atlas(4):
        for c in state_configs(g.n):
            for v in range(g.n):
                cases = [pending(g, c, v), c[v].state == IN,
                         c[v].state == OUT and not pending(g, c, v)]
                assert sum(cases) == 1
                expected = 0 if cases[0] else 9 if cases[1] else 10
                assert gain(g, c, v, params) == expected


def test_some_mis_is_at_least_as_good_for_everyone():
    graphs = atlas(6) + [generate_ba(8, 2, 3), path(8)]
    for g in graphs:
        mis_configs = [config_from_in_set(g.n, s) for s in mis_by_subsets(g.adjacency)]
        best = [max(gain(g, m, v) for m in mis_configs) for v in range(g.n)]
        for c in state_configs(g.n):
            if not is_mis(g, c):
                assert all(gain(g, c, v) <= best[v] for v in range(g.n))


def test_serialization_round_trip_and_declared_variables():
    c = (AgentState(IN), AgentState(OUT, parent=0), AgentState(OUT, parents=frozenset({0, 2})))
    full = ("state", "parent", "parents")
    assert deserialize(serialize(c, full)) == c
    # undeclared variables do not change the digest
    assert digest(c) == digest(tuple(AgentState(a.state) for a in c))
    assert digest(c, full) != digest(tuple(AgentState(a.state) for a in c), full)
