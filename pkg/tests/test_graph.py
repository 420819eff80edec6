import statistics

import pytest
from hypothesis import given, strategies as st

from oracles import ball, diameter_formula, to_nx
from selfstab.graph import (
    Graph,
    GraphError,
    ba_attachment_for_degree,
    complete,
    estimate_diameter,
    from_edges,
    generate_ba,
    generate_er,
    locality,
    path,
    read_edgelist,
    star,
    write_edgelist,
)


def test_ba_with_one_link_per_node_is_a_tree():
    for seed in range(5):
        g = generate_ba(3, 1, seed)
        assert g.n == 3 and len(g.edges()) == 2 and g.is_connected()


def test_ba_repeats_with_the_same_seed():
    assert generate_ba(50, 2, 7) == generate_ba(50, 2, 7)
    assert generate_ba(50, 2, 7).edges() != generate_ba(50, 2, 8).edges()


def test_ba_mean_degree_over_many_seeds():
    mean = statistics.fmean(generate_ba(100, 4, s).mean_degree() for s in range(100))
    assert abs(mean - 2 * 4 * (100 - 4) / 100) <= 0.5


def test_er_forced_edges():
    assert generate_er(2, 1.0, 3).edges() == [(0, 1)]
    k5 = generate_er(5, 1.0, 3)
    assert len(k5.edges()) == 10


def test_er_repeats_with_the_same_seed():
    assert generate_er(30, 0.2, 5) == generate_er(30, 0.2, 5)


def test_er_gives_up_on_impossible_connectivity():
    with pytest.raises(GraphError):
        generate_er(6, 0.0, 1)


def test_locality_examples():
    loc = locality(path(3), 1, 1)
    assert loc.members == {0, 1, 2} and loc.boundary == {0, 2}
    loc = locality(path(5), 2, 2)
    assert loc.members == set(range(5)) and loc.boundary == {0, 4}
    # star: index 0 is the center, leaves follow
    loc = locality(star(4), 1, 2)
    assert loc.boundary == {2, 3, 4}


def test_locality_edges_are_induced():
    g = star(4)
    loc = locality(g, 1, 1)
    assert loc.induced_edges == {(0, 1)}


def test_diameter_estimate_frozen_values():
    # frozen from a direct evaluation of log n / log log n
    assert estimate_diameter(15) == pytest.approx(2.71833, abs=1e-4)
    assert estimate_diameter(100) == pytest.approx(3.01550, abs=1e-4)
    assert estimate_diameter(3) == pytest.approx(11.6814, abs=1e-4)
    for n in (3, 15, 100, 1000):
        assert estimate_diameter(n) == pytest.approx(diameter_formula(n), rel=1e-12)


def test_attachment_from_degree():
    assert ba_attachment_for_degree(6) == 3
    assert ba_attachment_for_degree(2) == 1


def test_graph_rejects_bad_input():
    with pytest.raises(GraphError):
        Graph(2, ((1,), ()), (1, 2))
    with pytest.raises(GraphError):
        Graph(2, ((1,), (0,)), (1, 1))
    with pytest.raises(GraphError):
        from_edges(2, [(0, 0)])


def test_edgelist_round_trip():
    g = generate_ba(20, 2, 4)
    assert read_edgelist(write_edgelist(g)) == g


def test_complete_graph_degrees():
    g = complete(4)
    assert all(g.degree(v) == 3 for v in range(4))


graphs = st.builds(
    lambda kind, n, s: generate_ba(n, 2, s) if kind else generate_er(n, 0.3, s),
    st.booleans(), st.integers(4, 30), st.integers(0, 10_000),
)


@given(graphs)
def test_generated_graphs_are_well_formed(g):
    assert g.is_connected()
    assert sorted(g.ids) == list(range(1, g.n + 1))
    for v in range(g.n):
        for u in g.adjacency[v]:
            assert v in g.adjacency[u]


@given(graphs, st.data())
def test_localities_match_a_bfs_oracle(g, data):
    v = data.draw(st.integers(0, g.n - 1))
    assert locality(g, v, 1).members == {v, *g.adjacency[v]}
    for k in (1, 2, 3):
        loc = locality(g, v, k)
        members, ring = ball(g.adjacency, v, k)
        assert loc.members == members and loc.boundary == ring
        if k >= 2:
            assert not loc.boundary & locality(g, v, k - 1).members
        h = to_nx(g.adjacency).subgraph(members)
        assert loc.induced_edges == {tuple(sorted(e)) for e in h.edges()}
