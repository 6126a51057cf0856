import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gcl.errors import ContractError, DegenerateInputError
from gcl.graph import (CsrGraph, ego_subgraph, from_edge_list, gcn_normalize, induced_subgraph,
                       neighbor_mean)

from conftest import dense_adjacency, random_graph


def brute_edge_set(edges):
    out = set()
    for u, v in edges:
        if u != v:
            out |= {(u, v), (v, u)}
    return out


def test_symmetrized_degrees():
    g = from_edge_list(2, [(0, 1)])
    assert g.degree().tolist() == [1, 1]


def test_duplicates_stored_once():
    g = from_edge_list(3, [(0, 1), (0, 1), (1, 0)])
    assert g.num_edges == 2
    assert g.edge_set() == {(0, 1), (1, 0)}


def test_out_of_range_id():
    with pytest.raises(IndexError):
        from_edge_list(3, [(0, 3)])
    with pytest.raises(IndexError):
        from_edge_list(3, [(-1, 2)])


def test_self_loops_dropped():
    g = from_edge_list(2, [(0, 0), (0, 1)])
    assert g.edge_set() == {(0, 1), (1, 0)}


def test_empty_edge_list():
    g = from_edge_list(4, [])
    assert g.num_edges == 0 and g.degree().tolist() == [0, 0, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 15).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)),
                                             max_size=40))))
def test_csr_traversal_reproduces_edge_set(case):
    n, edges = case
    g = from_edge_list(n, edges)
    traversed = {(u, int(v)) for u in range(n) for v in g.neighbors(u)}
    assert traversed == brute_edge_set(edges)
    ro = g.row_offsets
    assert np.all(np.diff(ro) >= 0) and ro[-1] == g.num_edges
    assert g.col_indices.size == 0 or g.col_indices.max() < n


def test_csr_rejects_unsorted_rows():
    with pytest.raises(ContractError):
        CsrGraph(2, [0, 2, 2], [1, 1])
    with pytest.raises(ContractError):
        CsrGraph(2, [0, 1, 1], [5])


def test_csr_arrays_are_immutable():
    g = from_edge_list(3, [(0, 1)])
    with pytest.raises(ValueError):
        g.col_indices[0] = 2


def test_normalize_isolated_node():
    g = gcn_normalize(from_edge_list(1, []))
    assert g.edge_values.tolist() == [1.0]


def test_normalize_two_node_path():
    g = gcn_normalize(from_edge_list(2, [(0, 1)]))
    np.testing.assert_allclose(g.as_operator().toarray(), np.full((2, 2), 0.5), atol=1e-15)


def test_normalize_matches_dense_construction(rng):
    for _ in range(10):
        g = random_graph(rng, 9, 0.3)
        a = dense_adjacency(g) + np.eye(g.n)
        d = a.sum(axis=1)
        oracle = a / np.sqrt(np.outer(d, d))
        norm = gcn_normalize(g).as_operator().toarray()
        np.testing.assert_allclose(norm, oracle, atol=1e-14)
        rows = norm.sum(axis=1)
        assert np.all(rows > 0)
        eig = np.linalg.eigvalsh(norm)
        assert eig.max() == pytest.approx(1.0, abs=1e-12) and eig.min() > -1.0


def test_normalized_row_sums_can_exceed_one():
    # the hub of a 3-node star: 1/3 + 2/sqrt(6) > 1, so row sums are not bounded by 1
    rows = gcn_normalize(from_edge_list(3, [(0, 1), (0, 2)])).as_operator().sum(axis=1)
    assert rows[0] == pytest.approx(1 / 3 + 2 / np.sqrt(6), abs=1e-15)
    assert rows[0] > 1


def test_normalize_twice_rejected():
    with pytest.raises(ContractError):
        gcn_normalize(gcn_normalize(from_edge_list(2, [(0, 1)])))


def test_neighbor_mean_single_neighbor():
    g = from_edge_list(3, [(0, 1)])
    x = np.array([[1.0, 2.0], [5.0, -1.0], [9.0, 9.0]])
    out = neighbor_mean(g, x)
    assert out[0].tolist() == [5.0, -1.0]
    assert out[2].tolist() == [0.0, 0.0]


def test_neighbor_mean_dense_oracle(rng):
    g = random_graph(rng, 6, 0.4)
    x = rng.standard_normal((6, 3))
    a = dense_adjacency(g)
    deg = a.sum(axis=1, keepdims=True)
    oracle = np.divide(a @ x, deg, out=np.zeros_like(x), where=deg > 0)
    np.testing.assert_allclose(neighbor_mean(g, x), oracle, atol=1e-14)


def test_attention_edges_have_one_self_loop_each(rng):
    g = random_graph(rng, 7, 0.3)
    src, dst = g.attention_edges
    loops = src[src == dst]
    assert sorted(loops.tolist()) == list(range(7))
    assert src.size == g.num_edges + 7


# ---------------------------------------------------------------- subgraphs


def _fixture(rng, n=20, p=0.15):
    g = random_graph(rng, n, p)
    return g, rng.standard_normal((n, 3)), rng.integers(0, 4, size=n)


def test_ego_hops_zero_is_seed_induced(rng):
    g, x, y = _fixture(rng)
    seeds = [0, 3, 7]
    sub = ego_subgraph(g, x, y, seeds, hops=0, budget=10, rng=rng)
    assert sub.nodes.tolist() == seeds
    expected = {(a, b) for a, b in g.edge_set() if a in seeds and b in seeds}
    got = {(int(sub.nodes[a]), int(sub.nodes[b])) for a, b in sub.graph.edge_set()}
    assert got == expected


def test_ego_saturates_to_component(rng):
    g = from_edge_list(6, [(0, 1), (1, 2), (2, 3), (4, 5)])
    x, y = np.zeros((6, 1)), np.zeros(6, dtype=int)
    sub = ego_subgraph(g, x, y, [0], hops=10, budget=100, rng=rng)
    assert sub.nodes.tolist() == [0, 1, 2, 3]
    assert sub.graph.num_edges == 6


def test_ego_edges_exist_in_original(rng):
    for _ in range(25):
        g, x, y = _fixture(rng)
        seeds = rng.choice(20, size=int(rng.integers(1, 4)), replace=False)
        budget = int(rng.integers(len(seeds), 12))
        sub = ego_subgraph(g, x, y, seeds, hops=int(rng.integers(0, 4)), budget=budget, rng=rng)
        original = g.edge_set()
        for a, b in sub.graph.edge_set():
            assert (int(sub.nodes[a]), int(sub.nodes[b])) in original
        assert set(seeds.tolist()) <= set(sub.nodes.tolist())
        assert sub.n <= budget
        np.testing.assert_array_equal(sub.features, x[sub.nodes])
        np.testing.assert_array_equal(sub.labels, y[sub.nodes])


def test_ego_induced_edges_complete(rng):
    g, x, y = _fixture(rng, 20, 0.3)
    sub = ego_subgraph(g, x, y, [5], hops=1, budget=200, rng=rng)
    keep = set(sub.nodes.tolist())
    expected = {(a, b) for a, b in g.edge_set() if a in keep and b in keep}
    got = {(int(sub.nodes[a]), int(sub.nodes[b])) for a, b in sub.graph.edge_set()}
    assert got == expected


def test_ego_errors(rng):
    g, x, y = _fixture(rng)
    with pytest.raises(DegenerateInputError):
        ego_subgraph(g, x, y, [], rng=rng)
    with pytest.raises(ContractError):
        ego_subgraph(g, x, y, [0, 1, 2], budget=2, rng=rng)


def test_subgraph_round_trip(rng):
    g, x, y = _fixture(rng)
    sub = induced_subgraph(g, x, y, [11, 2, 17, 5])
    local = np.arange(sub.n)
    assert np.array_equal(sub.to_local(sub.nodes[local]), local)
    assert len(set(sub.nodes.tolist())) == sub.n
