"""Immutable CSR adjacency, GCN normalization and ego-subgraph extraction."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DegenerateInputError, ShapeError


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class CsrGraph:
    """Compressed sparse row adjacency of an undirected graph.

    Row ``u`` lists the neighbours of ``u``; message passing reads
    ``out[u] = sum_v A[u, v] * x[v]``. ``edge_values`` is None for a plain
    0/1 adjacency and holds the per-entry weights once normalized.
    """

    def __init__(self, n: int, row_offsets, col_indices, edge_values=None):
        self.n = int(n)
        self.row_offsets = _frozen(row_offsets, np.int64)
        self.col_indices = _frozen(col_indices, np.int64)
        self.edge_values = None if edge_values is None else _frozen(edge_values, np.float64)
        self._validate()

    def _validate(self):
        ro, ci = self.row_offsets, self.col_indices
        if ro.shape != (self.n + 1,) or ro[0] != 0:
            raise ContractError("row_offsets must have length n+1 and start at 0")
        if np.any(np.diff(ro) < 0) or ro[-1] != ci.size:
            raise ContractError("row_offsets must be non-decreasing and end at the edge count")
        if ci.size and (ci.min() < 0 or ci.max() >= self.n):
            raise ContractError("column index out of range")
        if self.edge_values is not None and self.edge_values.shape != ci.shape:
            raise ContractError("edge_values must align with col_indices")
        if ci.size > 1:
            within_row = np.ones(ci.size - 1, dtype=bool)
            cuts = ro[1:-1] - 1
            within_row[cuts[(cuts >= 0) & (cuts < ci.size - 1)]] = False
            if np.any(np.diff(ci)[within_row] <= 0):
                raise ContractError("rows must be strictly sorted (duplicate or unsorted entries)")

    @property
    def num_edges(self) -> int:
        """Stored (directed) entries; an undirected edge counts twice."""
        return int(self.col_indices.size)

    @property
    def normalized(self) -> bool:
        return self.edge_values is not None

    def degree(self) -> np.ndarray:
        return np.diff(self.row_offsets)

    def neighbors(self, u: int) -> np.ndarray:
        return self.col_indices[self.row_offsets[u]:self.row_offsets[u + 1]]

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(row, col) index arrays of every stored entry."""
        rows = np.repeat(np.arange(self.n), self.degree())
        return rows, np.asarray(self.col_indices)

    def edge_set(self) -> set[tuple[int, int]]:
        rows, cols = self.edge_arrays()
        return set(zip(rows.tolist(), cols.tolist()))

    def as_operator(self) -> sp.csr_matrix:
        vals = np.ones(self.num_edges) if self.edge_values is None else self.edge_values
        return sp.csr_matrix((vals, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    @classmethod
    def from_scipy(cls, m, keep_values: bool = False) -> "CsrGraph":
        m = sp.csr_matrix(m)
        m.sort_indices()
        return cls(m.shape[0], m.indptr, m.indices, m.data if keep_values else None)

    # derived operators, computed once per graph

    @cached_property
    def gcn_operator(self) -> sp.csr_matrix:
        return gcn_normalize(self).as_operator()

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        deg = self.degree().astype(np.float64)
        inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
        vals = np.repeat(inv, self.degree())
        return sp.csr_matrix((vals, self.col_indices, self.row_offsets), shape=(self.n, self.n))

    @cached_property
    def attention_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """(src, dst) pairs including one self-loop per node, grouped by dst."""
        with_loops = gcn_normalize(self)
        dst, src = with_loops.edge_arrays()
        return src, dst

    def __repr__(self):
        return f"CsrGraph(n={self.n}, entries={self.num_edges}, normalized={self.normalized})"


def from_edge_list(n: int, edges) -> CsrGraph:
    """Build a symmetrized, deduplicated CSR graph. Self-loops are dropped."""
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise IndexError(f"edge {tuple(bad.tolist())} references a node outside [0, {n})")
    e = e[e[:, 0] != e[:, 1]]
    both = np.concatenate([e, e[:, ::-1]])
    m = sp.csr_matrix((np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(n, n))
    m.sum_duplicates()
    return CsrGraph.from_scipy(m)


def gcn_normalize(g: CsrGraph) -> CsrGraph:
    """Symmetric normalization D^-1/2 (A + I) D^-1/2 with self-loops counted in D."""
    if g.normalized:
        raise ContractError("graph already carries edge values; refusing to normalize twice")
    a = g.as_operator() + sp.identity(g.n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm = sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    return CsrGraph.from_scipy(norm, keep_values=True)


def neighbor_mean(g: CsrGraph, x) -> np.ndarray:
    """Per-node mean of neighbour rows; isolated nodes get a zero row."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != g.n:
        raise ShapeError(f"neighbor_mean: features have {x.shape[0]} rows, graph has {g.n} nodes")
    return np.asarray(g.mean_operator @ x)


@dataclass(frozen=True)
class Subgraph:
    nodes: np.ndarray          # local -> original id
    graph: CsrGraph
    features: np.ndarray
    labels: np.ndarray

    @cached_property
    def local_index(self) -> dict[int, int]:
        return {int(v): i for i, v in enumerate(self.nodes)}

    def to_local(self, original_ids) -> np.ndarray:
        return np.array([self.local_index[int(v)] for v in np.atleast_1d(original_ids)], dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.nodes.size)


def induced_subgraph(g: CsrGraph, x, labels, nodes) -> Subgraph:
    nodes = np.unique(np.asarray(nodes, dtype=np.int64))
    adj = g.as_operator()[nodes][:, nodes]
    return Subgraph(
        nodes=_frozen(nodes, np.int64),
        graph=CsrGraph.from_scipy(adj),
        features=_frozen(np.asarray(x)[nodes], np.float64),
        labels=_frozen(np.asarray(labels)[nodes], np.int64),
    )


def ego_subgraph(g: CsrGraph, x, labels, seeds, hops: int = 2, budget: int = 200,
                 rng: np.random.Generator | None = None) -> Subgraph:
    """Breadth-first ``hops``-neighbourhood of ``seeds``, uniformly thinned to
    ``budget`` nodes. Seeds always survive the thinning."""
    seeds = np.unique(np.asarray(seeds, dtype=np.int64))
    if seeds.size == 0:
        raise DegenerateInputError("ego_subgraph: empty seed set")
    if budget < seeds.size:
        raise ContractError(f"ego_subgraph: budget {budget} smaller than {seeds.size} seeds")
    rng = rng if rng is not None else np.random.default_rng()

    visited = np.zeros(g.n, dtype=bool)
    visited[seeds] = True
    frontier = seeds
    ro, ci = g.row_offsets, g.col_indices
    for _ in range(hops):
        if frontier.size == 0:
            break
        nbrs = np.concatenate([ci[ro[u]:ro[u + 1]] for u in frontier])
        nbrs = np.unique(nbrs)
        frontier = nbrs[~visited[nbrs]]
        visited[frontier] = True

    reached = np.flatnonzero(visited)
    if reached.size > budget:
        others = np.setdiff1d(reached, seeds, assume_unique=True)
        keep = rng.choice(others, size=budget - seeds.size, replace=False)
        reached = np.concatenate([seeds, keep])
    return induced_subgraph(g, x, labels, reached)
