"""Bipartite train graph, symmetric degree normalization, candidate edge space.

Nodes are indexed 0..n-1 with users first and items offset by ``num_users``.
Operators are stored as undirected edge lists (one entry per user-item pair);
degree normalization optionally folds in fractional weights of not-yet-added
candidate edges so that downstream gradients can flow through the degrees.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T


class EmptyCandidateSpaceError(ValueError):
    """Candidate enumeration produced no admissible user-item pair."""


@dataclass
class BipartiteGraph:
    """Train-split interaction graph with per-node degrees."""

    num_users: int
    num_items: int
    edges: np.ndarray          # (E, 2) unique (user, item) pairs, sorted
    user_degree: np.ndarray
    item_degree: np.ndarray
    _edge_keys: frozenset = field(repr=False, default=frozenset())
    _adjacency: list | None = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.num_users + self.num_items

    def has_edge(self, user: int, item: int) -> bool:
        return user * self.num_items + item in self._edge_keys

    def base_degrees(self) -> np.ndarray:
        return np.concatenate([self.user_degree, self.item_degree]).astype(np.float64)

    def adjacency_lists(self) -> list:
        if self._adjacency is None:
            adj = [[] for _ in range(self.n)]
            for u, i in self.edges:
                adj[u].append(self.num_users + i)
                adj[self.num_users + i].append(u)
            self._adjacency = adj
        return self._adjacency


def build_graph(train, num_users: int, num_items: int) -> BipartiteGraph:
    """Build the bipartite graph from train interactions (duplicates collapsed).

    ``train`` yields records whose first two fields are (user, item); extra
    fields such as timestamps are ignored.
    """
    pairs = sorted({(int(rec[0]), int(rec[1])) for rec in train})
    if not pairs:
        raise ValueError("build_graph: train interactions are empty")
    edges = np.asarray(pairs, dtype=np.intp)
    if edges[:, 0].min() < 0 or edges[:, 0].max() >= num_users:
        raise ValueError("build_graph: user id out of range")
    if edges[:, 1].min() < 0 or edges[:, 1].max() >= num_items:
        raise ValueError("build_graph: item id out of range")
    user_degree = np.bincount(edges[:, 0], minlength=num_users)
    item_degree = np.bincount(edges[:, 1], minlength=num_items)
    keys = frozenset(int(u) * num_items + int(i) for u, i in pairs)
    return BipartiteGraph(num_users, num_items, edges, user_degree, item_degree, keys)


@dataclass
class NormalizedOperator:
    """Symmetric normalized adjacency as an undirected edge list.

    ``weights`` is a plain float64 array for frozen operators or a
    :class:`fairaug.tensor.Node` when the candidate-edge weights must stay
    differentiable. :meth:`apply` only supports the frozen form.
    """

    rows: np.ndarray
    cols: np.ndarray
    weights: object
    n: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = T.spmm_sym(self.rows, self.cols, T.as_node(self.weights), T.Node(x), self.n)
        return out.value


def _inverse_sqrt_degrees(degrees: np.ndarray) -> np.ndarray:
    inv = np.zeros_like(degrees)
    positive = degrees > 0
    np.power(degrees, -0.5, out=inv, where=positive)
    return inv


def normalized_adjacency(graph: BipartiteGraph, extra=None) -> NormalizedOperator:
    """Symmetrically normalized operator, optionally with weighted extra pairs.

    ``extra`` is a ``(pairs, weights)`` tuple of candidate (user, item) pairs
    disjoint from the existing edges with weights in [0, 1]. Degrees include
    the fractional weights, so a weight-1 extra pair is indistinguishable
    from a real edge and all-zero extras reproduce the plain operator.
    """
    degrees = graph.base_degrees()
    rows = graph.edges[:, 0].astype(np.intp)
    cols = (graph.num_users + graph.edges[:, 1]).astype(np.intp)
    if extra is not None:
        pairs, w = extra
        pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
        w = np.asarray(w, dtype=np.float64)
        if w.shape != (pairs.shape[0],):
            raise ValueError("normalized_adjacency: one weight per extra pair required")
        if pairs.size and (w.min() < 0 or w.max() > 1):
            raise ValueError("normalized_adjacency: extra weights must lie in [0, 1]")
        for u, i in pairs:
            if graph.has_edge(int(u), int(i)):
                raise ValueError(f"normalized_adjacency: extra pair ({u}, {i}) already an edge")
        erows = pairs[:, 0]
        ecols = graph.num_users + pairs[:, 1]
        np.add.at(degrees, erows, w)
        np.add.at(degrees, ecols, w)
        inv = _inverse_sqrt_degrees(degrees)
        vals = np.concatenate([inv[rows] * inv[cols], w * (inv[erows] * inv[ecols])])
        rows = np.concatenate([rows, erows])
        cols = np.concatenate([cols, ecols])
    else:
        inv = _inverse_sqrt_degrees(degrees)
        vals = inv[rows] * inv[cols]
    return NormalizedOperator(rows, cols, vals, graph.n)


@dataclass
class CandidateEdgeSpace:
    """Enumerated addable (user, item) pairs with a bijective 1D index.

    Pairs follow row-major order over ``user_subset x item_subset`` with
    existing edges skipped; the index map sends a pair to its position.
    """

    user_subset: np.ndarray
    item_subset: np.ndarray
    pairs: np.ndarray  # (B, 2)
    _index: dict = field(repr=False, default_factory=dict)

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    def index_of(self, user: int, item: int) -> int:
        key = (int(user), int(item))
        if key not in self._index:
            raise KeyError(f"pair {key} is not in the candidate space")
        return self._index[key]

    def pair_at(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.size:
            raise IndexError(f"candidate index {index} out of range [0, {self.size})")
        u, i = self.pairs[index]
        return int(u), int(i)


def build_candidate_space(graph: BipartiteGraph, users, items,
                          disadvantaged=None) -> CandidateEdgeSpace:
    """Enumerate candidate pairs row-major over users x items, skipping edges.

    When ``disadvantaged`` is given, every candidate user must belong to it:
    augmentation only ever attaches edges to disadvantaged users.
    """
    users = np.asarray(list(users), dtype=np.intp)
    items = np.asarray(list(items), dtype=np.intp)
    if disadvantaged is not None:
        outside = [int(u) for u in users if int(u) not in disadvantaged]
        if outside:
            raise ValueError(
                f"build_candidate_space: users {outside[:5]} are not in the disadvantaged group")
    pairs = []
    for u in users:
        for i in items:
            if not graph.has_edge(int(u), int(i)):
                pairs.append((int(u), int(i)))
    if not pairs:
        raise EmptyCandidateSpaceError("build_candidate_space: no addable pairs")
    arr = np.asarray(pairs, dtype=np.intp)
    index = {pair: pos for pos, pair in enumerate(pairs)}
    return CandidateEdgeSpace(users, items, arr, index)


def shortest_path_lengths(graph: BipartiteGraph, source: int) -> np.ndarray:
    """Breadth-first hop counts from ``source`` (node index, users first).

    Unreachable nodes get ``inf``.
    """
    if not 0 <= source < graph.n:
        raise ValueError(f"shortest_path_lengths: source {source} out of range")
    adj = graph.adjacency_lists()
    dist = np.full(graph.n, np.inf)
    dist[source] = 0.0
    frontier = [source]
    hop = 0
    while frontier:
        hop += 1
        nxt = []
        for node in frontier:
            for nb in adj[node]:
                if dist[nb] == np.inf:
                    dist[nb] = hop
                    nxt.append(nb)
        frontier = nxt
    return dist
