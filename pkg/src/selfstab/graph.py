"""Undirected topologies with per-node identifiers and k-hop neighborhoods."""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

from selfstab._rng import derive_seed

ER_MAX_ATTEMPTS = 1000


class GraphError(ValueError):
    """Invalid generator parameters or a malformed graph."""


@dataclass(frozen=True)
class Graph:
    n: int
    adjacency: Tuple[Tuple[int, ...], ...]
    ids: Tuple[int, ...]

    def __post_init__(self):
        if self.n < 1 or len(self.adjacency) != self.n or len(self.ids) != self.n:
            raise GraphError("node count does not match adjacency/ids")
        if len(set(self.ids)) != self.n or min(self.ids) < 1:
            raise GraphError("identifiers must be distinct positive integers")
        for v, nbrs in enumerate(self.adjacency):
            for u in nbrs:
                if u == v:
                    raise GraphError(f"self-loop at {v}")
                if v not in self.adjacency[u]:
                    raise GraphError(f"edge {v}-{u} is not symmetric")

    def neighbors(self, v: int) -> Tuple[int, ...]:
        return self.adjacency[v]

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    def edges(self) -> List[Tuple[int, int]]:
        return [(u, v) for u in range(self.n) for v in self.adjacency[u] if u < v]

    def mean_degree(self) -> float:
        return sum(len(a) for a in self.adjacency) / self.n

    def index_of(self, ident: int) -> int:
        return self.ids.index(ident)

    def is_connected(self) -> bool:
        return len(bfs_distances(self, 0)) == self.n


@dataclass(frozen=True)
class Locality:
    focal: int
    members: FrozenSet[int]
    boundary: FrozenSet[int]
    induced_edges: FrozenSet[Tuple[int, int]]


def from_edges(n: int, edges: Iterable[Tuple[int, int]], ids: Optional[Sequence[int]] = None) -> Graph:
    """Build a graph on nodes 0..n-1. Identifiers default to 1..n."""
    adj = [set() for _ in range(n)]
    for u, v in edges:
        if not (0 <= u < n and 0 <= v < n):
            raise GraphError(f"edge {u}-{v} out of range")
        if u == v:
            raise GraphError(f"self-loop at {u}")
        adj[u].add(v)
        adj[v].add(u)
    ident = tuple(ids) if ids is not None else tuple(range(1, n + 1))
    return Graph(n, tuple(tuple(sorted(a)) for a in adj), ident)


def path(n: int, ids: Optional[Sequence[int]] = None) -> Graph:
    return from_edges(n, [(i, i + 1) for i in range(n - 1)], ids)


def complete(n: int, ids: Optional[Sequence[int]] = None) -> Graph:
    return from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)], ids)


def star(leaves: int, ids: Optional[Sequence[int]] = None) -> Graph:
    """Node 0 is the center."""
    return from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)], ids)


def bfs_distances(g: Graph, src: int, limit: Optional[int] = None) -> dict:
    dist = {src: 0}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if limit is not None and dist[u] >= limit:
            continue
        for w in g.adjacency[u]:
            if w not in dist:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


def locality(g: Graph, v: int, k: int) -> Locality:
    if not 0 <= v < g.n:
        raise GraphError(f"node {v} out of range")
    if k < 1:
        raise GraphError("radius must be at least 1")
    dist = bfs_distances(g, v, limit=k)
    members = frozenset(dist)
    boundary = frozenset(u for u, d in dist.items() if d == k)
    edges = frozenset((a, b) for a in members for b in g.adjacency[a] if b in members and a < b)
    return Locality(v, members, boundary, edges)


def _seeded_ids(n: int, rng: random.Random) -> Tuple[int, ...]:
    ids = list(range(1, n + 1))
    rng.shuffle(ids)
    return tuple(ids)


def generate_ba(n: int, m: int, seed: int) -> Graph:
    """Preferential attachment grown from a complete graph on m+1 nodes."""
    if m < 1 or n < m + 1:
        raise GraphError(f"invalid preferential-attachment parameters n={n}, m={m}")
    rng = random.Random(derive_seed(seed, "ba", n, m))
    edges = [(i, j) for i in range(m + 1) for j in range(i + 1, m + 1)]
    # each node appears once per incident edge, so uniform picks are degree-proportional
    endpoints = [x for e in edges for x in e]
    for new in range(m + 1, n):
        targets = set()
        while len(targets) < m:
            targets.add(rng.choice(endpoints))
        for t in sorted(targets):
            edges.append((t, new))
            endpoints.extend((t, new))
    return from_edges(n, edges, _seeded_ids(n, rng))


def generate_er(n: int, p: float, seed: int) -> Graph:
    if n < 2 or not 0 < p <= 1:
        raise GraphError(f"invalid random-graph parameters n={n}, p={p}")
    for attempt in range(ER_MAX_ATTEMPTS):
        rng = random.Random(derive_seed(seed, "er", n, attempt))
        edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
        g = from_edges(n, edges, _seeded_ids(n, rng))
        if g.is_connected():
            return g
    raise GraphError(f"no connected graph after {ER_MAX_ATTEMPTS} attempts (n={n}, p={p})")


def ba_attachment_for_degree(avg_degree: float) -> int:
    """Attachment count whose BA graphs have roughly the requested mean degree."""
    return max(1, int(round(avg_degree / 2)))


def estimate_diameter(n: int) -> float:
    if n < 3:
        raise GraphError("diameter estimate needs n >= 3")
    return math.log(n) / math.log(math.log(n))


def write_edgelist(g: Graph) -> str:
    lines = [f"n {g.n}"]
    lines += [f"{u} {v}" for u, v in g.edges()]
    lines.append("ids")
    lines += [str(i) for i in g.ids]
    return "\n".join(lines) + "\n"


def read_edgelist(text: str) -> Graph:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("n "):
        raise GraphError("line 1: expected 'n <count>'")
    n = int(lines[0].split()[1])
    edges = []
    ids = None
    for lineno, ln in enumerate(lines[1:], start=2):
        if ln == "ids":
            ids = [int(x) for x in lines[lineno:]]
            break
        parts = ln.split()
        if len(parts) != 2:
            raise GraphError(f"line {lineno}: expected 'u v'")
        edges.append((int(parts[0]), int(parts[1])))
    if ids is not None and len(ids) != n:
        raise GraphError(f"expected {n} identifiers, got {len(ids)}")
    return from_edges(n, edges, ids)
