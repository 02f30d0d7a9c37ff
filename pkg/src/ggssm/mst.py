"""Minimum spanning trees and rooted traversal structures.

All algorithms order edges by the key ``(w, u, v)``. That key is a total
order on canonical edges, so the minimum spanning tree under it is unique
and every algorithm returns the same edge set, duplicate weights included.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from . import _backend
from .errors import ContractViolation, GraphDisconnected, InvalidConfig, OracleSizeError
from .graph_build import EdgeList

DEFAULT_EPSILON = 1 / 8
CONTRACT_ROUNDS = 2
BRUTEFORCE_MAX_L = 8
ALGORITHMS = ("kruskal", "prim", "boruvka_soft")


@dataclass(frozen=True)
class SpanningTree:
    edges: EdgeList
    L: int
    total_weight: float
    stats: dict = field(default_factory=dict, compare=False, repr=False)

    def edge_set(self) -> set[tuple[int, int]]:
        return set(zip(self.edges.u.tolist(), self.edges.v.tolist()))

    def __eq__(self, other):
        if not isinstance(other, SpanningTree):
            return NotImplemented
        return (self.L == other.L
                and np.array_equal(self.edges.u, other.edges.u)
                and np.array_equal(self.edges.v, other.edges.v)
                and np.array_equal(self.edges.w, other.edges.w))

    __hash__ = None


class UnionFind:
    """Disjoint sets with path compression and union by rank."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.rank = [0] * n
        self.components = n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1
        self.components -= 1
        return True


def total_weight(w) -> float:
    # fsum is exact, so any two trees with the same weight multiset agree bit for bit
    return math.fsum(np.asarray(w, dtype=np.float64).tolist())


def _prepare(edges, L: int) -> EdgeList:
    if L < 1:
        raise ContractViolation(f"need at least one node, got L={L}")
    el = EdgeList.from_edges(edges)
    el.check(L)
    return el


def _tiebreak(el: EdgeList, L: int) -> np.ndarray:
    return el.u * L + el.v


def _finish(el: EdgeList, sel: np.ndarray, L: int, stats=None) -> SpanningTree:
    sel = np.asarray(sel, dtype=np.int64)
    u, v, w = el.u[sel], el.v[sel], el.w[sel]
    order = np.lexsort((v, u))
    tree = EdgeList(u[order], v[order], w[order])
    return SpanningTree(tree, L, total_weight(tree.w), stats or {})


def _disconnected(labels: np.ndarray) -> GraphDisconnected:
    first = int(labels[0])
    other = int(np.flatnonzero(labels != first)[0])
    return GraphDisconnected(
        f"graph is disconnected: node 0 cannot reach node {other}", (0, other))


def sort_edges(el: EdgeList) -> np.ndarray:
    """Indices ordering the edges by ``(w, u, v)``."""
    return np.lexsort((el.v, el.u, el.w))


def mst_kruskal(edges, L: int) -> SpanningTree:
    el = _prepare(edges, L)
    sel, labels = _backend.kernels.kruskal_select(el.u, el.v, sort_edges(el), L)
    if len(sel) != L - 1:
        raise _disconnected(labels)
    return _finish(el, sel, L)


def _incidence(el: EdgeList, L: int):
    ends = np.concatenate([el.u, el.v])
    eids = np.concatenate([np.arange(len(el)), np.arange(len(el))]).astype(np.int64)
    order = np.argsort(ends, kind="stable")
    indptr = np.zeros(L + 1, dtype=np.int64)
    np.cumsum(np.bincount(ends, minlength=L), out=indptr[1:])
    return indptr, np.ascontiguousarray(eids[order])


def mst_prim(edges, L: int) -> SpanningTree:
    el = _prepare(edges, L)
    indptr, inc = _incidence(el, L)
    sel, reached = _backend.kernels.prim_select(indptr, inc, el.u, el.v, el.w, _tiebreak(el, L), L)
    if len(sel) != L - 1:
        other = int(np.flatnonzero(~reached)[0])
        raise GraphDisconnected(f"graph is disconnected: node 0 cannot reach node {other}", (0, other))
    return _finish(el, sel, L)


def make_soft_heap(epsilon: float = DEFAULT_EPSILON):
    """An empty soft heap from the active kernel backend."""
    return _backend.kernels.SoftHeap(epsilon)


def soft_heap_insert(heap, key: float, item=None):
    heap.insert(key, item)
    return heap


def soft_heap_extract_min(heap):
    """``(item, original_key, was_corrupted)`` for an item of minimal current key."""
    return heap.extract_min()


def mst_boruvka_soft(edges, L: int, epsilon: float = DEFAULT_EPSILON,
                     contract_rounds: int = CONTRACT_ROUNDS) -> SpanningTree:
    """Borůvka rounds where each component picks its cheapest outgoing edge
    from a soft heap of its incident edges.

    The first ``contract_rounds`` rounds find cheapest edges by scanning the
    edge list, which shrinks the graph before any heap is built; the soft
    heaps then serve every later round.

    The soft heap may hand back an edge that only looks cheapest because
    other keys were raised. Every corrupted item is recorded in a per
    component pool, and before a pick is accepted the pool is checked
    against the true keys; a cheaper live outgoing edge there replaces the
    pick (``stats['repairs']`` counts these)."""
    if not (0.0 < epsilon <= 0.25):
        raise InvalidConfig(f"epsilon must lie in (0, 1/4], got {epsilon}")
    if contract_rounds < 0:
        raise InvalidConfig(f"contract_rounds must be >= 0, got {contract_rounds}")
    el = _prepare(edges, L)
    if L == 1:
        return _finish(el, np.empty(0, dtype=np.int64), L, {})
    sel, stats = _backend.kernels.boruvka_soft_select(el.u, el.v, el.w, L, float(epsilon),
                                                       int(contract_rounds))
    return _finish(el, sel, L, dict(stats))


def _key(el: EdgeList, i: int):
    return (float(el.w[i]), int(el.u[i]), int(el.v[i]))


def mst_bruteforce(edges, L: int) -> SpanningTree:
    """Exhaustive search over all spanning trees (test oracle, ``L <= 8``).

    Among trees of minimum total weight the one whose sorted edge keys are
    lexicographically smallest is returned."""
    if L > BRUTEFORCE_MAX_L:
        raise OracleSizeError(f"brute-force MST supports L <= {BRUTEFORCE_MAX_L}, got {L}")
    el = _prepare(edges, L)
    E = len(el)
    if L == 1:
        return _finish(el, np.empty(0, dtype=np.int64), L)
    keys = [_key(el, i) for i in range(E)]
    ws = el.w.tolist()
    best = [math.inf, None]

    def consider(chosen):
        tot = math.fsum(ws[i] for i in chosen)
        sig = sorted(keys[i] for i in chosen)
        if tot < best[0] or (tot == best[0] and sig < best[1][1]):
            best[0], best[1] = tot, (list(chosen), sig)

    # include/exclude recursion; a cycle check prunes non-forests and a
    # partial-sum bound prunes branches that cannot tie the incumbent
    parent = list(range(L))

    def find(x):
        while parent[x] != x:
            x = parent[x]
        return x

    chosen: list[int] = []

    def rec(i, partial):
        if len(chosen) == L - 1:
            consider(chosen)
            return
        # slack keeps rounding in the running sum from pruning an exact tie
        if E - i < L - 1 - len(chosen) or partial > best[0] * (1 + 1e-9):
            return
        ru, rv = find(int(el.u[i])), find(int(el.v[i]))
        if ru != rv:
            parent[ru] = rv
            chosen.append(i)
            rec(i + 1, partial + ws[i])
            chosen.pop()
            parent[ru] = ru
        rec(i + 1, partial)

    rec(0, 0.0)
    if best[1] is None:
        uf = UnionFind(L)
        for e in el:
            uf.union(e.u, e.v)
        labels = np.array([uf.find(i) for i in range(L)])
        raise _disconnected(labels)
    return _finish(el, np.array(best[1][0]), L)


MST_FUNCS = {"kruskal": mst_kruskal, "prim": mst_prim, "boruvka_soft": mst_boruvka_soft}


def minimum_spanning_tree(edges, L: int, algorithm: str = "kruskal", **kw) -> SpanningTree:
    try:
        fn = MST_FUNCS[algorithm]
    except KeyError:
        raise InvalidConfig(f"unknown MST algorithm {algorithm!r}; pick one of {ALGORITHMS}") from None
    return fn(edges, L, **kw)


def is_spanning_tree(tree: SpanningTree) -> bool:
    """Exactly ``L - 1`` edges, connected, acyclic."""
    L = tree.L
    if len(tree.edges) != L - 1:
        return False
    uf = UnionFind(L)
    for e in tree.edges:
        if not uf.union(e.u, e.v):
            return False
    return uf.components == 1


@dataclass(frozen=True, eq=False)
class RootedTree:
    """A spanning tree oriented away from ``root``.

    ``order`` is breadth-first (parents precede children, siblings in
    ascending index order); ``parent[root] == -1``. ``level_ptr`` marks
    where each depth starts inside ``order``."""

    root: int
    parent: np.ndarray
    order: np.ndarray
    depth: np.ndarray
    level_ptr: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def L(self) -> int:
        return self.parent.shape[0]

    @cached_property
    def children(self) -> list[np.ndarray]:
        kids: list[list[int]] = [[] for _ in range(self.L)]
        for c in self.order[1:].tolist():
            kids[int(self.parent[c])].append(c)
        return [np.array(k, dtype=np.int64) for k in kids]

    def path(self, j: int, i: int) -> list[int]:
        """Nodes on the unique path from ``j`` to ``i``, both ends included."""
        self._check(j)
        self._check(i)
        up_j, up_i = [j], [i]
        a, b = j, i
        while self.depth[a] > self.depth[b]:
            a = int(self.parent[a])
            up_j.append(a)
        while self.depth[b] > self.depth[a]:
            b = int(self.parent[b])
            up_i.append(b)
        while a != b:
            a, b = int(self.parent[a]), int(self.parent[b])
            up_j.append(a)
            up_i.append(b)
        return up_j + up_i[-2::-1]

    def _check(self, x) -> None:
        if not (0 <= x < self.L):
            raise ContractViolation(f"node {x} out of range for L={self.L}")


def _csr(L: int, u: np.ndarray, v: np.ndarray):
    rows = np.concatenate([u, v])
    cols = np.concatenate([v, u])
    g = csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(L, L))
    g.sort_indices()
    return g


def root_tree(tree: SpanningTree | EdgeList, root: int = 0, L: int | None = None) -> RootedTree:
    if isinstance(tree, SpanningTree):
        el, L = tree.edges, tree.L
    else:
        el = tree
        if L is None:
            L = len(el) + 1
    if not (0 <= root < L):
        raise ContractViolation(f"root {root} out of range for L={L}")
    if len(el) != L - 1:
        raise ContractViolation(f"a tree on {L} nodes needs {L - 1} edges, got {len(el)}")
    g = _csr(L, el.u, el.v)
    order, pred = breadth_first_order(g, root, directed=False, return_predecessors=True)
    if order.size != L:
        raise ContractViolation("edge set does not connect all nodes")
    parent = pred.astype(np.int64)
    parent[root] = -1
    order = order.astype(np.int64)
    depth = np.zeros(L, dtype=np.int64)
    for c in order[1:]:
        depth[c] = depth[parent[c]] + 1
    counts = np.bincount(depth, minlength=int(depth.max()) + 1)
    level_ptr = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=level_ptr[1:])
    return RootedTree(root, parent, order, depth, level_ptr,
                      g.indptr.astype(np.int64), g.indices.astype(np.int64))


def chain_tree(L: int, root: int | None = None) -> RootedTree:
    """Path 0-1-...-(L-1), rooted at its last node unless told otherwise."""
    u = np.arange(L - 1, dtype=np.int64)
    el = EdgeList(u, u + 1, np.ones(L - 1))
    return root_tree(el, L - 1 if root is None else root, L)


def pick_root(tree: SpanningTree, policy: str = "node_zero") -> int:
    if policy == "node_zero":
        return 0
    if policy == "max_degree":
        deg = np.bincount(np.concatenate([tree.edges.u, tree.edges.v]), minlength=tree.L)
        return int(np.argmax(deg))
    raise InvalidConfig(f"unknown root policy {policy!r}")
