"""Pure-Python/numpy kernels, used when the compiled extension is unavailable.

Signatures mirror ``_kernels.pyx`` exactly. Scans are vectorized one tree
level at a time; everything else is plain Python.
"""

from __future__ import annotations

import heapq
import math

import numpy as np

from .errors import EmptyStructure, GraphDisconnected, InvalidConfig, InvalidInput

BACKEND = "python"


def _levels(order, level_ptr):
    return [order[level_ptr[d]:level_ptr[d + 1]] for d in range(len(level_ptr) - 1)]


def scan_forward(order, parent, level_ptr, a, u, full, edge_count):
    L, N = a.shape
    up = np.empty_like(a)
    C = np.zeros_like(a)
    levels = _levels(order, level_ptr)
    for nodes in reversed(levels):
        up[nodes] = u[nodes] + a[nodes] * C[nodes]
        par = parent[nodes]
        keep = par >= 0
        if keep.any():
            np.add.at(C, par[keep], up[nodes[keep]])
    D = None
    R = C
    if full:
        D = np.zeros_like(a)
        for nodes in levels[1:]:
            p = parent[nodes]
            D[nodes] = u[p] + a[p] * (C[p] + D[p] - up[nodes])
        R = C + D
    h = u + a * R if edge_count else u + R
    return h, up, C, D


def scan_backward(order, parent, level_ptr, a, up, C, D, grad_h, full, edge_count):
    g = a if edge_count else np.ones_like(a)
    du = np.array(grad_h, dtype=a.dtype, copy=True)
    dC = g * grad_h
    dD = g * grad_h if full else None
    if edge_count:
        da = grad_h * (C + D) if full else grad_h * C
    else:
        da = np.zeros_like(a)
    da = np.asarray(da, dtype=a.dtype).copy()
    dup = np.zeros_like(a)
    levels = _levels(order, level_ptr)
    if full:
        for nodes in reversed(levels[1:]):
            p = parent[nodes]
            t = dD[nodes]
            apt = a[p] * t
            np.add.at(du, p, t)
            np.add.at(da, p, t * (C[p] + D[p] - up[nodes]))
            np.add.at(dC, p, apt)
            np.add.at(dD, p, apt)
            dup[nodes] -= apt
    for depth, nodes in enumerate(levels):
        if depth > 0:
            dup[nodes] += dC[parent[nodes]]
        du[nodes] += dup[nodes]
        da[nodes] += dup[nodes] * C[nodes]
        dC[nodes] += a[nodes] * dup[nodes]
    return da, du


def dense_oracle(indptr, indices, a, u, edge_count):
    L, N = a.shape
    h = np.array(u, dtype=a.dtype, copy=True)
    adj = [indices[indptr[i]:indptr[i + 1]].tolist() for i in range(L)]
    for i in range(L):
        Q = {i: np.ones(N)}
        stack = [(i, -1)]
        acc = np.zeros(N)
        while stack:
            cur, came = stack.pop()
            step = Q[cur] * a[cur] if (edge_count or cur != i) else Q[cur]
            for nb in adj[cur]:
                if nb == came:
                    continue
                Q[nb] = step
                acc += step * u[nb]
                stack.append((nb, cur))
        h[i] += acc
    return h


def _find(par, x):
    while par[x] != x:
        par[x] = par[par[x]]
        x = par[x]
    return x


def _union(par, rnk, a, b):
    if rnk[a] < rnk[b]:
        a, b = b, a
    par[b] = a
    if rnk[a] == rnk[b]:
        rnk[a] += 1
    return a


def kruskal_select(eu, ev, sorted_idx, L):
    par = list(range(L))
    rnk = [0] * L
    sel = []
    if L <= 1:
        return np.empty(0, dtype=np.int64), np.zeros(L, dtype=np.int64)
    eu_l, ev_l = eu.tolist(), ev.tolist()
    for e in sorted_idx.tolist():
        ru, rv = _find(par, eu_l[e]), _find(par, ev_l[e])
        if ru != rv:
            _union(par, rnk, ru, rv)
            sel.append(e)
            if len(sel) == L - 1:
                break
    labels = np.array([_find(par, i) for i in range(L)], dtype=np.int64)
    return np.array(sel, dtype=np.int64), labels


def prim_select(indptr, inc_edge, eu, ev, w, sec, L):
    in_tree = np.zeros(L, dtype=bool)
    if L == 0:
        return np.empty(0, dtype=np.int64), in_tree
    eu_l, ev_l, w_l, s_l = eu.tolist(), ev.tolist(), w.tolist(), sec.tolist()
    heap = []
    sel = []
    x = 0
    in_tree[0] = True
    while True:
        for q in range(indptr[x], indptr[x + 1]):
            e = int(inc_edge[q])
            nb = ev_l[e] if eu_l[e] == x else eu_l[e]
            if not in_tree[nb]:
                heapq.heappush(heap, (w_l[e], s_l[e], e))
        if len(sel) == L - 1:
            break
        x = -1
        while heap:
            _, _, e = heapq.heappop(heap)
            if not in_tree[eu_l[e]]:
                x = eu_l[e]
            elif not in_tree[ev_l[e]]:
                x = ev_l[e]
            else:
                continue
            in_tree[x] = True
            sel.append(e)
            break
        if x < 0:
            break
    return np.array(sel, dtype=np.int64), in_tree


class _Item:
    __slots__ = ("key", "tie", "payload", "bad", "dead", "in_pool")

    def __init__(self, key, tie, payload):
        self.key = key
        self.tie = tie
        self.payload = payload
        self.bad = False
        self.dead = False
        self.in_pool = False


class _Node:
    __slots__ = ("rank", "key", "items", "left", "right", "next", "smin")

    def __init__(self, rank):
        self.rank = rank
        self.key = None
        self.items = []
        self.left = None
        self.right = None
        self.next = None
        self.smin = self


class _Forest:
    """Soft-heap machinery shared by any number of heaps (see ``_Arena`` in
    the compiled core for the layout notes)."""

    def __init__(self, epsilon, track=False):
        self.t = math.ceil(math.log2(3.0 / epsilon))
        self.track = track
        self.live_bad = 0
        self.newbad = []

    def _fill(self, x):
        l, r = x.left, x.right
        if r is not None and r.key < l.key:
            x.left, x.right = r, l
            l = r
        if not x.items:
            x.items = l.items
            x.key = l.key
        else:
            nk = l.key
            for it in x.items:
                if not it.bad and (it.key, it.tie) < nk:
                    it.bad = True
                    self.live_bad += 1
                    if self.track:
                        self.newbad.append(it)
            x.items.extend(l.items)
            x.key = nk
        l.items = []
        if l.left is None:
            x.left, x.right = x.right, None
        else:
            self._defill(l)

    def _defill(self, x):
        self._fill(x)
        if x.rank > self.t and x.rank & 1 and x.left is not None:
            self._fill(x)

    def _link(self, x, y):
        z = _Node(x.rank + 1)
        z.left, z.right = x, y
        self._defill(z)
        return z

    @staticmethod
    def _set_smin(x):
        nx = x.next
        if nx is not None and nx.smin.key < x.key:
            x.smin = nx.smin
        else:
            x.smin = x

    def _refresh(self, head, upto):
        path = []
        x = head
        while x is not None:
            path.append(x)
            if x is upto:
                break
            x = x.next
        for x in reversed(path):
            self._set_smin(x)

    def insert(self, head, it):
        carry = _Node(0)
        carry.items = [it]
        carry.key = (it.key, it.tie)
        h = head
        while h is not None and h.rank == carry.rank:
            nh = h.next
            carry = self._link(carry, h)
            h = nh
        carry.next = h
        self._set_smin(carry)
        return carry

    def meld(self, h1, h2):
        if h1 is None:
            return h2
        if h2 is None:
            return h1
        roots = []
        for h in (h1, h2):
            while h is not None:
                roots.append(h)
                h = h.next
        roots.sort(key=lambda r: r.rank)
        for x, y in zip(roots, roots[1:]):
            x.next = y
        roots[-1].next = None
        head = roots[0]
        prev, x = None, head
        nx = x.next
        while nx is not None:
            if x.rank != nx.rank or (nx.next is not None and nx.next.rank == x.rank):
                prev, x = x, nx
            else:
                tail = nx.next
                x = self._link(x, nx)
                x.next = tail
                if prev is None:
                    head = x
                else:
                    prev.next = x
            nx = x.next
        self._refresh(head, None)
        return head

    def extract(self, head):
        x = head.smin
        it = x.items.pop()
        if it.bad:
            self.live_bad -= 1
        it.dead = True
        if x.items:
            return head, it
        if x.left is None:
            if x is head:
                return head.next, it
            p = head
            while p.next is not x:
                p = p.next
            p.next = x.next
            self._refresh(head, p)
        else:
            self._defill(x)
            self._refresh(head, x)
        return head, it


class SoftHeap:
    """Approximate min-priority queue with at most ``ceil(epsilon * n)``
    corrupted items after ``n`` insertions.

    ``extract_min`` returns ``(item, original_key, was_corrupted)``; the
    returned item has minimal *current* key, which may exceed its original
    key when it was pooled with other items."""

    def __init__(self, epsilon=0.125):
        if not (0.0 < epsilon < 1.0):
            raise InvalidConfig(f"epsilon must lie in (0, 1), got {epsilon}")
        self.epsilon = float(epsilon)
        self._forest = _Forest(self.epsilon)
        self._head = None
        self.insertions = 0
        self._size = 0

    def insert(self, key, item=None):
        k = float(key)
        if not math.isfinite(k):
            raise InvalidInput(f"soft heap keys must be finite, got {key!r}")
        self._head = self._forest.insert(self._head, _Item(k, self.insertions, item))
        self.insertions += 1
        self._size += 1
        return self

    def extract_min(self):
        if self._head is None:
            raise EmptyStructure("extract_min on an empty soft heap")
        self._head, it = self._forest.extract(self._head)
        self._size -= 1
        return it.payload, it.key, it.bad

    @property
    def corrupted_count(self):
        return self._forest.live_bad

    @property
    def t(self):
        return self._forest.t

    def __len__(self):
        return self._size

    def __bool__(self):
        return self._size > 0


def boruvka_soft_select(eu, ev, w, L, epsilon, contract_rounds=2):
    E = len(eu)
    eu_l, ev_l, w_l = eu.tolist(), ev.tolist(), w.tolist()
    forest = _Forest(epsilon, track=True)
    par = list(range(L))
    rnk = [0] * L
    heaps = [None] * L
    pools = [[] for _ in range(L)]
    stats = dict(rounds=0, contracted=0, discarded=0, repairs=0, verified=0, corrupted=0)
    sel = []
    active = list(range(L))
    rem = list(range(E))

    def ekey(e):
        return (w_l[e], eu_l[e] * L + ev_l[e])

    def lost(c):
        other = active[0] if active[0] != c else active[1]
        return GraphDisconnected(
            f"graph is disconnected: node {c} cannot reach node {other}", (c, other))

    # plain Borůvka rounds over the surviving edges shrink the graph first
    while stats["contracted"] < contract_rounds and len(active) > 1:
        stats["contracted"] += 1
        stats["rounds"] += 1
        best = {}
        kept = []
        for e in rem:
            ru, rv = _find(par, eu_l[e]), _find(par, ev_l[e])
            if ru == rv:
                stats["discarded"] += 1
                continue
            kept.append(e)
            for r in (ru, rv):
                if r not in best or ekey(e) < ekey(best[r]):
                    best[r] = e
        rem = kept
        for c in active:
            if c not in best:
                raise lost(c)
        for c in active:
            e = best[c]
            ru, rv = _find(par, eu_l[e]), _find(par, ev_l[e])
            if ru != rv:
                _union(par, rnk, ru, rv)
                sel.append(e)
        active = [c for c in active if _find(par, c) == c]

    def attach(c):
        for it in forest.newbad:
            stats["corrupted"] += 1
            if not it.in_pool:
                it.in_pool = True
                pools[c].append(it)
        forest.newbad.clear()

    for e in rem:
        ru, rv = _find(par, eu_l[e]), _find(par, ev_l[e])
        if ru == rv:
            stats["discarded"] += 1
            continue
        tie = eu_l[e] * L + ev_l[e]
        for side, r in ((0, ru), (1, rv)):
            heaps[r] = forest.insert(heaps[r], _Item(w_l[e], tie, 2 * e + side))
            attach(r)

    def internal(it):
        e = it.payload >> 1
        return _find(par, eu_l[e]) == _find(par, ev_l[e])

    while len(active) > 1:
        stats["rounds"] += 1
        chosen = {}
        for c in active:
            cand = None
            while heaps[c] is not None:
                heaps[c], it = forest.extract(heaps[c])
                if not internal(it):
                    cand = it
                    break
                stats["discarded"] += 1
            attach(c)
            if cand is None:
                raise lost(c)
            best = cand
            if pools[c]:
                stats["verified"] += 1
            kept = []
            for p in pools[c]:
                if p.dead or internal(p):
                    p.in_pool = False
                    continue
                kept.append(p)
                if (p.key, p.tie) < (best.key, best.tie):
                    best = p
            pools[c] = kept
            if best is not cand:
                # the pick stays available: put a fresh copy back
                stats["repairs"] += 1
                heaps[c] = forest.insert(heaps[c], _Item(cand.key, cand.tie, cand.payload))
                attach(c)
            chosen[c] = best.payload >> 1
        for c in active:
            e = chosen[c]
            ru, rv = _find(par, eu_l[e]), _find(par, ev_l[e])
            if ru == rv:
                continue
            r = _union(par, rnk, ru, rv)
            q = rv if r == ru else ru
            sel.append(e)
            heaps[r] = forest.meld(heaps[ru], heaps[rv])
            heaps[q] = None
            pools[r].extend(pools[q])
            pools[q] = []
            attach(r)
        active = [c for c in active if _find(par, c) == c]
    return np.array(sel, dtype=np.int64), stats
