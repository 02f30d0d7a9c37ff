# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Every public function here has a twin in ``_kernels_py``
with the same signature; ``ggssm._backend`` picks one at import time."""

import numpy as np
cimport cython
cimport numpy as cnp
from libc.stdint cimport int64_t, int32_t, uint8_t
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memcpy

cdef extern from "<stdlib.h>" nogil:
    void* aligned_alloc(size_t alignment, size_t size)
from libc.math cimport ceil, log2

from .errors import GraphDisconnected, EmptyStructure, InvalidConfig, InvalidInput

cnp.import_array()

ctypedef fused real:
    float
    double

BACKEND = "compiled"


# --------------------------------------------------------------------------
# tree scans
# --------------------------------------------------------------------------

cdef void _positions(const int64_t* order, const int64_t* parent, int64_t* pp,
                     Py_ssize_t L) noexcept nogil:
    # pp[k] = BFS position of the parent of order[k]; -1 for the root
    cdef Py_ssize_t k
    cdef int64_t* inv = <int64_t*> malloc(L * sizeof(int64_t))
    for k in range(L):
        inv[order[k]] = k
    for k in range(L):
        pp[k] = -1 if parent[order[k]] < 0 else inv[parent[order[k]]]
    free(inv)


cdef void _gather(const real* src, real* dst, const int64_t* order, Py_ssize_t L,
                  Py_ssize_t N) noexcept nogil:
    cdef Py_ssize_t k, n
    cdef const real* s
    cdef real* d
    for k in range(L):
        s = src + order[k] * N
        d = dst + k * N
        for n in range(N):
            d[n] = s[n]


def scan_forward(const int64_t[::1] order, const int64_t[::1] parent, level_ptr,
                 const real[:, ::1] a, const real[:, ::1] u, bint full, bint edge_count):
    """Upward (and optionally downward) pass. Returns ``(h, up, C, D)``.

    The intermediates are laid out by BFS position (row ``k`` belongs to
    node ``order[k]``) so both passes stream through memory; ``D`` is
    ``None`` for the rooted scan."""
    cdef Py_ssize_t L = a.shape[0], N = a.shape[1]
    cdef Py_ssize_t k, n
    cdef int64_t p
    dtype = np.float32 if real is float else np.float64
    h_arr = np.empty((L, N), dtype=dtype)
    up_arr = np.empty((L, N), dtype=dtype)
    C_arr = np.zeros((L, N), dtype=dtype)
    D_arr = np.empty((L, N), dtype=dtype) if full else None
    if L == 0 or N == 0:
        return h_arr, up_arr, C_arr, D_arr
    cdef real[:, ::1] h_v = h_arr
    cdef real[:, ::1] up_v = up_arr
    cdef real[:, ::1] C_v = C_arr
    cdef real[:, ::1] D_v
    cdef const real* A = &a[0, 0]
    cdef const real* U = &u[0, 0]
    cdef real* H = &h_v[0, 0]
    cdef real* UP = &up_v[0, 0]
    cdef real* CC = &C_v[0, 0]
    cdef real* DD = NULL
    cdef const real* ak
    cdef const real* uk
    cdef const real* ap
    cdef const real* upp
    cdef real* ck
    cdef real* hk
    cdef real* upk
    cdef real* cp
    cdef real* dk
    cdef real* dp
    cdef int64_t* pp = <int64_t*> malloc(L * sizeof(int64_t))
    if pp == NULL:
        raise MemoryError()
    if full:
        D_v = D_arr
        DD = &D_v[0, 0]
    with nogil:
        _positions(&order[0], &parent[0], pp, L)
        # children before parents: C is complete when a node is reached
        for k in range(L - 1, -1, -1):
            ak = A + order[k] * N
            uk = U + order[k] * N
            ck = CC + k * N
            upk = UP + k * N
            for n in range(N):
                upk[n] = uk[n] + ak[n] * ck[n]
            if not full:
                hk = H + order[k] * N
                if edge_count:
                    for n in range(N):
                        hk[n] = upk[n]
                else:
                    for n in range(N):
                        hk[n] = uk[n] + ck[n]
            p = pp[k]
            if p >= 0:
                cp = CC + p * N
                for n in range(N):
                    cp[n] += upk[n]
        if full:
            # parents before children: the message from above is ready
            for k in range(L):
                p = pp[k]
                dk = DD + k * N
                ck = CC + k * N
                uk = U + order[k] * N
                hk = H + order[k] * N
                if p < 0:
                    for n in range(N):
                        dk[n] = 0
                else:
                    ap = A + order[p] * N
                    upp = U + order[p] * N
                    cp = CC + p * N
                    dp = DD + p * N
                    upk = UP + k * N
                    for n in range(N):
                        dk[n] = upp[n] + ap[n] * (cp[n] + dp[n] - upk[n])
                if edge_count:
                    ak = A + order[k] * N
                    for n in range(N):
                        hk[n] = uk[n] + ak[n] * (ck[n] + dk[n])
                else:
                    for n in range(N):
                        hk[n] = uk[n] + ck[n] + dk[n]
    free(pp)
    return h_arr, up_arr, C_arr, D_arr


def scan_backward(const int64_t[::1] order, const int64_t[::1] parent, level_ptr,
                  const real[:, ::1] a, const real[:, ::1] up, const real[:, ::1] C, D_in,
                  const real[:, ::1] grad_h, bint full, bint edge_count):
    """Reverse-mode sweep through :func:`scan_forward`, consuming its
    position-ordered intermediates. Returns ``(d_a, d_u)`` by node."""
    cdef Py_ssize_t L = a.shape[0], N = a.shape[1]
    cdef Py_ssize_t k, n, q, off, offp
    cdef int64_t p
    dtype = np.float32 if real is float else np.float64
    da_arr = np.empty((L, N), dtype=dtype)
    du_arr = np.empty((L, N), dtype=dtype)
    if L == 0 or N == 0:
        return da_arr, du_arr
    # position-space work buffers: a, grad_h, then the adjoints
    Ap_arr = np.empty((L, N), dtype=dtype)
    G_arr = np.empty((L, N), dtype=dtype)
    dA_arr = np.empty((L, N), dtype=dtype)
    dU_arr = np.empty((L, N), dtype=dtype)
    dC_arr = np.empty((L, N), dtype=dtype)
    dD_arr = np.empty((L, N), dtype=dtype) if full else None
    dup_arr = np.zeros((L, N), dtype=dtype)
    cdef real[:, ::1] D_v
    cdef real[:, ::1] dD_v
    cdef real[:, ::1] da_v = da_arr
    cdef real[:, ::1] du_v = du_arr
    cdef real[:, ::1] Ap_v = Ap_arr
    cdef real[:, ::1] G_v = G_arr
    cdef real[:, ::1] dA_v = dA_arr
    cdef real[:, ::1] dU_v = dU_arr
    cdef real[:, ::1] dC_v = dC_arr
    cdef real[:, ::1] dup_v = dup_arr
    cdef real* A = &Ap_v[0, 0]
    cdef real* G = &G_v[0, 0]
    cdef const real* UP = &up[0, 0]
    cdef const real* CC = &C[0, 0]
    cdef const real* DD = NULL
    cdef real* dA = &dA_v[0, 0]
    cdef real* dU = &dU_v[0, 0]
    cdef real* dCC = &dC_v[0, 0]
    cdef real* dDD = NULL
    cdef real* dUP = &dup_v[0, 0]
    cdef real* DA = &da_v[0, 0]
    cdef real* DU = &du_v[0, 0]
    cdef real t, apt
    cdef int64_t* pp = <int64_t*> malloc(L * sizeof(int64_t))
    if pp == NULL:
        raise MemoryError()
    if full:
        D_v = D_in
        dD_v = dD_arr
        DD = &D_v[0, 0]
        dDD = &dD_v[0, 0]
    with nogil:
        _positions(&order[0], &parent[0], pp, L)
        _gather(&a[0, 0], A, &order[0], L, N)
        _gather(&grad_h[0, 0], G, &order[0], L, N)
        for q in range(L * N):
            dU[q] = G[q]
            if edge_count:
                dCC[q] = A[q] * G[q]
                if full:
                    dDD[q] = dCC[q]
                    dA[q] = G[q] * (CC[q] + DD[q])
                else:
                    dA[q] = G[q] * CC[q]
            else:
                dCC[q] = G[q]
                if full:
                    dDD[q] = G[q]
                dA[q] = 0
        if full:
            # undo the downward pass, deepest nodes first
            for k in range(L - 1, 0, -1):
                p = pp[k]
                off = k * N
                offp = p * N
                for n in range(N):
                    t = dDD[off + n]
                    apt = A[offp + n] * t
                    dU[offp + n] += t
                    dA[offp + n] += t * (CC[offp + n] + DD[offp + n] - UP[off + n])
                    dCC[offp + n] += apt
                    dDD[offp + n] += apt
                    dUP[off + n] -= apt
        # undo the upward pass, parents first
        for k in range(L):
            p = pp[k]
            off = k * N
            if p >= 0:
                offp = p * N
                for n in range(N):
                    dUP[off + n] += dCC[offp + n]
            for n in range(N):
                dU[off + n] += dUP[off + n]
                dA[off + n] += dUP[off + n] * CC[off + n]
                dCC[off + n] += A[off + n] * dUP[off + n]
        # scatter back to node order
        for k in range(L):
            off = k * N
            offp = order[k] * N
            for n in range(N):
                DA[offp + n] = dA[off + n]
                DU[offp + n] = dU[off + n]
    free(pp)
    return da_arr, du_arr


def dense_oracle(const int64_t[::1] indptr, const int64_t[::1] indices,
                 const real[:, ::1] a, const real[:, ::1] u, bint edge_count):
    """Literal all-pairs aggregation: one traversal per destination node."""
    cdef Py_ssize_t L = a.shape[0], N = a.shape[1]
    cdef Py_ssize_t n, top
    cdef int64_t i, cur, nb, q
    dtype = np.float32 if real is float else np.float64
    h_arr = np.zeros((L, N), dtype=dtype)
    Q_arr = np.empty((L, N), dtype=np.float64)
    cdef real[:, ::1] h = h_arr
    cdef double[:, ::1] Q = Q_arr
    cdef int64_t[::1] stack = np.empty(L, dtype=np.int64)
    cdef int64_t[::1] came = np.empty(L, dtype=np.int64)
    cdef double f
    with nogil:
        for i in range(L):
            for n in range(N):
                Q[i, n] = 1.0
                h[i, n] += u[i, n]
            came[i] = -1
            stack[0] = i
            top = 1
            while top > 0:
                top -= 1
                cur = stack[top]
                for q in range(indptr[cur], indptr[cur + 1]):
                    nb = indices[q]
                    if nb == came[cur]:
                        continue
                    came[nb] = cur
                    for n in range(N):
                        if edge_count or cur != i:
                            f = Q[cur, n] * a[cur, n]
                        else:
                            f = Q[cur, n]
                        Q[nb, n] = f
                        h[i, n] += f * u[nb, n]
                    stack[top] = nb
                    top += 1
    return h_arr


# --------------------------------------------------------------------------
# union-find helpers
# --------------------------------------------------------------------------

cdef inline int64_t _find(int64_t* par, int64_t x) noexcept nogil:
    while par[x] != x:
        par[x] = par[par[x]]
        x = par[x]
    return x


cdef inline int64_t _union(int64_t* par, uint8_t* rnk, int64_t a, int64_t b) noexcept nogil:
    # a, b are distinct roots; returns the surviving root
    if rnk[a] < rnk[b]:
        a, b = b, a
    par[b] = a
    if rnk[a] == rnk[b]:
        rnk[a] += 1
    return a


def _components(int64_t[::1] par, Py_ssize_t L):
    cdef Py_ssize_t i
    labels = np.empty(L, dtype=np.int64)
    cdef int64_t[::1] lab = labels
    for i in range(L):
        lab[i] = _find(&par[0], i)
    return labels


def kruskal_select(const int64_t[::1] eu, const int64_t[::1] ev, const int64_t[::1] sorted_idx,
                   Py_ssize_t L):
    """Scan edges in the given order and keep the ones joining two components.

    Returns ``(selected, labels)``; ``labels`` is a per-node component root,
    only meaningful when fewer than ``L - 1`` edges were selected."""
    cdef Py_ssize_t E = sorted_idx.shape[0], k, nsel = 0
    cdef int64_t e, ru, rv
    par_arr = np.arange(L, dtype=np.int64)
    cdef int64_t[::1] par = par_arr
    cdef uint8_t[::1] rnk = np.zeros(L, dtype=np.uint8)
    sel_arr = np.empty(max(L - 1, 0), dtype=np.int64)
    cdef int64_t[::1] sel = sel_arr
    if L <= 1:
        return sel_arr, np.zeros(L, dtype=np.int64)
    with nogil:
        for k in range(E):
            e = sorted_idx[k]
            ru = _find(&par[0], eu[e])
            rv = _find(&par[0], ev[e])
            if ru != rv:
                _union(&par[0], &rnk[0], ru, rv)
                sel[nsel] = e
                nsel += 1
                if nsel == L - 1:
                    break
    return sel_arr[:nsel], _components(par, L)


# --------------------------------------------------------------------------
# Prim with an exact binary heap
# --------------------------------------------------------------------------

cdef inline bint _eless(const double* w, const int64_t* s, int64_t x, int64_t y) noexcept nogil:
    return w[x] < w[y] or (w[x] == w[y] and s[x] < s[y])


def prim_select(const int64_t[::1] indptr, const int64_t[::1] inc_edge, const int64_t[::1] eu,
                const int64_t[::1] ev, const double[::1] w, const int64_t[::1] sec, Py_ssize_t L):
    """Grow a tree from node 0. Returns ``(selected, reached_mask)``."""
    cdef Py_ssize_t E = eu.shape[0]
    heap_arr = np.empty(max(2 * E, 1), dtype=np.int64)
    cdef int64_t[::1] heap = heap_arr
    in_tree_arr = np.zeros(L, dtype=np.uint8)
    cdef uint8_t[::1] in_tree = in_tree_arr
    sel_arr = np.empty(max(L - 1, 0), dtype=np.int64)
    cdef int64_t[::1] sel = sel_arr
    cdef Py_ssize_t size = 0, nsel = 0, pos, child, q
    cdef int64_t x, e, nb, top
    cdef const double* wp = &w[0] if E > 0 else NULL
    cdef const int64_t* sp = &sec[0] if E > 0 else NULL
    if L == 0:
        return sel_arr, in_tree_arr.astype(bool)
    with nogil:
        x = 0
        in_tree[0] = 1
        while True:
            # push every edge leaving x
            for q in range(indptr[x], indptr[x + 1]):
                e = inc_edge[q]
                nb = ev[e] if eu[e] == x else eu[e]
                if in_tree[nb]:
                    continue
                pos = size
                size += 1
                while pos > 0 and _eless(wp, sp, e, heap[(pos - 1) >> 1]):
                    heap[pos] = heap[(pos - 1) >> 1]
                    pos = (pos - 1) >> 1
                heap[pos] = e
            if nsel == L - 1:
                break
            # pop until an edge to an outside node appears
            x = -1
            while size > 0:
                top = heap[0]
                size -= 1
                e = heap[size]
                pos = 0
                while True:
                    child = 2 * pos + 1
                    if child >= size:
                        break
                    if child + 1 < size and _eless(wp, sp, heap[child + 1], heap[child]):
                        child += 1
                    if _eless(wp, sp, heap[child], e):
                        heap[pos] = heap[child]
                        pos = child
                    else:
                        break
                if size > 0:
                    heap[pos] = e
                if not in_tree[eu[top]]:
                    x = eu[top]
                elif not in_tree[ev[top]]:
                    x = ev[top]
                else:
                    continue
                in_tree[x] = 1
                sel[nsel] = top
                nsel += 1
                break
            if x < 0:
                break
    return sel_arr[:nsel], in_tree_arr.astype(bool)


# --------------------------------------------------------------------------
# soft heap
# --------------------------------------------------------------------------

# Heaps are binary trees whose nodes carry circular lists of items. Nodes of
# rank above ``t`` refill twice on odd ranks, pooling items under one raised
# key. A heap is referenced by its first root; roots form a rank-ordered
# list. Items do not store keys: item ``it`` reads its key from slot
# ``it >> sh`` of the caller's key arrays (items past ``base`` are extra
# copies whose slot lives in ``xslot``). Nodes are 32 bytes and 32-byte
# aligned so that one never straddles a cache line.

ctypedef struct SNode:
    double kp          # current key (primary part)
    int32_t key        # item that set the current key
    int32_t left
    int32_t right
    int32_t nxt        # next root, or free-list link
    int32_t stail      # last item of the circular list, -1 when empty
    int32_t rank


ctypedef struct Forest:
    int t
    bint track
    SNode* nd
    int64_t n_nodes, cap_nodes
    int32_t free_head
    int32_t* inext
    uint8_t* flags     # BAD | DEAD
    int64_t n_items, cap_items
    const double* kw
    const int64_t* ks      # secondary keys; NULL means the slot index
    int sh
    int64_t base
    int64_t* xslot
    int64_t live_bad
    int32_t* newbad
    int64_t n_newbad


DEF BAD = 1
DEF DEAD = 2


cdef inline int64_t f_slot(Forest* F, int64_t it) noexcept nogil:
    if it < F.base:
        return it >> F.sh
    return F.xslot[it - F.base]


cdef inline int64_t f_sec(Forest* F, int64_t s) noexcept nogil:
    return F.ks[s] if F.ks != NULL else s


cdef inline bint f_iless(Forest* F, int64_t a, int64_t b) noexcept nogil:
    cdef int64_t sa = f_slot(F, a), sb = f_slot(F, b)
    cdef double wa = F.kw[sa], wb = F.kw[sb]
    return wa < wb or (wa == wb and f_sec(F, sa) < f_sec(F, sb))


cdef inline bint f_nless(Forest* F, int64_t x, int64_t y) noexcept nogil:
    cdef double a = F.nd[x].kp, b = F.nd[y].kp
    if a != b:
        return a < b
    return f_iless(F, F.nd[x].key, F.nd[y].key)


cdef inline int64_t f_new_node(Forest* F) noexcept nogil:
    # capacity is guaranteed by f_grow_nodes before every public operation
    cdef int64_t x
    cdef SNode* n
    if F.free_head >= 0:
        x = F.free_head
        F.free_head = F.nd[x].nxt
    else:
        x = F.n_nodes
        F.n_nodes += 1
    n = &F.nd[x]
    n.left = -1
    n.right = -1
    n.nxt = -1
    n.stail = -1
    n.key = -1
    n.rank = 0
    return x


cdef inline void f_free_node(Forest* F, int64_t x) noexcept nogil:
    F.nd[x].nxt = F.free_head
    F.free_head = <int32_t>x


cdef inline void f_mark_bad(Forest* F, int64_t it) noexcept nogil:
    # an item turns bad at most once and the buffer holds every item
    F.flags[it] |= BAD
    F.live_bad += 1
    if F.track:
        F.newbad[F.n_newbad] = <int32_t>it
        F.n_newbad += 1


cdef void f_fill(Forest* F, int64_t x) noexcept nogil:
    cdef SNode* nx = &F.nd[x]
    cdef int64_t l = nx.left, r = nx.right, it, hx
    cdef SNode* nl
    if r >= 0 and f_nless(F, r, l):
        nx.left = <int32_t>r
        nx.right = <int32_t>l
        l = r
    nl = &F.nd[l]
    if nx.stail >= 0:
        # every item of a list shares the node key, so the only item of
        # x's list that can still be clean is the one that set its key
        it = nx.key
        if F.flags[it] == 0:
            f_mark_bad(F, it)
        hx = F.inext[nx.stail]
        F.inext[nx.stail] = F.inext[nl.stail]
        F.inext[nl.stail] = <int32_t>hx
    nx.stail = nl.stail
    nx.key = nl.key
    nx.kp = nl.kp
    nl.stail = -1
    if nl.left < 0:
        nx.left = nx.right
        nx.right = -1
        f_free_node(F, l)
    else:
        f_defill(F, l)


cdef void f_defill(Forest* F, int64_t x) noexcept nogil:
    f_fill(F, x)
    if F.nd[x].rank > F.t and (F.nd[x].rank & 1) and F.nd[x].left >= 0:
        f_fill(F, x)


cdef inline int64_t f_link(Forest* F, int64_t x, int64_t y) noexcept nogil:
    cdef int64_t z
    if F.nd[x].rank == 0:
        # two single-item leaves: the smaller one becomes the parent, which
        # is exactly what allocating a parent and filling it would produce
        if f_nless(F, y, x):
            x, y = y, x
        F.nd[x].rank = 1
        F.nd[x].left = <int32_t>y
        F.nd[x].right = -1
        return x
    z = f_new_node(F)
    F.nd[z].rank = F.nd[x].rank + 1
    F.nd[z].left = <int32_t>x
    F.nd[z].right = <int32_t>y
    f_defill(F, z)
    return z


cdef int64_t f_insert(Forest* F, int64_t head, int64_t it) noexcept nogil:
    cdef int64_t carry = f_new_node(F), h = head, nh
    cdef SNode* c = &F.nd[carry]
    c.stail = <int32_t>it
    c.key = <int32_t>it
    c.kp = F.kw[f_slot(F, it)]
    F.inext[it] = <int32_t>it
    while h >= 0 and F.nd[h].rank == F.nd[carry].rank:
        nh = F.nd[h].nxt
        carry = f_link(F, carry, h)
        h = nh
    F.nd[carry].nxt = <int32_t>h
    return carry


cdef int64_t f_meld(Forest* F, int64_t h1, int64_t h2) noexcept nogil:
    cdef int64_t head = -1, tail = -1, x, prev, nx, nn
    if h1 < 0:
        return h2
    if h2 < 0:
        return h1
    # merge the two rank-sorted root lists
    while h1 >= 0 or h2 >= 0:
        if h2 < 0 or (h1 >= 0 and F.nd[h1].rank <= F.nd[h2].rank):
            x = h1
            h1 = F.nd[h1].nxt
        else:
            x = h2
            h2 = F.nd[h2].nxt
        F.nd[x].nxt = -1
        if tail < 0:
            head = x
        else:
            F.nd[tail].nxt = <int32_t>x
        tail = x
    # carry-propagate equal ranks
    prev = -1
    x = head
    nx = F.nd[x].nxt
    while nx >= 0:
        nn = F.nd[nx].nxt
        if F.nd[x].rank != F.nd[nx].rank or (nn >= 0 and F.nd[nn].rank == F.nd[x].rank):
            prev = x
            x = nx
        else:
            x = f_link(F, x, nx)
            F.nd[x].nxt = <int32_t>nn
            if prev < 0:
                head = x
            else:
                F.nd[prev].nxt = <int32_t>x
        nx = F.nd[x].nxt
    return head


cdef int64_t f_extract(Forest* F, int64_t head, int64_t* out) noexcept nogil:
    """Pop one item from the minimum root into ``out[0]``; returns the new head."""
    cdef int64_t x = head, p = -1, y = F.nd[head].nxt, q = head, it
    cdef SNode* n
    # roots are few (one per rank), so a scan beats maintaining minima
    while y >= 0:
        if f_nless(F, y, x):
            x = y
            p = q
        q = y
        y = F.nd[y].nxt
    n = &F.nd[x]
    it = F.inext[n.stail]
    if it == n.stail:
        n.stail = -1
    else:
        F.inext[n.stail] = F.inext[it]
    if F.flags[it] & BAD:
        F.live_bad -= 1
    F.flags[it] |= DEAD
    out[0] = it
    if n.stail >= 0:
        return head
    if n.left < 0:
        if p < 0:
            head = n.nxt
        else:
            F.nd[p].nxt = n.nxt
        f_free_node(F, x)
    else:
        f_defill(F, x)
    return head


cdef void* _aligned_grow(void* old, int64_t old_bytes, int64_t new_bytes) noexcept nogil:
    cdef void* p = aligned_alloc(64, ((new_bytes + 63) // 64) * 64)
    if p == NULL:
        return NULL
    if old != NULL:
        memcpy(p, old, old_bytes)
        free(old)
    return p


cdef int f_grow_nodes(Forest* F, int64_t nodes) noexcept nogil:
    """GIL-free node reservation; returns -1 when memory runs out."""
    cdef int64_t cap
    cdef void* p
    if F.n_nodes + nodes <= F.cap_nodes:
        return 0
    cap = max(2 * F.cap_nodes, F.n_nodes + nodes)
    p = _aligned_grow(F.nd, F.n_nodes * sizeof(SNode), cap * sizeof(SNode))
    if p == NULL:
        return -1
    F.nd = <SNode*>p
    F.cap_nodes = cap
    return 0


cdef int f_reserve(Forest* F, int64_t nodes, int64_t items) except -1:
    """Make room for ``nodes`` more nodes and ``items`` more items."""
    cdef int64_t cap
    cdef void* p
    if f_grow_nodes(F, nodes) < 0:
        raise MemoryError()
    if F.n_items + items > F.cap_items:
        cap = max(2 * F.cap_items, F.n_items + items)
        if cap >= 2 ** 31:
            raise MemoryError("soft heap item capacity exceeded")
        p = realloc(F.inext, cap * sizeof(int32_t))
        if p == NULL:
            raise MemoryError()
        F.inext = <int32_t*>p
        p = realloc(F.flags, cap)
        if p == NULL:
            raise MemoryError()
        F.flags = <uint8_t*>p
        if F.track:
            p = realloc(F.newbad, cap * sizeof(int32_t))
            if p == NULL:
                raise MemoryError()
            F.newbad = <int32_t*>p
        F.cap_items = cap
    return 0


cdef inline int64_t f_add_item(Forest* F) noexcept nogil:
    cdef int64_t it = F.n_items
    F.inext[it] = -1
    F.flags[it] = 0
    F.n_items += 1
    return it


# links during one insert or meld are bounded by the number of roots
DEF ROOT_SLACK = 160


@cython.final
cdef class _Forest:
    """Owns the memory of a :c:type:`Forest`."""

    cdef Forest F

    def __cinit__(self, double epsilon, bint track=False):
        self.F.t = <int>ceil(log2(3.0 / epsilon))
        self.F.track = track
        self.F.nd = NULL
        self.F.n_nodes = 0
        self.F.cap_nodes = 0
        self.F.free_head = -1
        self.F.inext = NULL
        self.F.flags = NULL
        self.F.n_items = 0
        self.F.cap_items = 0
        self.F.kw = NULL
        self.F.ks = NULL
        self.F.sh = 0
        self.F.base = 2 ** 62
        self.F.xslot = NULL
        self.F.live_bad = 0
        self.F.newbad = NULL
        self.F.n_newbad = 0

    def __dealloc__(self):
        free(self.F.nd)
        free(self.F.inext)
        free(self.F.flags)
        free(self.F.newbad)


cdef class SoftHeap:
    """Approximate min-priority queue with at most ``ceil(epsilon * n)``
    corrupted items after ``n`` insertions.

    ``extract_min`` returns ``(item, original_key, was_corrupted)``; the
    returned item has minimal *current* key, which may exceed its original
    key when it was pooled with other items."""

    cdef _Forest forest
    cdef int64_t head
    cdef list payload
    cdef double* keys
    cdef int64_t cap_keys
    cdef readonly double epsilon
    cdef readonly int64_t insertions
    cdef int64_t size

    def __cinit__(self, *args, **kwargs):
        self.keys = NULL
        self.cap_keys = 0

    def __init__(self, double epsilon=0.125):
        if not (0.0 < epsilon < 1.0):
            raise InvalidConfig(f"epsilon must lie in (0, 1), got {epsilon}")
        self.epsilon = epsilon
        self.forest = _Forest(epsilon, False)
        self.head = -1
        self.payload = []
        self.insertions = 0
        self.size = 0

    def __dealloc__(self):
        free(self.keys)

    def insert(self, key, item=None):
        cdef double k = key
        cdef Forest* F = &self.forest.F
        cdef int64_t it
        cdef void* p
        if k != k or k in (float("inf"), float("-inf")):
            raise InvalidInput(f"soft heap keys must be finite, got {key!r}")
        if self.insertions == self.cap_keys:
            self.cap_keys = max(16, 2 * self.cap_keys)
            p = realloc(self.keys, self.cap_keys * sizeof(double))
            if p == NULL:
                raise MemoryError()
            self.keys = <double*>p
        self.keys[self.insertions] = k
        F.kw = self.keys
        f_reserve(F, ROOT_SLACK, 1)
        it = f_add_item(F)
        self.payload.append(item)
        self.head = f_insert(F, self.head, it)
        self.insertions += 1
        self.size += 1
        return self

    def extract_min(self):
        cdef int64_t it
        cdef Forest* F = &self.forest.F
        if self.head < 0:
            raise EmptyStructure("extract_min on an empty soft heap")
        self.head = f_extract(F, self.head, &it)
        self.size -= 1
        item = self.payload[it]
        self.payload[it] = None
        return item, self.keys[it], bool(F.flags[it] & BAD)

    @property
    def corrupted_count(self):
        return self.forest.F.live_bad

    @property
    def t(self):
        return self.forest.F.t

    def __len__(self):
        return self.size

    def __bool__(self):
        return self.size > 0


# --------------------------------------------------------------------------
# Borůvka rounds with soft-heap selection
# --------------------------------------------------------------------------

cdef inline void _pool_add(int64_t* phead, int64_t* ptail, int64_t* pnext, uint8_t* inpool,
                           int64_t c, int64_t it) noexcept nogil:
    if inpool[it]:
        return
    inpool[it] = 1
    pnext[it] = -1
    if ptail[c] < 0:
        phead[c] = it
    else:
        pnext[ptail[c]] = it
    ptail[c] = it


def boruvka_soft_select(const int64_t[::1] eu, const int64_t[::1] ev, const double[::1] w,
                        Py_ssize_t L, double epsilon, int contract_rounds=2):
    """Returns ``(selected, stats)``. Raises :class:`GraphDisconnected`.

    The first ``contract_rounds`` rounds pick cheapest edges by a plain scan
    of the surviving edges (dropping internal ones as they appear); the
    heaps are then built over the contracted graph. After that, every component keeps a soft heap of its incident edge items (one per
    endpoint) and a pool of the items that have been corrupted. Items outside
    the pool carry their true key, so the heap's pick can only be beaten by
    a live outgoing edge in the pool; the pool is checked before a pick is
    accepted."""
    cdef Py_ssize_t E = eu.shape[0], k, nact, nnew, nsel = 0
    cdef int64_t e, it, c, ru, rv, r, best, cand, p, prev, pn, q, h
    # repairs re-insert a fresh copy of an item; each round makes at most
    # one per active component, so 2 L extra items suffice
    cdef int64_t cap = 2 * E + 2 * L + 1
    cdef _Forest forest = _Forest(epsilon, True)
    cdef Forest* F = &forest.F
    sec_arr = np.asarray(eu) * L + np.asarray(ev)
    cdef const int64_t[::1] sec = sec_arr
    xslot_arr = np.empty(2 * L + 1, dtype=np.int64)
    cdef int64_t[::1] xslot = xslot_arr
    cdef int64_t nx = 0
    par_arr = np.arange(L, dtype=np.int64)
    cdef int64_t[::1] par = par_arr
    cdef uint8_t[::1] rnk = np.zeros(L, dtype=np.uint8)
    cdef int64_t[::1] heap = np.full(L, -1, dtype=np.int64)
    cdef int64_t[::1] phead = np.full(L, -1, dtype=np.int64)
    cdef int64_t[::1] ptail = np.full(L, -1, dtype=np.int64)
    cdef int64_t[::1] pnext = np.empty(cap, dtype=np.int64)
    cdef uint8_t[::1] inpool = np.zeros(cap, dtype=np.uint8)
    cdef int64_t[::1] active = np.arange(L, dtype=np.int64)
    cdef int64_t[::1] chosen = np.full(L, -1, dtype=np.int64)
    cdef int64_t[::1] iptr = np.zeros(L + 1, dtype=np.int64)
    cdef int64_t[::1] inc = np.empty(max(2 * E, 1), dtype=np.int64)
    sel_arr = np.empty(max(L - 1, 0), dtype=np.int64)
    cdef int64_t[::1] sel = sel_arr
    cdef int64_t rounds = 0, discarded = 0, repairs = 0, verified = 0, corrupted_seen = 0
    cdef int64_t* pr = &par[0]
    cdef bint oom = False
    cdef int64_t* PH = &phead[0]
    cdef int64_t* PT = &ptail[0]
    cdef int64_t* PN = &pnext[0]
    cdef uint8_t* IP = &inpool[0]

    cdef int64_t[::1] rem = np.arange(E, dtype=np.int64)
    cdef int64_t nrem = E, contracted = 0, lost = -1
    cdef int64_t* cb = &chosen[0]
    cdef const double* wp = NULL
    cdef const int64_t* sp = NULL
    if E > 0:
        wp = &w[0]
        sp = &sec[0]
        F.kw = wp
        F.ks = sp

    nact = L
    with nogil:
        while contracted < contract_rounds and nact > 1:
            contracted += 1
            rounds += 1
            q = 0
            for k in range(nrem):
                e = rem[k]
                ru = _find(pr, eu[e])
                rv = _find(pr, ev[e])
                if ru == rv:
                    discarded += 1
                    continue
                rem[q] = e
                q += 1
                if cb[ru] < 0 or _eless(wp, sp, e, cb[ru]):
                    cb[ru] = e
                if cb[rv] < 0 or _eless(wp, sp, e, cb[rv]):
                    cb[rv] = e
            nrem = q
            for k in range(nact):
                if cb[active[k]] < 0:
                    lost = active[k]
                    break
            if lost >= 0:
                break
            for k in range(nact):
                c = active[k]
                e = cb[c]
                cb[c] = -1
                ru = _find(pr, eu[e])
                rv = _find(pr, ev[e])
                if ru != rv:
                    _union(pr, &rnk[0], ru, rv)
                    sel[nsel] = e
                    nsel += 1
            nnew = 0
            for k in range(nact):
                c = active[k]
                if _find(pr, c) == c:
                    active[nnew] = c
                    nnew += 1
            nact = nnew
    if lost >= 0:
        other = active[0] if active[0] != lost else active[1]
        raise GraphDisconnected(
            f"graph is disconnected: node {lost} cannot reach node {other}",
            (int(lost), int(other)))

    F.sh = 1
    F.base = 2 * E
    F.xslot = &xslot[0]
    # every item gets a leaf; links and meld carries need a little more
    f_reserve(F, cap + ROOT_SLACK, cap)
    # heaps are built per vertex, which keeps each one compact in memory,
    # and then melded into the heap of the vertex's component
    with nogil:
        q = 0
        for k in range(nrem):
            e = rem[k]
            if _find(pr, eu[e]) == _find(pr, ev[e]):
                discarded += 1
                continue
            rem[q] = e
            q += 1
            iptr[eu[e] + 1] += 1
            iptr[ev[e] + 1] += 1
        nrem = q
        for k in range(L):
            iptr[k + 1] += iptr[k]
        for k in range(nrem):
            e = rem[k]
            inc[iptr[eu[e]]] = 2 * e
            iptr[eu[e]] += 1
            inc[iptr[ev[e]]] = 2 * e + 1
            iptr[ev[e]] += 1
        for e in range(2 * E):
            f_add_item(F)
        if nact > 1:
            q = 0
            for k in range(L):
                h = -1
                while q < iptr[k]:
                    if f_grow_nodes(F, ROOT_SLACK) < 0:
                        oom = True
                        break
                    h = f_insert(F, h, inc[q])
                    q += 1
                if oom:
                    break
                r = _find(pr, k)
                if r == k:
                    heap[k] = f_meld(F, heap[k], h)
                elif h >= 0:
                    if f_grow_nodes(F, ROOT_SLACK) < 0:
                        oom = True
                        break
                    heap[r] = f_meld(F, heap[r], h)
        # a heap can already pool items while it is being built
        for k in range(F.n_newbad):
            it = F.newbad[k]
            e = it >> 1
            c = _find(pr, eu[e] if (it & 1) == 0 else ev[e])
            corrupted_seen += 1
            _pool_add(PH, PT, PN, IP, c, it)
        F.n_newbad = 0
    if oom:
        raise MemoryError()

    while nact > 1:
        rounds += 1
        for k in range(nact):
            c = active[k]
            cand = -1
            with nogil:
                while heap[c] >= 0:
                    heap[c] = f_extract(F, heap[c], &it)
                    e = f_slot(F, it)
                    if _find(pr, eu[e]) != _find(pr, ev[e]):
                        cand = it
                        break
                    discarded += 1
                # corruptions produced by the extractions belong to this component
                for q in range(F.n_newbad):
                    corrupted_seen += 1
                    _pool_add(PH, PT, PN, IP, c, F.newbad[q])
                F.n_newbad = 0
            if cand < 0:
                other = active[0] if active[0] != c else active[1]
                raise GraphDisconnected(
                    f"graph is disconnected: node {c} cannot reach node {other}",
                    (int(c), int(other)))
            with nogil:
                # verification against true keys
                best = cand
                prev = -1
                p = PH[c]
                if p >= 0:
                    verified += 1
                while p >= 0:
                    pn = PN[p]
                    e = f_slot(F, p)
                    if (F.flags[p] & DEAD) or _find(pr, eu[e]) == _find(pr, ev[e]):
                        IP[p] = 0
                        if prev < 0:
                            PH[c] = pn
                        else:
                            PN[prev] = pn
                        if pn < 0:
                            PT[c] = prev
                    else:
                        if f_iless(F, p, best):
                            best = p
                        prev = p
                    p = pn
                if best != cand:
                    # the pick stays available: put a fresh copy back
                    repairs += 1
                    if f_grow_nodes(F, ROOT_SLACK) < 0:
                        oom = True
                    else:
                        it = f_add_item(F)
                        xslot[nx] = f_slot(F, cand)
                        nx += 1
                        heap[c] = f_insert(F, heap[c], it)
                        for q in range(F.n_newbad):
                            corrupted_seen += 1
                            _pool_add(PH, PT, PN, IP, c, F.newbad[q])
                        F.n_newbad = 0
                chosen[c] = f_slot(F, best)
            if oom:
                raise MemoryError()
        nnew = 0
        with nogil:
            for k in range(nact):
                c = active[k]
                e = chosen[c]
                ru = _find(pr, eu[e])
                rv = _find(pr, ev[e])
                if ru == rv:
                    continue
                r = _union(pr, &rnk[0], ru, rv)
                q = rv if r == ru else ru
                sel[nsel] = e
                nsel += 1
                if f_grow_nodes(F, ROOT_SLACK) < 0:
                    oom = True
                    break
                heap[r] = f_meld(F, heap[ru], heap[rv])
                heap[q] = -1
                # splice the absorbed component's pool onto the survivor's
                if PH[q] >= 0:
                    if PT[r] < 0:
                        PH[r] = PH[q]
                    else:
                        PN[PT[r]] = PH[q]
                    PT[r] = PT[q]
                    PH[q] = -1
                    PT[q] = -1
                for pn in range(F.n_newbad):
                    corrupted_seen += 1
                    _pool_add(PH, PT, PN, IP, r, F.newbad[pn])
                F.n_newbad = 0
            for k in range(nact):
                if oom:
                    break
                c = active[k]
                if _find(pr, c) == c:
                    active[nnew] = c
                    nnew += 1
        if oom:
            raise MemoryError()
        nact = nnew
    stats = dict(rounds=rounds, contracted=contracted, discarded=discarded, repairs=repairs,
                 verified=verified, corrupted=corrupted_seen)
    return sel_arr[:nsel], stats
