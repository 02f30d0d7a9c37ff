"""State propagation over a rooted spanning tree with diagonal transitions.

For a node pair ``(j, i)`` the path weight is the elementwise product of
the transition vectors ``a_k`` over the nodes of the tree path from ``j``
to ``i``. Under the default ``edge_count`` convention the source is
excluded and the destination included (one factor per edge, so a chain
reduces to the ordinary recurrence ``h[n] = a[n] h[n-1] + u[n]``);
``interior_only`` drops the destination factor as well.

``scan_full`` computes ``h_i = sum_j S_ji * u_j`` over all nodes in
``O(L N)`` with an upward and a downward pass. ``scan_rooted`` keeps only
the upward pass, i.e. each node aggregates its own subtree.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ContractViolation, InvalidConfig, InvalidInput
from .mst import RootedTree

CONVENTIONS = ("edge_count", "interior_only")
MODES = ("full", "rooted")


@dataclass(frozen=True)
class ScanParams:
    """Per-node transition diagonals ``a`` and state injections ``u``
    (both ``L x N``). The model keeps ``a`` inside ``(0, 1)``; the scans
    themselves accept any finite values."""

    a: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a)
        u = np.asarray(self.u)
        if a.ndim == 1:
            a = a[:, None]
        if u.ndim == 1:
            u = u[:, None]
        if a.shape != u.shape or a.ndim != 2:
            raise ContractViolation(f"a and u must share an L x N shape, got {a.shape} and {u.shape}")
        dtype = np.result_type(a.dtype, u.dtype, np.float32)
        if dtype not in (np.float32, np.float64):
            dtype = np.float64
        a = np.ascontiguousarray(a, dtype=dtype)
        u = np.ascontiguousarray(u, dtype=dtype)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(u))):
            raise InvalidInput("scan parameters must be finite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "u", u)

    @property
    def L(self) -> int:
        return self.a.shape[0]

    @property
    def N(self) -> int:
        return self.a.shape[1]

    def is_contractive(self) -> bool:
        return bool(np.all(self.a > 0) and np.all(self.a < 1))


@dataclass(frozen=True)
class GradientBundle:
    d_a: np.ndarray
    d_u: np.ndarray


def _params(params) -> ScanParams:
    if isinstance(params, ScanParams):
        return params
    a, u = params
    return ScanParams(a, u)


def _check(tree: RootedTree, p: ScanParams, convention: str) -> None:
    if convention not in CONVENTIONS:
        raise InvalidConfig(f"path convention must be one of {CONVENTIONS}, got {convention!r}")
    if p.L != tree.L:
        raise ContractViolation(f"params have {p.L} rows but the tree has {tree.L} nodes")


def path_weight(tree: RootedTree, a, j: int, i: int, convention: str = "edge_count") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if convention not in CONVENTIONS:
        raise InvalidConfig(f"path convention must be one of {CONVENTIONS}, got {convention!r}")
    nodes = tree.path(j, i)
    out = np.ones(a.shape[1])
    if j == i:
        return out
    inner = nodes[1:] if convention == "edge_count" else nodes[1:-1]
    for k in inner:
        out = out * a[k]
    return out


def scan_dense_oracle(tree: RootedTree, params, convention: str = "edge_count") -> np.ndarray:
    """Reference semantics of the full scan, ``O(L^2 N)``."""
    p = _params(params)
    _check(tree, p, convention)
    return _backend.kernels.dense_oracle(tree.indptr, tree.indices, p.a, p.u,
                                         convention == "edge_count")


def _forward(tree, p, full, convention):
    return _backend.kernels.scan_forward(tree.order, tree.parent, tree.level_ptr, p.a, p.u,
                                         full, convention == "edge_count")


def _split_channels(N: int, threads: int) -> list[slice]:
    threads = max(1, min(threads, N))
    bounds = np.linspace(0, N, threads + 1).astype(int)
    return [slice(bounds[t], bounds[t + 1]) for t in range(threads)]


def _threaded_forward(tree, p, full, convention, threads):
    # channels are independent, so column blocks can run concurrently
    blocks = _split_channels(p.N, threads)
    kern = _backend.kernels

    def run(sl):
        a = np.ascontiguousarray(p.a[:, sl])
        u = np.ascontiguousarray(p.u[:, sl])
        return kern.scan_forward(tree.order, tree.parent, tree.level_ptr, a, u,
                                 full, convention == "edge_count")[0]

    with ThreadPoolExecutor(len(blocks)) as ex:
        parts = list(ex.map(run, blocks))
    return np.concatenate(parts, axis=1)


def scan_rooted(tree: RootedTree, params, convention: str = "edge_count") -> np.ndarray:
    """Subtree aggregation, one upward pass (children before parents)."""
    p = _params(params)
    _check(tree, p, convention)
    return _forward(tree, p, False, convention)[0]


def scan_full(tree: RootedTree, params, convention: str = "edge_count", threads: int = 1) -> np.ndarray:
    """All-node aggregation by re-rooting; independent of ``tree.root``."""
    p = _params(params)
    _check(tree, p, convention)
    if threads > 1 and p.N > 1:
        return _threaded_forward(tree, p, True, convention, threads)
    return _forward(tree, p, True, convention)[0]


def scan(tree: RootedTree, params, mode: str = "full", convention: str = "edge_count") -> np.ndarray:
    if mode == "full":
        return scan_full(tree, params, convention)
    if mode == "rooted":
        return scan_rooted(tree, params, convention)
    raise InvalidConfig(f"scan mode must be one of {MODES}, got {mode!r}")


def scan_with_grad(tree: RootedTree, params, mode: str = "full", convention: str = "edge_count"):
    """Forward pass plus a closure computing the backward pass.

    Returns ``(h, backward)`` where ``backward(grad_h)`` yields a
    :class:`GradientBundle`; the forward intermediates are reused."""
    p = _params(params)
    _check(tree, p, convention)
    if mode not in MODES:
        raise InvalidConfig(f"scan mode must be one of {MODES}, got {mode!r}")
    full = mode == "full"
    h, up, C, D = _forward(tree, p, full, convention)

    def backward(grad_h) -> GradientBundle:
        g = np.ascontiguousarray(grad_h, dtype=p.a.dtype)
        if g.shape != p.a.shape:
            raise ContractViolation(f"grad_h has shape {g.shape}, expected {p.a.shape}")
        da, du = _backend.kernels.scan_backward(tree.order, tree.parent, tree.level_ptr,
                                                p.a, up, C, D, g, full,
                                                convention == "edge_count")
        return GradientBundle(da, du)

    return h, backward


def scan_full_backward(tree: RootedTree, params, grad_h, convention: str = "edge_count") -> GradientBundle:
    """Gradients of a scalar loss w.r.t. ``a`` and ``u`` given ``dL/dh``."""
    return scan_with_grad(tree, params, "full", convention)[1](grad_h)


def scan_rooted_backward(tree: RootedTree, params, grad_h, convention: str = "edge_count") -> GradientBundle:
    return scan_with_grad(tree, params, "rooted", convention)[1](grad_h)
