"""Candidate graphs over a feature set, weighted by exponentiated cosine
dissimilarity.

Weights are ``exp(-cos(x_i, x_j))`` and therefore lie in ``[1/e, e]``;
smaller means more similar. Everything is computed in float64.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import ContractViolation, InvalidConfig, InvalidInput

NORM_EPS = 1e-12
DENSE_CAP = 4096
WEIGH_CHUNK = 1 << 22  # gathered feature entries per chunk


class WeightedEdge(NamedTuple):
    u: int
    v: int
    w: float


@dataclass(frozen=True)
class FeatureSet:
    """``L`` feature vectors of width ``D_model``, one per graph node."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data[:, None]
        if data.ndim != 2:
            raise ContractViolation(f"features must be a 2-D matrix, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ContractViolation(f"features need L >= 1 and D_model >= 1, got {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvalidInput("features contain non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def L(self) -> int:
        return self.data.shape[0]

    @property
    def D_model(self) -> int:
        return self.data.shape[1]


def as_features(x) -> FeatureSet:
    return x if isinstance(x, FeatureSet) else FeatureSet(np.asarray(x))


@dataclass(frozen=True)
class Topology:
    """Which node pairs are offered to the MST: ``dense``, ``grid`` or ``knn``."""

    kind: str = "dense"
    H: int = 0
    W: int = 0
    connectivity: int = 4
    k: int = 0

    @classmethod
    def dense(cls) -> "Topology":
        return cls("dense")

    @classmethod
    def grid(cls, H: int, W: int, connectivity: int = 4) -> "Topology":
        return cls("grid", H=H, W=W, connectivity=connectivity)

    @classmethod
    def knn(cls, k: int) -> "Topology":
        return cls("knn", k=k)

    @classmethod
    def parse(cls, text: str) -> "Topology":
        """Parse ``dense``, ``grid:HxW[:8]`` or ``knn:k``."""
        parts = text.strip().lower().split(":")
        try:
            if parts[0] == "dense" and len(parts) == 1:
                return cls.dense()
            if parts[0] == "grid" and len(parts) in (2, 3):
                H, W = (int(s) for s in parts[1].split("x"))
                conn = int(parts[2]) if len(parts) == 3 else 4
                return cls.grid(H, W, conn)
            if parts[0] == "knn" and len(parts) == 2:
                return cls.knn(int(parts[1]))
        except ValueError:
            pass
        raise InvalidConfig(f"cannot parse topology {text!r}; expected dense, grid:HxW[:4|8] or knn:k")

    def to_dict(self) -> dict:
        if self.kind == "grid":
            return {"kind": "grid", "H": self.H, "W": self.W, "connectivity": self.connectivity}
        if self.kind == "knn":
            return {"kind": "knn", "k": self.k}
        return {"kind": "dense"}

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(**d)

    def validate(self, L: int, dense_cap: int = DENSE_CAP) -> None:
        if self.kind == "dense":
            if L > dense_cap:
                raise InvalidConfig(
                    f"dense topology is capped at L <= {dense_cap} (got {L}); use grid or knn")
        elif self.kind == "grid":
            if self.connectivity not in (4, 8):
                raise InvalidConfig(f"grid connectivity must be 4 or 8, got {self.connectivity}")
            if self.H < 1 or self.W < 1 or self.H * self.W != L:
                raise InvalidConfig(f"grid {self.H}x{self.W} does not cover L={L} nodes")
        elif self.kind == "knn":
            if not (1 <= self.k < L):
                raise InvalidConfig(f"knn needs 1 <= k < L, got k={self.k}, L={L}")
        else:
            raise InvalidConfig(f"unknown topology kind {self.kind!r}")


class EdgeList:
    """Struct-of-arrays edge set; iterating yields :class:`WeightedEdge`."""

    __slots__ = ("u", "v", "w")

    def __init__(self, u, v, w):
        self.u = np.ascontiguousarray(u, dtype=np.int64)
        self.v = np.ascontiguousarray(v, dtype=np.int64)
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        if not (self.u.shape == self.v.shape == self.w.shape) or self.u.ndim != 1:
            raise ContractViolation("edge arrays must be 1-D and of equal length")

    @classmethod
    def from_edges(cls, edges: "EdgeList | Iterable[Sequence]") -> "EdgeList":
        """Accept an EdgeList or any iterable of ``(u, v, w)``; endpoints are
        put in canonical ``u < v`` order."""
        if isinstance(edges, EdgeList):
            return edges
        rows = [tuple(e) for e in edges]
        if not rows:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        arr_u = np.array([r[0] for r in rows], dtype=np.int64)
        arr_v = np.array([r[1] for r in rows], dtype=np.int64)
        arr_w = np.array([r[2] for r in rows], dtype=np.float64)
        lo, hi = np.minimum(arr_u, arr_v), np.maximum(arr_u, arr_v)
        return cls(lo, hi, arr_w)

    def check(self, L: int) -> None:
        if len(self) == 0:
            return
        if self.u.min() < 0 or self.v.max() >= L:
            raise ContractViolation(f"edge endpoint out of range for L={L}")
        if np.any(self.u == self.v):
            raise ContractViolation("self-loops are not allowed")
        if not np.all(np.isfinite(self.w)):
            raise InvalidInput("edge weights must be finite")

    def __len__(self) -> int:
        return self.u.shape[0]

    def __iter__(self) -> Iterator[WeightedEdge]:
        for a, b, c in zip(self.u.tolist(), self.v.tolist(), self.w.tolist()):
            yield WeightedEdge(a, b, c)

    def __getitem__(self, i) -> WeightedEdge:
        return WeightedEdge(int(self.u[i]), int(self.v[i]), float(self.w[i]))

    def __repr__(self) -> str:
        return f"EdgeList(n={len(self)})"


def cosine_dissimilarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ContractViolation(f"vectors differ in length: {a.shape[0]} vs {b.shape[0]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise InvalidInput("cosine_dissimilarity needs finite inputs")
    # elementwise products then one sum keeps the result symmetric in (a, b)
    dot = float(np.sum(a * b))
    denom = float(np.sqrt(np.sum(a * a))) * float(np.sqrt(np.sum(b * b))) + NORM_EPS
    return float(np.exp(-dot / denom))


def _row_norms(X: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", X, X))


def weigh_edges(features, pairs) -> EdgeList:
    """Weight each ``(u, v)`` pair; output order follows input order."""
    X = as_features(features).data.astype(np.float64, copy=False)
    P = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    L = X.shape[0]
    if P.size and (P.min() < 0 or P.max() >= L):
        raise ContractViolation(f"pair index out of range for L={L}")
    if P.shape[0] == 0:
        return EdgeList(np.empty(0), np.empty(0), np.empty(0))
    norms = _row_norms(X)
    pu, pv = P[:, 0], P[:, 1]
    w = np.empty(P.shape[0])
    # chunks bound the gathered row copies; each pair is computed the same way
    step = max(1, WEIGH_CHUNK // X.shape[1])
    for s in range(0, P.shape[0], step):
        a, b = pu[s:s + step], pv[s:s + step]
        dot = np.einsum("ij,ij->i", X[a], X[b])
        w[s:s + step] = np.exp(-dot / (norms[a] * norms[b] + NORM_EPS))
    return EdgeList(np.minimum(pu, pv), np.maximum(pu, pv), w)


def _dense_pairs(L: int) -> np.ndarray:
    iu, iv = np.triu_indices(L, k=1)
    return np.stack([iu, iv], axis=1).astype(np.int64)


def _grid_pairs(H: int, W: int, connectivity: int) -> np.ndarray:
    idx = np.arange(H * W, dtype=np.int64).reshape(H, W)
    chunks = [
        np.stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()], axis=1),
        np.stack([idx[:-1, :].ravel(), idx[1:, :].ravel()], axis=1),
    ]
    if connectivity == 8:
        chunks.append(np.stack([idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()], axis=1))
        chunks.append(np.stack([idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()], axis=1))
    P = np.concatenate(chunks, axis=0)
    P = np.sort(P, axis=1)
    return P


def _weight_block(X, norms, rows):
    dots = X[rows] @ X.T
    return np.exp(-dots / (np.outer(norms[rows], norms) + NORM_EPS))


def _knn_pairs(X: np.ndarray, k: int, block: int = 1024) -> np.ndarray:
    L = X.shape[0]
    norms = _row_norms(X)
    out = []
    for s in range(0, L, block):
        rows = np.arange(s, min(s + block, L))
        W = _weight_block(X, norms, rows)
        W[np.arange(rows.size), rows] = np.inf
        cand = np.argpartition(W, k - 1, axis=1)[:, :k] if k < L - 1 else np.argsort(W, axis=1)[:, :k]
        for r, cols in zip(rows, cand):
            out.extend((min(r, c), max(r, c)) for c in cols.tolist())
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def _connect(X: np.ndarray, P: np.ndarray, block: int = 1024) -> np.ndarray:
    """Add the lightest inter-component edge of every component, repeatedly,
    until the graph is connected."""
    L = X.shape[0]
    norms = _row_norms(X)
    pairs = {tuple(p) for p in P.tolist()}
    while True:
        arr = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
        g = coo_matrix((np.ones(len(arr)), (arr[:, 0], arr[:, 1])), shape=(L, L))
        ncomp, labels = connected_components(g, directed=False)
        if ncomp == 1:
            return arr
        best = {}
        for s in range(0, L, block):
            rows = np.arange(s, min(s + block, L))
            W = _weight_block(X, norms, rows)
            W[labels[rows][:, None] == labels[None, :]] = np.inf
            for r, wrow in zip(rows.tolist(), W):
                j = int(np.argmin(wrow))
                cand = (float(wrow[j]), min(r, j), max(r, j))
                c = labels[r]
                if c not in best or cand < best[c]:
                    best[c] = cand
        for _, a, b in best.values():
            pairs.add((a, b))


def build_candidate_edges(features, topology: Topology, dense_cap: int = DENSE_CAP) -> np.ndarray:
    """Node pairs offered to the MST, as an ``(E, 2)`` array of canonical
    ``u < v`` rows in lexicographic order, without duplicates."""
    fs = as_features(features)
    L = fs.L
    topology.validate(L, dense_cap)
    if L == 1:
        return np.empty((0, 2), dtype=np.int64)
    if topology.kind == "dense":
        # triu_indices is already canonical and lexicographic
        return _dense_pairs(L)
    if topology.kind == "grid":
        P = _grid_pairs(topology.H, topology.W, topology.connectivity)
    else:
        X = fs.data.astype(np.float64, copy=False)
        P = _connect(X, _unique_pairs(_knn_pairs(X, topology.k), L))
    return _unique_pairs(P, L)


def _unique_pairs(P: np.ndarray, L: int) -> np.ndarray:
    key = np.unique(P[:, 0] * L + P[:, 1])
    return np.stack([key // L, key % L], axis=1)
