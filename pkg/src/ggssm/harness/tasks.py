"""Seeded synthetic tasks.

``tree_diffusion``: every instance has its own hidden uniform random tree
(decoded from a random Prüfer sequence). The features follow a random walk
on the unit sphere along that tree, so neighbours are similar and the
cosine-weighted minimum spanning tree tends to recover it. Optional
``noise_scale`` channels carry independent per-node noise that the teacher
reads its inputs from. Targets come from the hidden teacher layer, with
states aggregated over the hidden tree by the dense oracle, so a node's
target depends on what the rest of its tree holds.

``chain_copy``: targets are the inputs delayed by ``lag`` positions.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, InvalidConfig
from ..graph_build import EdgeList
from ..mst import RootedTree, chain_tree, root_tree
from ..ssm_layer import LayerWeights, compute_selective_params, discretize, output_head
from ..tree_scan import ScanParams, scan_dense_oracle

KINDS = ("tree_diffusion", "chain_copy")
NOISE_SCALE = 0.0


@dataclass
class SyntheticTask:
    seed: int
    L: int
    D_model: int
    N: int
    kind: str
    inputs: np.ndarray
    targets: np.ndarray
    val_inputs: np.ndarray
    val_targets: np.ndarray
    teacher: LayerWeights | None = None
    trees: list[RootedTree] = field(default_factory=list)
    val_trees: list[RootedTree] = field(default_factory=list)
    norm_epsilon: float = 1e-6


def prufer_to_edges(seq, L: int) -> list[tuple[int, int]]:
    """Decode a Prüfer sequence of length ``L - 2`` into the edges of its tree."""
    seq = [int(s) for s in seq]
    if L < 2:
        return []
    if len(seq) != L - 2 or any(not (0 <= s < L) for s in seq):
        raise ContractViolation(f"a Prüfer sequence for L={L} needs L-2 entries in [0, L)")
    degree = [1] * L
    for s in seq:
        degree[s] += 1
    leaves = [i for i in range(L) if degree[i] == 1]
    heapq.heapify(leaves)
    edges = []
    for s in seq:
        leaf = heapq.heappop(leaves)
        edges.append((min(leaf, s), max(leaf, s)))
        degree[s] -= 1
        if degree[s] == 1:
            heapq.heappush(leaves, s)
    a, b = heapq.heappop(leaves), heapq.heappop(leaves)
    edges.append((a, b))
    return sorted(edges)


def random_tree(rng: np.random.Generator, L: int, root: int = 0) -> RootedTree:
    """Uniformly random labelled tree on ``L`` nodes."""
    seq = rng.integers(0, L, size=max(L - 2, 0))
    pairs = np.array(prufer_to_edges(seq, L), dtype=np.int64).reshape(-1, 2)
    el = EdgeList(pairs[:, 0], pairs[:, 1], np.ones(len(pairs)))
    return root_tree(el, root, L)


def tree_features(rng, tree: RootedTree, D_model: int, step: float,
                  noise_scale: float = NOISE_SCALE) -> np.ndarray:
    k = noise_dims(D_model, noise_scale)
    walk = _sphere_walk(rng, tree, D_model - k, step)
    return np.concatenate([walk, noise_scale * rng.normal(size=(tree.L, k))], axis=1)


def _sphere_walk(rng, tree: RootedTree, D: int, step: float) -> np.ndarray:
    X = np.empty((tree.L, D))
    x0 = rng.normal(size=D)
    X[tree.root] = x0 / np.linalg.norm(x0)
    for c in tree.order[1:].tolist():
        v = X[tree.parent[c]] + step * rng.normal(size=D)
        X[c] = v / np.linalg.norm(v)
    return X


def noise_dims(D_model: int, noise_scale: float = NOISE_SCALE) -> int:
    return 0 if D_model < 2 or noise_scale <= 0 else max(1, D_model // 4)


def teacher_weights(rng: np.random.Generator, D_model: int, N: int,
                    noise_scale: float = NOISE_SCALE) -> LayerWeights:
    # slow transitions (a around 0.7 to 0.95) so that far nodes still matter
    s = 1.0 / np.sqrt(D_model)
    k = noise_dims(D_model, noise_scale)
    w_x = rng.normal(0, s, D_model)
    if k:
        w_x[:D_model - k] = 0.0
        w_x[D_model - k:] = rng.normal(0, 1.0 / (noise_scale * np.sqrt(k)), k)
    return LayerWeights(
        A_log=np.log(np.expm1(rng.uniform(0.1, 0.4, N))),
        W_delta=rng.normal(0, 0.1 * s, D_model),
        W_B=rng.normal(0, s, (N, D_model)),
        W_C=rng.normal(0, s, (N, D_model)),
        bias_delta=float(np.log(np.expm1(0.5))),
        D_skip=np.zeros(D_model),
        out_proj=rng.normal(0, 1.0 / np.sqrt(N), (N, D_model)),
        w_x=w_x,
    )


def teacher_targets(x, tree: RootedTree, teacher: LayerWeights, norm_epsilon: float = 1e-6):
    delta, B_in, C_out = compute_selective_params(x, teacher)
    params: ScanParams = discretize(teacher.A_log, delta, B_in, x, teacher.w_x)
    h = scan_dense_oracle(tree, params)
    return output_head(h, C_out, teacher.out_proj, teacher.D_skip, np.asarray(x), norm_epsilon)


def gen_tree_task(seed: int, L: int, D_model: int = 16, N: int = 4, kind: str = "tree_diffusion",
                  n_train: int = 128, n_val: int = 16, step: float = 0.4, lag: int = 1,
                  noise_scale: float = NOISE_SCALE) -> SyntheticTask:
    if min(L, D_model, N, n_train, n_val) < 1:
        raise ContractViolation("task sizes must be >= 1")
    if kind not in KINDS:
        raise InvalidConfig(f"task kind must be one of {KINDS}, got {kind!r}")
    rng = np.random.default_rng(seed)
    if kind == "chain_copy":
        X = rng.normal(size=(n_train + n_val, L, D_model))
        Y = np.zeros_like(X)
        if lag < L:
            Y[:, lag:] = X[:, :L - lag]
        chain = chain_tree(L)
        return SyntheticTask(seed, L, D_model, N, kind, X[:n_train], Y[:n_train],
                             X[n_train:], Y[n_train:], None,
                             [chain] * n_train, [chain] * n_val)
    teacher = teacher_weights(rng, D_model, N, noise_scale)
    trees, xs, ys = [], [], []
    for _ in range(n_train + n_val):
        t = random_tree(rng, L, int(rng.integers(L)))
        x = tree_features(rng, t, D_model, step, noise_scale)
        trees.append(t)
        xs.append(x)
        ys.append(teacher_targets(x, t, teacher))
    X, Y = np.stack(xs), np.stack(ys)
    return SyntheticTask(seed, L, D_model, N, kind, X[:n_train], Y[:n_train], X[n_train:],
                         Y[n_train:], teacher, trees[:n_train], trees[n_train:])
