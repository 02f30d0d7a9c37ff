"""Analytic gradients versus central finite differences.

Errors are normwise: ``|g - g_fd| / max(|g|, |g_fd|)`` over each gradient
block, so a block whose entries are all tiny cannot fail on round-off.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..graph_build import EdgeList
from ..mst import RootedTree, chain_tree, root_tree
from ..ssm_layer import (LayerConfig, LayerWeights, layer_backward, layer_forward_trace,
                         output_head, output_head_backward)
from ..tree_scan import ScanParams, scan_full, scan_full_backward
from .tasks import random_tree

SHAPES = ("chain", "star", "random")
TOLERANCE = 1e-6
FD_STEP = 1e-5
# a node whose state is near zero makes the RMS normalisation sharply curved
# there and a fixed-step difference quotient inaccurate; such points are redrawn
MIN_RMS_FRACTION = 0.25
MAX_REDRAWS = 100


def well_conditioned(h) -> bool:
    rms = np.sqrt(np.mean(np.asarray(h) ** 2, axis=1))
    return bool(rms.min() >= MIN_RMS_FRACTION * np.median(rms))


def rel_error(g, g_fd) -> float:
    g = np.ravel(np.asarray(g, dtype=np.float64))
    g_fd = np.ravel(np.asarray(g_fd, dtype=np.float64))
    scale = max(np.linalg.norm(g), np.linalg.norm(g_fd))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(g - g_fd) / scale)


def central_diff(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Gradient of the scalar ``f`` at ``x``, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + step
        hi = f(x)
        flat[k] = old - step
        lo = f(x)
        flat[k] = old
        gf[k] = (hi - lo) / (2 * step)
    return g


def star_tree(L: int, center: int = 0) -> RootedTree:
    others = np.array([i for i in range(L) if i != center], dtype=np.int64)
    el = EdgeList(np.full(len(others), center), others, np.ones(len(others)))
    return root_tree(el, center, L)


def make_tree(shape: str, L: int, rng: np.random.Generator) -> RootedTree:
    root = int(rng.integers(L))
    if shape == "chain":
        perm = rng.permutation(L)
        el = EdgeList(perm[:-1], perm[1:], np.ones(L - 1))
        return root_tree(el, root, L)
    if shape == "star":
        return star_tree(L, root)
    return random_tree(rng, L, root)


def check_scan(tree: RootedTree, a, u, G, step: float = FD_STEP) -> dict[str, float]:
    gb = scan_full_backward(tree, ScanParams(a, u), G)
    fd_a = central_diff(lambda v: float(np.sum(G * scan_full(tree, ScanParams(v, u)))), a, step)
    fd_u = central_diff(lambda v: float(np.sum(G * scan_full(tree, ScanParams(a, v)))), u, step)
    return {"d_a": rel_error(gb.d_a, fd_a), "d_u": rel_error(gb.d_u, fd_u)}


def check_head(h, C, out_proj, D_skip, x, G, epsilon: float = 1e-6,
               step: float = FD_STEP) -> dict[str, float]:
    args = [h, C, out_proj, D_skip, x]
    analytic = output_head_backward(h, C, out_proj, D_skip, x, epsilon, G)
    errs = {}
    for k, name in enumerate(("d_h", "d_C", "d_out_proj", "d_D_skip", "d_x")):
        def f(v, k=k):
            a = list(args)
            a[k] = v
            return float(np.sum(G * output_head(*a, epsilon)))
        errs[name] = rel_error(analytic[k], central_diff(f, args[k], step))
    return errs


def check_layer(x, w: LayerWeights, tree: RootedTree, G, step: float = FD_STEP) -> dict[str, float]:
    """Weights and input gradients of ``sum(G * layer(x))`` with the tree held fixed."""
    cfg = LayerConfig()
    grads = layer_backward(layer_forward_trace(x, w, cfg, tree), w, G)

    def f_w(vec):
        return float(np.sum(G * layer_forward_trace(x, w.unflat(vec), cfg, tree).y))

    def f_x(v):
        return float(np.sum(G * layer_forward_trace(v, w, cfg, tree).y))

    return {"d_weights": rel_error(grads.weights.flat(), central_diff(f_w, w.flat(), step)),
            "d_x_layer": rel_error(grads.x, central_diff(f_x, x, step))}


def layer_point(rng: np.random.Generator, x, tree: RootedTree, N: int) -> LayerWeights:
    """Random weights around the default init with the states scaled to unit
    median RMS, well above the normalisation epsilon."""
    for _ in range(MAX_REDRAWS):
        w = LayerWeights.init(x.shape[1], N, seed=int(rng.integers(2**31)))
        w = w.unflat(w.flat() + 0.1 * rng.normal(size=w.flat().size))
        h = layer_forward_trace(x, w, LayerConfig(), tree).h
        med = float(np.median(np.sqrt(np.mean(h ** 2, axis=1))))
        if med > 0:
            w = replace(w, w_x=w.w_x / med)
            if well_conditioned(h):
                break
    return w


def hand_case() -> dict:
    """Two nodes, one channel: ``h0 = u0 + a0 * u1`` so with loss ``h0``,
    ``dL/da0 = u1`` and ``dL/du1 = a0``."""
    tree = chain_tree(2, root=0)
    a = np.array([[0.5], [0.25]])
    u = np.array([[1.0], [2.0]])
    gb = scan_full_backward(tree, ScanParams(a, u), np.array([[1.0], [0.0]]))
    got = {"d_a0": float(gb.d_a[0, 0]), "d_u1": float(gb.d_u[1, 0])}
    want = {"d_a0": 2.0, "d_u1": 0.5}
    ok = all(abs(got[k] - want[k]) <= 1e-12 for k in want)
    return {"got": got, "expected": want, "passed": ok}


@dataclass
class GradcheckReport:
    trials: list[dict]
    hand: dict
    tol: float
    max_rel_error: float = 0.0
    worst: str = ""
    passed: bool = field(default=False)

    def to_dict(self) -> dict:
        return asdict(self)


def gradcheck_suite(trials: int = 100, seed: int = 0, L_range: tuple[int, int] = (2, 24),
                    N_choices=(1, 2, 4), D_choices=(1, 3, 4), step: float = FD_STEP,
                    tol: float = TOLERANCE) -> GradcheckReport:
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        shape = SHAPES[t % len(SHAPES)]
        L = int(rng.integers(L_range[0], L_range[1] + 1))
        N = int(rng.choice(N_choices))
        D = int(rng.choice(D_choices))
        tree = make_tree(shape, L, rng)
        a = rng.uniform(0.2, 0.95, (L, N))
        u = rng.normal(size=(L, N))
        errs = check_scan(tree, a, u, rng.normal(size=(L, N)), step)
        # with one state channel the normalised head is sign(h) and its
        # gradient in h sits at round-off level, so the head checks use >= 2
        Nh = max(N, 2)
        x = rng.normal(size=(L, D))
        h = rng.normal(size=(L, Nh))
        for _ in range(MAX_REDRAWS):
            if well_conditioned(h):
                break
            h = rng.normal(size=(L, Nh))
        errs.update(check_head(h, rng.normal(size=(L, Nh)), rng.normal(size=(Nh, D)),
                               rng.normal(size=D), x, rng.normal(size=(L, D)), step=step))
        w = layer_point(rng, x, tree, Nh)
        errs.update(check_layer(x, w, tree, rng.normal(size=(L, D)), step))
        worst = max(errs, key=errs.get)
        rows.append({"trial": t, "shape": shape, "L": L, "N": N, "N_head": Nh, "D_model": D,
                     "errors": errs, "max_rel_error": errs[worst],
                     "passed": errs[worst] < tol})
    hand = hand_case()
    top = max(rows, key=lambda r: r["max_rel_error"])
    report = GradcheckReport(rows, hand, tol)
    report.max_rel_error = top["max_rel_error"]
    report.worst = f"trial {top['trial']} {max(top['errors'], key=top['errors'].get)}"
    report.passed = hand["passed"] and all(r["passed"] for r in rows)
    return report
