import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ggssm.errors import ContractViolation, InvalidConfig
from ggssm.graph_build import Topology
from ggssm.harness.gradcheck import central_diff
from ggssm.harness.tasks import random_tree
from ggssm.mst import chain_tree
from ggssm.ssm_layer import (LayerConfig, LayerWeights, build_tree, compute_selective_params,
                             discretize, layer_backward, layer_forward, layer_forward_trace,
                             output_head, rms_normalize, sequential_scan_1d, softplus)
from ggssm.tree_scan import ScanParams, scan_dense_oracle


def test_softplus_zero_delta():
    w = LayerWeights.init(3, 2, seed=0)
    w = replace(w, bias_delta=0.0)
    delta, _, _ = compute_selective_params(np.zeros((2, 3)), w)
    np.testing.assert_allclose(delta, math.log(2), rtol=1e-15)


def test_B_in_picks_column():
    w = LayerWeights.init(3, 3, seed=0)
    w = replace(w, W_B=np.arange(9.0).reshape(3, 3))
    _, B, _ = compute_selective_params(np.array([[1.0, 0, 0]]), w)
    assert B[0].tolist() == [0.0, 3.0, 6.0]


def test_selective_params_recomputed(rng):
    w = LayerWeights.init(5, 3, seed=1)
    x = rng.normal(size=(7, 5))
    delta, B, C = compute_selective_params(x, w)
    for i in range(7):
        z = sum(w.W_delta[d] * x[i, d] for d in range(5)) + w.bias_delta
        assert delta[i] == pytest.approx(np.clip(math.log1p(math.exp(z)), 1e-4, 10), rel=1e-12)
        for n in range(3):
            assert B[i, n] == pytest.approx(sum(w.W_B[n, d] * x[i, d] for d in range(5)), rel=1e-12)
            assert C[i, n] == pytest.approx(sum(w.W_C[n, d] * x[i, d] for d in range(5)), rel=1e-12)


def test_selective_params_shape_error():
    with pytest.raises(ContractViolation):
        compute_selective_params(np.ones((2, 4)), LayerWeights.init(3, 2))


def test_discretize_half():
    A_log = np.array([math.log(math.expm1(1.0))])  # softplus(A_log) = 1
    p = discretize(A_log, [math.log(2)], [[1.0]], [[1.0]])
    assert p.a[0, 0] == pytest.approx(0.5, rel=1e-15)


def test_discretize_small_delta():
    p = discretize(np.zeros(2), [1e-9], [[1.0, 2.0]], [[3.0]])
    assert np.all(p.a > 1 - 1e-8) and np.all(np.abs(p.u) < 1e-8)


def test_discretize_recomputed(rng):
    L, N, D = 6, 3, 4
    A_log, delta = rng.normal(size=N), rng.uniform(0.1, 2, L)
    B, x, w_x = rng.normal(size=(L, N)), rng.normal(size=(L, D)), rng.normal(size=D)
    p = discretize(A_log, delta, B, x, w_x)
    for i in range(L):
        s = sum(w_x[d] * x[i, d] for d in range(D))
        for n in range(N):
            assert p.a[i, n] == pytest.approx(math.exp(-delta[i] * math.log1p(math.exp(A_log[n]))), rel=1e-13)
            assert p.u[i, n] == pytest.approx(delta[i] * B[i, n] * s, rel=1e-12)
    # no w_x means the channel mean
    q = discretize(A_log, delta, B, x)
    np.testing.assert_allclose(q.u, delta[:, None] * B * x.mean(axis=1)[:, None], rtol=1e-12)


def test_discretize_rejects_non_positive_delta():
    with pytest.raises(ContractViolation):
        discretize(np.zeros(1), [0.0], [[1.0]], [[1.0]])


def test_a_strictly_inside_unit_interval():
    rng = np.random.default_rng(0)
    A_log = rng.normal(0, 3, 1000)
    delta = np.clip(softplus(rng.normal(0, 4, 1000)), 1e-4, 10)
    p = discretize(A_log, delta, np.ones((1000, 1000)), np.ones((1000, 1)))
    assert p.a.size == 10 ** 6
    assert np.all(p.a > 0) and np.all(p.a < 1)


def test_rms_normalize_cases(rng):
    assert rms_normalize(np.zeros(4)).tolist() == [0.0] * 4
    np.testing.assert_allclose(rms_normalize(np.full(5, 3.0), 1e-300), np.ones(5), rtol=1e-15)
    h = rng.normal(size=(10, 8))
    out = rms_normalize(h, 1e-6)
    rms = np.sqrt(np.mean(out ** 2, axis=1))
    np.testing.assert_allclose(rms, np.sqrt(np.mean(h ** 2, axis=1) / (np.mean(h ** 2, axis=1) + 1e-6)))
    with pytest.raises(InvalidConfig):
        rms_normalize(h, 0.0)


def test_sequential_scan_cases():
    assert sequential_scan_1d(ScanParams([[0.3]], [[2.0]])).tolist() == [[2.0]]
    u = np.array([[1.0], [-2.0], [3.0]])
    assert sequential_scan_1d(ScanParams(np.zeros((3, 1)), u)).tolist() == u.tolist()
    h = sequential_scan_1d(ScanParams(np.full((3, 1), 0.5), np.ones((3, 1))))
    assert h[:, 0].tolist() == [1.0, 1.5, 1.75]


def test_single_node_layer(backend):
    w = LayerWeights.init(3, 4, seed=2)
    x = np.array([[0.3, -1.0, 2.0]])
    delta, B, C = compute_selective_params(x, w)
    u = discretize(w.A_log, delta, B, x, w.w_x).u
    want = output_head(u, C, w.out_proj, w.D_skip, x)
    tr = layer_forward_trace(x, w)
    np.testing.assert_allclose(tr.y, want, rtol=1e-13)
    assert tr.spanning_tree is not None and len(tr.spanning_tree.edges) == 0


def test_tiny_delta_leaves_skip_path(backend, rng):
    w = LayerWeights.init(4, 3, seed=3)
    w = replace(w, W_delta=np.zeros(4), bias_delta=-60.0)
    x = rng.normal(size=(12, 4))
    y = layer_forward(x, w)
    # u is about 1e-4 times B x, so normalised states stay order one; only
    # the skip term is checked here once the head is removed
    w0 = replace(w, out_proj=np.zeros_like(w.out_proj))
    np.testing.assert_allclose(layer_forward(x, w0), x * w.D_skip, rtol=1e-15)
    assert np.all(np.isfinite(y))


def test_hidden_states_match_dense_oracle(backend, rng):
    w = LayerWeights.init(6, 4, seed=4)
    x = rng.normal(size=(32, 6))
    tr = layer_forward_trace(x, w)
    np.testing.assert_allclose(tr.h, scan_dense_oracle(tr.tree, tr.params), rtol=1e-10, atol=1e-12)


def distinct_x(seed, L, D):
    from ggssm.harness.ablate import distinct_instance
    return distinct_instance(np.random.default_rng(seed), L, D, Topology.dense())[0]


def test_mst_algorithm_invariance(backend):
    x = distinct_x(0, 48, 5)
    w = LayerWeights.init(5, 4, seed=5)
    ys = [layer_forward(x, w, LayerConfig(mst_algorithm=a)).tobytes()
          for a in ("kruskal", "prim", "boruvka_soft")]
    assert ys[0] == ys[1] == ys[2]


def test_chain_fidelity(backend, rng):
    L, D = 16, 3
    x = rng.normal(size=(L, D))
    w = LayerWeights.init(D, 4, seed=6)
    tr = layer_forward_trace(x, w, LayerConfig(scan_mode="rooted"), tree=chain_tree(L))
    np.testing.assert_allclose(tr.h, sequential_scan_1d(tr.params), rtol=1e-12, atol=1e-14)


def test_chain_topology_via_grid(backend, rng):
    # a 1 x L grid only offers path edges, so the layer scans the chain
    # itself; rooted at node 0 the recurrence runs from the far end
    L = 10
    x = rng.normal(size=(L, 3))
    cfg = LayerConfig(topology=Topology.grid(1, L), scan_mode="rooted")
    tr = layer_forward_trace(x, LayerWeights.init(3, 2, seed=1), cfg)
    assert tr.tree.parent.tolist() == [-1] + list(range(L - 1))
    rev = ScanParams(tr.params.a[::-1], tr.params.u[::-1])
    np.testing.assert_allclose(tr.h, sequential_scan_1d(rev)[::-1], rtol=1e-12, atol=1e-14)


@given(st.integers(2, 30), st.integers(0, 2 ** 31))
def test_root_policy_invariance(L, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(L, 4))
    w = LayerWeights.init(4, 3, seed=seed % 1000)
    a = layer_forward(x, w, LayerConfig(root_policy="node_zero"))
    b = layer_forward(x, w, LayerConfig(root_policy="max_degree"))
    assert np.max(np.abs(a - b)) <= 1e-10 * max(np.max(np.abs(a)), 1e-300)


@given(st.integers(2, 30), st.integers(0, 2 ** 31))
def test_permutation_equivariance(L, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(L, 4))
    w = LayerWeights.init(4, 3, seed=seed % 1000)
    perm = rng.permutation(L)
    y = layer_forward(x, w)
    yp = layer_forward(x[perm], w)
    # the tie-break in (w, u, v) can differ after relabelling only on exact ties
    np.testing.assert_allclose(yp, y[perm], rtol=1e-9, atol=1e-12)


def test_layer_deterministic(backend, rng):
    x = rng.normal(size=(40, 5))
    w = LayerWeights.init(5, 4, seed=7)
    assert layer_forward(x, w).tobytes() == layer_forward(x, w).tobytes()


def test_layer_backward_finite_differences(backend, rng):
    L, D, N = 9, 3, 4
    x = rng.normal(size=(L, D))
    w = LayerWeights.init(D, N, seed=8)
    tree = random_tree(rng, L, 0)
    G = rng.normal(size=(L, D))
    tr = layer_forward_trace(x, w, tree=tree)
    g = layer_backward(tr, w, G)
    fd_w = central_diff(lambda v: np.sum(G * layer_forward(x, w.unflat(v), tree=tree)), w.flat())
    fd_x = central_diff(lambda v: np.sum(G * layer_forward(v, w, tree=tree)), x.copy())
    assert np.linalg.norm(g.weights.flat() - fd_w) <= 1e-6 * np.linalg.norm(fd_w)
    assert np.linalg.norm(g.x - fd_x) <= 1e-6 * np.linalg.norm(fd_x)


def test_weights_roundtrip_and_validation():
    w = LayerWeights.init(4, 3, seed=9)
    assert LayerWeights.from_tensors(w.to_tensors()).flat().tobytes() == w.flat().tobytes()
    assert w.unflat(w.flat()).flat().tobytes() == w.flat().tobytes()
    with pytest.raises(ContractViolation):
        replace(w, A_log=np.zeros(5))
    with pytest.raises(ContractViolation):
        replace(w, D_skip=np.full(4, np.inf))
    with pytest.raises(ContractViolation):
        LayerWeights.from_tensors({"A_log": np.zeros(3)})
    with pytest.raises(ContractViolation):
        LayerWeights.init(0, 3)


@pytest.mark.parametrize("kw", [dict(mst_algorithm="x"), dict(scan_mode="x"),
                                dict(path_convention="x"), dict(norm_epsilon=0.0),
                                dict(root_policy="x")])
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        LayerConfig(**kw)


def test_config_roundtrip():
    cfg = LayerConfig(topology="knn:3", mst_algorithm="prim", scan_mode="rooted")
    assert LayerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(InvalidConfig):
        LayerConfig.from_dict({"colour": "red"})
