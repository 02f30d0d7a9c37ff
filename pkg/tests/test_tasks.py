import itertools
from collections import Counter

import numpy as np
import pytest

from ggssm.errors import ContractViolation, InvalidConfig
from ggssm.harness.tasks import (gen_tree_task, noise_dims, prufer_to_edges, random_tree,
                                 teacher_targets)
from ggssm.ssm_layer import compute_selective_params, discretize, output_head
from ggssm.tree_scan import scan_dense_oracle


def test_prufer_known_tree():
    # the classic example: sequence (3, 3, 3, 4) on six nodes
    assert prufer_to_edges([3, 3, 3, 4], 6) == [(0, 3), (1, 3), (2, 3), (3, 4), (4, 5)]


def test_prufer_is_a_bijection_on_five_nodes():
    trees = {tuple(prufer_to_edges(s, 5)) for s in itertools.product(range(5), repeat=3)}
    assert len(trees) == 5 ** 3  # Cayley


def test_prufer_errors():
    with pytest.raises(ContractViolation):
        prufer_to_edges([0], 4)
    with pytest.raises(ContractViolation):
        prufer_to_edges([9, 0], 4)
    assert prufer_to_edges([], 1) == []


def test_random_trees_roughly_uniform():
    rng = np.random.default_rng(0)
    counts = Counter()
    for _ in range(3200):
        t = random_tree(rng, 4)
        counts[tuple(sorted((min(c, p), max(c, p)) for c, p in enumerate(t.parent) if p >= 0))] += 1
    assert len(counts) == 16
    assert min(counts.values()) > 130 and max(counts.values()) < 270


def test_same_seed_same_task():
    a, b = gen_tree_task(3, 12, n_train=4, n_val=2), gen_tree_task(3, 12, n_train=4, n_val=2)
    for f in ("inputs", "targets", "val_inputs", "val_targets"):
        assert getattr(a, f).tobytes() == getattr(b, f).tobytes()
    c = gen_tree_task(4, 12, n_train=4, n_val=2)
    assert c.inputs.tobytes() != a.inputs.tobytes()


def test_single_node_task():
    task = gen_tree_task(0, 1, D_model=4, N=3, n_train=2, n_val=1)
    w = task.teacher
    for x, y in zip(task.inputs, task.targets):
        delta, B, C = compute_selective_params(x, w)
        u = discretize(w.A_log, delta, B, x, w.w_x).u
        np.testing.assert_array_equal(y, output_head(u, C, w.out_proj, w.D_skip, x))


def test_targets_reproduce_from_teacher():
    task = gen_tree_task(1, 20, n_train=3, n_val=2)
    for x, y, t in zip(task.inputs, task.targets, task.trees):
        delta, B, C = compute_selective_params(x, task.teacher)
        p = discretize(task.teacher.A_log, delta, B, x, task.teacher.w_x)
        want = output_head(scan_dense_oracle(t, p), C, task.teacher.out_proj, task.teacher.D_skip, x)
        assert want.tobytes() == y.tobytes()
        assert teacher_targets(x, t, task.teacher).tobytes() == y.tobytes()


def test_shapes_and_unit_features():
    task = gen_tree_task(2, 10, D_model=6, N=2, n_train=5, n_val=3)
    assert task.inputs.shape == (5, 10, 6) and task.val_targets.shape == (3, 10, 6)
    np.testing.assert_allclose(np.linalg.norm(task.inputs, axis=2), 1.0, rtol=1e-12)
    assert len(task.trees) == 5 and len(task.val_trees) == 3


def test_noise_channels():
    assert noise_dims(16, 0.0) == 0 and noise_dims(16, 1.0) == 4
    task = gen_tree_task(0, 8, D_model=8, n_train=2, n_val=1, noise_scale=1.0)
    assert np.all(task.teacher.w_x[:6] == 0)


def test_chain_copy():
    task = gen_tree_task(0, 6, D_model=2, kind="chain_copy", n_train=2, n_val=1, lag=2)
    np.testing.assert_array_equal(task.targets[:, 2:], task.inputs[:, :4])
    assert not task.targets[:, :2].any()


def test_task_errors():
    with pytest.raises(ContractViolation):
        gen_tree_task(0, 0)
    with pytest.raises(InvalidConfig):
        gen_tree_task(0, 4, kind="maze")
