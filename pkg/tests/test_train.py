import numpy as np
import pytest

from ggssm.errors import InvalidConfig, TrainingDiverged
from ggssm.harness.tasks import gen_tree_task
from ggssm.harness.train import (TrainConfig, compare_models, gradient, model_trees, node_mse,
                                 train_toy)
from ggssm.harness.gradcheck import central_diff
from ggssm.ssm_layer import LayerWeights, layer_forward_trace


def small_task(seed=0, L=8, n_train=6):
    return gen_tree_task(seed, L, D_model=4, N=2, n_train=n_train, n_val=3)


def test_node_mse():
    assert node_mse(np.ones((2, 3)), np.zeros((2, 3))) == 3.0


def test_zero_learning_rate_keeps_loss_constant():
    m = train_toy(small_task(), TrainConfig(steps=5, learning_rate=0.0))
    assert len(set(m.loss_trace)) == 1
    assert m.loss_trace[0] == m.initial_loss == m.final_train_mse


def test_gradient_matches_finite_differences():
    task = small_task(1, n_train=3)
    cfg = TrainConfig()
    trees = model_trees(task.inputs, cfg)
    w = LayerWeights.init(4, 2, seed=3)

    def loss(vec):
        ww = w.unflat(vec)
        return np.mean([node_mse(layer_forward_trace(x, ww, tree=t).y, y)
                        for x, y, t in zip(task.inputs, task.targets, trees)])

    traces = [layer_forward_trace(x, w, tree=t) for x, t in zip(task.inputs, trees)]
    g = gradient(w, traces, list(task.targets)).flat()
    fd = central_diff(loss, w.flat())
    assert np.linalg.norm(g - fd) <= 1e-6 * np.linalg.norm(fd)


def test_tiny_step_decreases_loss():
    wins = 0
    for s in range(100):
        rng = np.random.default_rng(s)
        task = gen_tree_task(s, int(rng.integers(3, 17)), D_model=4, N=int(rng.integers(1, 5)),
                             n_train=4, n_val=1)
        m = train_toy(task, TrainConfig(steps=1, learning_rate=1e-4, seed=s))
        wins += m.final_train_mse < m.initial_loss
    assert wins >= 95


def test_training_is_deterministic():
    a = train_toy(small_task(2), TrainConfig(steps=10, learning_rate=0.05, batch=3, seed=4))
    b = train_toy(small_task(2), TrainConfig(steps=10, learning_rate=0.05, batch=3, seed=4))
    assert a.to_dict() == b.to_dict()


def test_minibatch_trace_and_full_losses():
    task = small_task(3)
    m = train_toy(task, TrainConfig(steps=4, learning_rate=0.0, batch=2))
    assert len(m.loss_trace) == 4 and m.initial_loss == m.final_train_mse


def test_sequential_baseline_uses_chain():
    task = small_task(4)
    trees = model_trees(task.inputs, TrainConfig(model="sequential"))
    assert trees[0].parent.tolist() == list(range(1, 8)) + [-1]


def test_divergence_is_reported():
    with pytest.raises(TrainingDiverged) as exc:
        train_toy(small_task(5), TrainConfig(steps=50, learning_rate=1e6))
    assert exc.value.step >= 0


@pytest.mark.parametrize("kw", [dict(steps=0), dict(learning_rate=-1.0), dict(batch=-1),
                                dict(model="lstm")])
def test_config_validation(kw):
    with pytest.raises(InvalidConfig):
        TrainConfig(**kw)


def test_compare_models_shares_init():
    task = small_task(6)
    res = compare_models(task, steps=3)
    assert set(res) == {"ggssm", "sequential"}
    # same weights, so the only difference in the first loss is the tree
    assert res["ggssm"].model == "ggssm" and res["sequential"].model == "sequential"
    w = LayerWeights.init(task.D_model, task.N, seed=task.seed)
    seq = TrainConfig(model="sequential")
    traces = [layer_forward_trace(x, w, seq.layer_config(), tree=t)
              for x, t in zip(task.inputs, model_trees(task.inputs, seq))]
    assert res["sequential"].initial_loss == pytest.approx(
        np.mean([node_mse(tr.y, y) for tr, y in zip(traces, task.targets)]), rel=1e-12)


@pytest.mark.slow
def test_halving_at_default_rate():
    task = gen_tree_task(0, 32, N=4)
    m = train_toy(task, TrainConfig(steps=500, learning_rate=1e-2, seed=0))
    assert m.final_train_mse < 0.5 * m.initial_loss
