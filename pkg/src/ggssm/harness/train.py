"""Plain gradient descent on a single layer, driven by the analytic backward pass."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidConfig, TrainingDiverged
from ..graph_build import Topology
from ..mst import chain_tree
from ..ssm_layer import LayerConfig, LayerWeights, build_tree, layer_backward, layer_forward_trace

MODELS = ("ggssm", "sequential")
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class TrainConfig:
    """``model='sequential'`` is the 1-D baseline: the same layer scanned
    along the chain ``0 - 1 - ... - (L-1)`` in input order. ``batch=0``
    means full-batch steps."""

    steps: int = 500
    learning_rate: float = 1e-2
    batch: int = 0
    scan_mode: str = "full"
    seed: int = 0
    model: str = "ggssm"
    topology: Topology = field(default_factory=Topology.dense)
    mst_algorithm: str = "kruskal"
    init_scale: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidConfig(f"steps must be >= 1, got {self.steps}")
        if not (self.learning_rate >= 0):
            raise InvalidConfig(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.batch < 0:
            raise InvalidConfig(f"batch must be >= 0, got {self.batch}")
        if self.model not in MODELS:
            raise InvalidConfig(f"model must be one of {MODELS}, got {self.model!r}")

    def layer_config(self) -> LayerConfig:
        if self.model == "sequential":
            return LayerConfig(scan_mode="rooted")
        return LayerConfig(topology=self.topology, mst_algorithm=self.mst_algorithm,
                           scan_mode=self.scan_mode)


@dataclass
class Metrics:
    model: str
    loss_trace: list[float]
    initial_loss: float
    final_train_mse: float
    final_val_mse: float
    step_times: list[float]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {"model": self.model, "loss_trace": self.loss_trace, "initial_loss": self.initial_loss,
             "final_train_mse": self.final_train_mse, "final_val_mse": self.final_val_mse,
             "steps": len(self.loss_trace)}
        if include_timing:
            d["step_times"] = self.step_times
            d["median_step_time"] = float(np.median(self.step_times))
        return d


def model_trees(inputs, cfg: TrainConfig):
    lcfg = cfg.layer_config()
    L = inputs.shape[1]
    if cfg.model == "sequential":
        return [chain_tree(L)] * inputs.shape[0]
    return [build_tree(x, lcfg) for x in inputs]


def node_mse(pred, target) -> float:
    """Squared error summed over output features, averaged over nodes."""
    return float(np.sum((pred - target) ** 2) / pred.shape[0])


def _loss_and_traces(w, inputs, targets, trees, lcfg):
    traces = [layer_forward_trace(x, w, lcfg, tree=t) for x, t in zip(inputs, trees)]
    losses = [node_mse(tr.y, y) for tr, y in zip(traces, targets)]
    return float(np.mean(losses)), traces


def dataset_mse(w, inputs, targets, trees, lcfg) -> float:
    return _loss_and_traces(w, inputs, targets, trees, lcfg)[0]


def gradient(w: LayerWeights, traces, targets) -> LayerWeights:
    total = None
    for tr, t in zip(traces, targets):
        g = layer_backward(tr, w, 2.0 * (tr.y - t) / tr.y.shape[0]).weights.flat()
        total = g if total is None else total + g
    return w.unflat(total / len(traces))


def train_toy(task, cfg: TrainConfig, init: LayerWeights | None = None) -> Metrics:
    """Gradient descent on the task's training instances.

    With full batches the trace holds the training loss before every step.
    With minibatches it holds the loss of the batch the step was taken on,
    while ``initial_loss`` and ``final_train_mse`` cover the whole set."""
    lcfg = cfg.layer_config()
    w = init or LayerWeights.init(task.D_model, task.N, seed=cfg.seed, scale=cfg.init_scale)
    trees = model_trees(task.inputs, cfg)
    val_trees = model_trees(task.val_inputs, cfg)
    rng = np.random.default_rng(cfg.seed)
    n = task.inputs.shape[0]
    batch = n if cfg.batch == 0 else min(cfg.batch, n)
    initial = dataset_mse(w, task.inputs, task.targets, trees, lcfg)
    trace, times = [], []
    for step in range(cfg.steps):
        t0 = time.perf_counter()
        idx = range(n) if batch == n else np.sort(rng.choice(n, batch, replace=False)).tolist()
        xs = [task.inputs[i] for i in idx]
        ys = [task.targets[i] for i in idx]
        loss, traces = _loss_and_traces(w, xs, ys, [trees[i] for i in idx], lcfg)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingDiverged(f"loss {loss!r} at step {step}", step)
        trace.append(loss)
        if cfg.learning_rate > 0:
            w = w.axpy(-cfg.learning_rate, gradient(w, traces, ys))
        times.append(time.perf_counter() - t0)
    final = dataset_mse(w, task.inputs, task.targets, trees, lcfg)
    if not np.isfinite(final) or final > DIVERGENCE_LIMIT:
        raise TrainingDiverged(f"loss {final!r} after the last step", cfg.steps)
    val = dataset_mse(w, task.val_inputs, task.val_targets, val_trees, lcfg)
    return Metrics(cfg.model, trace, initial, final, val, times)


# settings for the tree model versus 1-D baseline comparison on tree_diffusion
COMPARE_LR = 0.1
COMPARE_BATCH = 16


def compare_models(task, steps: int = 500, learning_rate: float = COMPARE_LR,
                   batch: int = COMPARE_BATCH, seed: int | None = None) -> dict[str, Metrics]:
    """Train the tree-scan model and the sequential baseline from the same initial
    weights with the same step budget."""
    seed = task.seed if seed is None else seed
    out = {}
    for model in MODELS:
        cfg = TrainConfig(steps=steps, learning_rate=learning_rate, batch=batch, seed=seed,
                          model=model)
        out[model] = train_toy(task, cfg)
    return out
