"""Swap the MST algorithm inside the layer and compare outputs and timings.

With distinct edge weights the minimum spanning tree is unique, so every
algorithm must produce the same tree and bit-identical layer outputs. The
timing columns are the MST stage alone (candidate edges precomputed) and
the whole layer, each relative to Kruskal.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import _backend
from ..errors import InvariantViolation
from ..graph_build import Topology, build_candidate_edges, weigh_edges
from ..mst import ALGORITHMS, minimum_spanning_tree
from ..ssm_layer import LayerConfig, LayerWeights, layer_forward_trace
from .bench import time_interleaved

DEFAULT_SIZES = (256, 512, 1024, 2048)
BASELINE = "kruskal"


@dataclass
class AblationRow:
    L: int
    edges: int
    algorithm: str
    mst_time: float
    mst_relative: float
    layer_time: float
    layer_relative: float
    max_abs_diff: float
    identical: bool
    total_weight: float


@dataclass
class AblationReport:
    rows: list[AblationRow]
    D_model: int
    N: int
    repeats: int
    backend: str

    @property
    def largest(self) -> list[AblationRow]:
        L = max(r.L for r in self.rows)
        return [r for r in self.rows if r.L == L]

    def relative(self, algorithm: str) -> float:
        """MST-stage time relative to Kruskal at the largest size."""
        return next(r.mst_relative for r in self.largest if r.algorithm == algorithm)

    def to_dict(self, include_timing: bool = True) -> dict:
        rows = [asdict(r) for r in self.rows]
        if not include_timing:
            for r in rows:
                for k in ("mst_time", "mst_relative", "layer_time", "layer_relative"):
                    del r[k]
        return {"D_model": self.D_model, "N": self.N, "repeats": self.repeats,
                "backend": self.backend, "rows": rows}


def distinct_instance(rng: np.random.Generator, L: int, D_model: int, topology: Topology):
    """Features whose candidate edge weights are pairwise distinct."""
    while True:
        x = rng.normal(size=(L, D_model))
        edges = weigh_edges(x, build_candidate_edges(x, topology))
        if np.unique(edges.w).size == len(edges):
            return x, edges


def ablate_mst(sizes=DEFAULT_SIZES, D_model: int = 16, N: int = 16, repeats: int = 7,
               seed: int = 0, algorithms=ALGORITHMS, topology: Topology | None = None,
               min_sample: float = 0.05) -> AblationReport:
    """Raises :class:`InvariantViolation` when any algorithm's layer output
    differs from Kruskal's in a single bit."""
    topology = topology or Topology.dense()
    algorithms = list(algorithms)
    if BASELINE not in algorithms:
        algorithms.insert(0, BASELINE)
    rng = np.random.default_rng(seed)
    w = LayerWeights.init(D_model, N, seed=seed)
    rows = []
    for L in sizes:
        x, edges = distinct_instance(rng, int(L), D_model, topology)
        cfgs = {a: LayerConfig(topology=topology, mst_algorithm=a) for a in algorithms}
        outs = {a: layer_forward_trace(x, w, cfgs[a]) for a in algorithms}
        ref = outs[BASELINE]
        mst_t = time_interleaved({a: (lambda a=a: minimum_spanning_tree(edges, L, a))
                                  for a in algorithms}, repeats, min_sample=min_sample)
        layer_t = time_interleaved({a: (lambda a=a: layer_forward_trace(x, w, cfgs[a]))
                                    for a in algorithms}, repeats, min_sample=min_sample)
        m0 = float(np.median(mst_t[BASELINE]))
        l0 = float(np.median(layer_t[BASELINE]))
        for a in algorithms:
            y = outs[a].y
            same = y.tobytes() == ref.y.tobytes()
            if not same:
                diff = float(np.max(np.abs(y - ref.y)))
                raise InvariantViolation(
                    f"{a} output differs from {BASELINE} at L={L} (max |diff| {diff:.3g})")
            m = float(np.median(mst_t[a]))
            lt = float(np.median(layer_t[a]))
            rows.append(AblationRow(int(L), len(edges), a, m, m / m0, lt, lt / l0, 0.0, same,
                                    outs[a].spanning_tree.total_weight))
    return AblationReport(rows, D_model, N, repeats, _backend.name())


def format_table(rep: AblationReport) -> str:
    """Aligned text table: one block per size, Kruskal at 1.00x."""
    head = f"{'Algorithm':<14}{'max|dy|':>10}{'MST time':>12}{'MST rel':>9}{'layer rel':>11}"
    lines = [f"MST ablation  D_model={rep.D_model}  N={rep.N}  backend={rep.backend}"]
    for L in sorted({r.L for r in rep.rows}):
        block = [r for r in rep.rows if r.L == L]
        lines += ["", f"L={L}  edges={block[0].edges}", head, "-" * len(head)]
        for r in block:
            lines.append(f"{r.algorithm:<14}{r.max_abs_diff:>10.1e}{r.mst_time:>12.5f}"
                         f"{r.mst_relative:>8.2f}x{r.layer_relative:>10.2f}x")
    return "\n".join(lines)
