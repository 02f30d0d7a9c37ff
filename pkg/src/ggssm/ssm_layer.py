"""One state space layer scanned over the minimum spanning tree of its inputs.

Per node ``i`` the layer computes a step size ``delta_i``, input and output
projections ``B_i``, ``C_i`` (all from ``x_i``), discretizes them into scan
parameters, propagates states over the minimum spanning tree of the inputs
and reads out

    y_i = out_proj^T (C_i * rms(h_i)) + D_skip * x_i

``layer_backward`` returns gradients for every weight and for ``x``. The
tree is piecewise constant in ``x`` and is treated as fixed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ContractViolation, InvalidConfig
from .graph_build import Topology, as_features, build_candidate_edges, weigh_edges
from .mst import ALGORITHMS, RootedTree, SpanningTree, minimum_spanning_tree, pick_root, root_tree
from .tree_scan import CONVENTIONS, MODES, ScanParams, scan_with_grad

DELTA_MIN = 1e-4
DELTA_MAX = 10.0
# exp(-rate) stays strictly inside (0, 1) in double precision on this range
RATE_MIN = 1e-12
RATE_MAX = 700.0
ROOT_POLICIES = ("node_zero", "max_degree")


def softplus(z):
    return np.logaddexp(0.0, z)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LayerWeights:
    """``W_B``, ``W_C`` and ``out_proj`` are ``N x D_model``; ``W_delta``,
    ``D_skip`` and ``w_x`` have length ``D_model``; ``A_log`` has length ``N``.
    ``w_x`` mixes the input channels into the scalar each state receives."""

    A_log: np.ndarray
    W_delta: np.ndarray
    W_B: np.ndarray
    W_C: np.ndarray
    bias_delta: float
    D_skip: np.ndarray
    out_proj: np.ndarray
    w_x: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "bias_delta":
                v = float(v)
            else:
                v = np.array(v, dtype=np.float64)
            if not np.all(np.isfinite(v)):
                raise ContractViolation(f"weight {f.name} has non-finite entries")
            object.__setattr__(self, f.name, v)
        N, D = self.N, self.D_model
        want = {"A_log": (N,), "W_delta": (D,), "W_B": (N, D), "W_C": (N, D),
                "D_skip": (D,), "out_proj": (N, D), "w_x": (D,)}
        for name, shape in want.items():
            if getattr(self, name).shape != shape:
                raise ContractViolation(
                    f"weight {name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def N(self) -> int:
        return self.A_log.shape[0]

    @property
    def D_model(self) -> int:
        return self.W_delta.shape[0]

    @classmethod
    def init(cls, D_model: int, N: int, seed: int = 0, scale: float = 1.0) -> "LayerWeights":
        if D_model < 1 or N < 1:
            raise ContractViolation(f"need D_model >= 1 and N >= 1, got {D_model}, {N}")
        rng = np.random.default_rng(seed)
        s = scale / np.sqrt(D_model)
        return cls(
            A_log=np.log(np.expm1(rng.uniform(0.5, 2.0, N))),
            W_delta=rng.normal(0, s, D_model),
            W_B=rng.normal(0, s, (N, D_model)),
            W_C=rng.normal(0, s, (N, D_model)),
            bias_delta=float(np.log(np.expm1(0.5))),
            D_skip=rng.normal(0, 0.1 * scale, D_model),
            out_proj=rng.normal(0, scale / np.sqrt(N), (N, D_model)),
            w_x=rng.normal(0, s, D_model),
        )

    def to_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = np.array([v]) if f.name == "bias_delta" else v
        return out

    @classmethod
    def from_tensors(cls, t) -> "LayerWeights":
        names = [f.name for f in fields(cls)]
        missing = [n for n in names if n not in t]
        if missing:
            raise ContractViolation(f"weights are missing tensors {missing}")
        kw = {n: np.asarray(t[n], dtype=np.float64) for n in names}
        kw["bias_delta"] = float(np.asarray(t["bias_delta"]).reshape(-1)[0])
        return cls(**kw)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.to_tensors().values()])

    def unflat(self, vec) -> "LayerWeights":
        vec = np.asarray(vec, dtype=np.float64)
        out, pos = {}, 0
        for name, v in self.to_tensors().items():
            out[name] = vec[pos:pos + v.size].reshape(v.shape)
            pos += v.size
        return LayerWeights.from_tensors(out)

    def axpy(self, alpha: float, other: "LayerWeights") -> "LayerWeights":
        """``self + alpha * other``, field by field."""
        return self.unflat(self.flat() + alpha * other.flat())


@dataclass(frozen=True)
class LayerConfig:
    topology: Topology = field(default_factory=Topology.dense)
    mst_algorithm: str = "kruskal"
    scan_mode: str = "full"
    path_convention: str = "edge_count"
    norm_epsilon: float = 1e-6
    root_policy: str = "node_zero"

    def __post_init__(self):
        if isinstance(self.topology, str):
            object.__setattr__(self, "topology", Topology.parse(self.topology))
        if self.mst_algorithm not in ALGORITHMS:
            raise InvalidConfig(f"mst_algorithm must be one of {ALGORITHMS}, got {self.mst_algorithm!r}")
        if self.scan_mode not in MODES:
            raise InvalidConfig(f"scan_mode must be one of {MODES}, got {self.scan_mode!r}")
        if self.path_convention not in CONVENTIONS:
            raise InvalidConfig(f"path_convention must be one of {CONVENTIONS}, got {self.path_convention!r}")
        if not (self.norm_epsilon > 0):
            raise InvalidConfig(f"norm_epsilon must be > 0, got {self.norm_epsilon}")
        if self.root_policy not in ROOT_POLICIES:
            raise InvalidConfig(f"root_policy must be one of {ROOT_POLICIES}, got {self.root_policy!r}")

    def to_dict(self) -> dict:
        return {"topology": self.topology.to_dict(), "mst_algorithm": self.mst_algorithm,
                "scan_mode": self.scan_mode, "path_convention": self.path_convention,
                "norm_epsilon": self.norm_epsilon, "root_policy": self.root_policy}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerConfig":
        d = {k: v for k, v in d.items() if k != "schema_version"}
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config fields {sorted(extra)}")
        if isinstance(d.get("topology"), dict):
            d["topology"] = Topology.from_dict(d["topology"])
        return cls(**d)


def compute_selective_params(x, w: LayerWeights):
    """``(delta, B_in, C_out)`` with ``delta`` softplus-activated and clamped
    to ``[1e-4, 10]``."""
    X = _matrix(x)
    if X.shape[1] != w.D_model:
        raise ContractViolation(f"x has {X.shape[1]} features, weights expect {w.D_model}")
    z = X @ w.W_delta + w.bias_delta
    delta = np.clip(softplus(z), DELTA_MIN, DELTA_MAX)
    return delta, X @ w.W_B.T, X @ w.W_C.T


def discretize(A_log, delta, B_in, x, w_x=None) -> ScanParams:
    """Zero-order hold for the transition, Euler for the input.

    ``a[i, n] = exp(-delta_i * softplus(A_log[n]))`` and
    ``u[i] = delta_i * B_in[i] * <w_x, x_i>``. Without ``w_x`` the input
    channels are averaged."""
    X = _matrix(x)
    delta = np.asarray(delta, dtype=np.float64).reshape(-1)
    B_in = np.asarray(B_in, dtype=np.float64)
    if np.any(~(delta > 0)):
        raise ContractViolation("delta must be strictly positive")
    if B_in.shape[0] != delta.shape[0] or X.shape[0] != delta.shape[0]:
        raise ContractViolation("delta, B_in and x must agree on L")
    if w_x is None:
        w_x = np.full(X.shape[1], 1.0 / X.shape[1])
    rate = np.clip(delta[:, None] * softplus(np.asarray(A_log, dtype=np.float64))[None, :],
                   RATE_MIN, RATE_MAX)
    s = X @ np.asarray(w_x, dtype=np.float64)
    return ScanParams(np.exp(-rate), delta[:, None] * B_in * s[:, None])


def rms_normalize(h, epsilon: float = 1e-6):
    """Row-wise ``h / sqrt(mean(h**2) + epsilon)``; a vector is one row."""
    if not (epsilon > 0):
        raise InvalidConfig(f"epsilon must be > 0, got {epsilon}")
    h = np.asarray(h, dtype=np.float64)
    return h / np.sqrt(np.mean(h * h, axis=-1, keepdims=True) + epsilon)


def sequential_scan_1d(params) -> np.ndarray:
    """``h[0] = u[0]``, ``h[n] = a[n] * h[n-1] + u[n]``."""
    p = params if isinstance(params, ScanParams) else ScanParams(*params)
    h = np.empty_like(p.u)
    acc = np.zeros(p.N, dtype=p.u.dtype)
    for n in range(p.L):
        acc = p.a[n] * acc + p.u[n]
        h[n] = acc
    return h


def output_head(h, C_out, out_proj, D_skip, x, epsilon: float = 1e-6) -> np.ndarray:
    """``y_i = out_proj^T (C_i * rms(h_i)) + D_skip * x_i`` for every row."""
    return (C_out * rms_normalize(h, epsilon)) @ out_proj + x * D_skip


def output_head_backward(h, C_out, out_proj, D_skip, x, epsilon: float, grad_y):
    """Gradients of ``sum(grad_y * output_head(...))`` with respect to
    ``(h, C_out, out_proj, D_skip, x)``."""
    G = np.asarray(grad_y, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    r = 1.0 / np.sqrt(np.mean(h * h, axis=1, keepdims=True) + epsilon)
    normed = h * r
    d_out = (C_out * normed).T @ G
    d_skip = np.sum(G * x, axis=0)
    dx = G * D_skip
    d_zc = G @ out_proj.T
    d_C = d_zc * normed
    d_n = d_zc * C_out
    dh = r * d_n - (r ** 3 / h.shape[1]) * h * np.sum(d_n * h, axis=1, keepdims=True)
    return dh, d_C, d_out, d_skip, dx


def _matrix(x) -> np.ndarray:
    return as_features(x).data.astype(np.float64, copy=False)


def spanning_tree_for(x, cfg: LayerConfig) -> SpanningTree:
    fs = as_features(x)
    pairs = build_candidate_edges(fs, cfg.topology)
    return minimum_spanning_tree(weigh_edges(fs, pairs), fs.L, cfg.mst_algorithm)


def build_tree(x, cfg: LayerConfig) -> RootedTree:
    """The rooted minimum spanning tree the layer scans over."""
    st = spanning_tree_for(x, cfg)
    return root_tree(st, pick_root(st, cfg.root_policy))


@dataclass
class LayerTrace:
    """Everything the forward pass computed, kept for the backward pass."""

    x: np.ndarray
    tree: RootedTree
    delta: np.ndarray
    z_delta: np.ndarray
    B_in: np.ndarray
    C_out: np.ndarray
    s: np.ndarray
    rate: np.ndarray
    params: ScanParams
    h: np.ndarray
    inv_rms: np.ndarray
    normed: np.ndarray
    y: np.ndarray
    scan_backward: object = field(repr=False)
    timings: dict = field(default_factory=dict)
    spanning_tree: SpanningTree | None = None
    norm_epsilon: float = 1e-6


def layer_forward_trace(x, w: LayerWeights, cfg: LayerConfig | None = None,
                        tree: RootedTree | None = None) -> LayerTrace:
    """Forward pass keeping intermediates. A precomputed ``tree`` skips graph
    construction, e.g. while training on fixed inputs."""
    cfg = cfg or LayerConfig()
    fs = as_features(x)
    X = fs.data.astype(np.float64, copy=False)
    if X.shape[1] != w.D_model:
        raise ContractViolation(f"x has {X.shape[1]} features, weights expect {w.D_model}")
    timings = {}
    st = None
    if tree is None:
        t0 = time.perf_counter()
        pairs = build_candidate_edges(fs, cfg.topology)
        edges = weigh_edges(fs, pairs)
        t1 = time.perf_counter()
        st = minimum_spanning_tree(edges, fs.L, cfg.mst_algorithm)
        t2 = time.perf_counter()
        tree = root_tree(st, pick_root(st, cfg.root_policy))
        timings.update(graph=t1 - t0, mst=t2 - t1, root=time.perf_counter() - t2)
    elif tree.L != fs.L:
        raise ContractViolation(f"tree has {tree.L} nodes but x has {fs.L} rows")
    t0 = time.perf_counter()
    z = X @ w.W_delta + w.bias_delta
    delta = np.clip(softplus(z), DELTA_MIN, DELTA_MAX)
    B_in = X @ w.W_B.T
    C_out = X @ w.W_C.T
    s = X @ w.w_x
    rate = delta[:, None] * softplus(w.A_log)[None, :]
    params = ScanParams(np.exp(-np.clip(rate, RATE_MIN, RATE_MAX)), delta[:, None] * B_in * s[:, None])
    h, back = scan_with_grad(tree, params, cfg.scan_mode, cfg.path_convention)
    inv_rms = 1.0 / np.sqrt(np.mean(h * h, axis=1) + cfg.norm_epsilon)
    normed = h * inv_rms[:, None]
    y = (C_out * normed) @ w.out_proj + X * w.D_skip
    timings["scan_head"] = time.perf_counter() - t0
    return LayerTrace(X, tree, delta, z, B_in, C_out, s, rate, params, h, inv_rms, normed, y,
                      back, timings, st, cfg.norm_epsilon)


def layer_forward(x, w: LayerWeights, cfg: LayerConfig | None = None,
                  tree: RootedTree | None = None) -> np.ndarray:
    return layer_forward_trace(x, w, cfg, tree).y


@dataclass(frozen=True)
class LayerGrads:
    weights: LayerWeights
    x: np.ndarray
    a: np.ndarray
    u: np.ndarray


def layer_backward(trace: LayerTrace, w: LayerWeights, grad_y) -> LayerGrads:
    G = np.asarray(grad_y, dtype=np.float64)
    if G.shape != trace.y.shape:
        raise ContractViolation(f"grad_y has shape {G.shape}, expected {trace.y.shape}")
    X = trace.x
    dh, d_C, d_out, d_skip, dx = output_head_backward(
        trace.h, trace.C_out, w.out_proj, w.D_skip, X, trace.norm_epsilon, G)
    gb = trace.scan_backward(dh)
    da, du = gb.d_a, gb.d_u
    delta = trace.delta[:, None]
    d_delta = np.sum(du * trace.B_in * trace.s[:, None], axis=1)
    d_B = du * delta * trace.s[:, None]
    d_s = np.sum(du * delta * trace.B_in, axis=1)
    # a = exp(-clip(rate)); the clip passes gradient only strictly inside its range
    live = (trace.rate > RATE_MIN) & (trace.rate < RATE_MAX)
    d_rate = np.where(live, -trace.params.a * da, 0.0)
    sA = softplus(w.A_log)
    d_delta += d_rate @ sA
    d_A_log = (trace.delta @ d_rate) * sigmoid(w.A_log)
    sp = softplus(trace.z_delta)
    inside = (sp > DELTA_MIN) & (sp < DELTA_MAX)
    d_z = np.where(inside, d_delta * sigmoid(trace.z_delta), 0.0)
    grads = LayerWeights(
        A_log=d_A_log,
        W_delta=X.T @ d_z,
        W_B=d_B.T @ X,
        W_C=d_C.T @ X,
        bias_delta=float(np.sum(d_z)),
        D_skip=d_skip,
        out_proj=d_out,
        w_x=X.T @ d_s,
    )
    dx += np.outer(d_z, w.W_delta) + d_B @ w.W_B + d_C @ w.W_C + np.outer(d_s, w.w_x)
    return LayerGrads(grads, dx, da, du)


def with_config(cfg: LayerConfig, **kw) -> LayerConfig:
    return replace(cfg, **kw)
