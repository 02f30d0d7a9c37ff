"""Wall-clock scaling of the scan, the MST build and the dense oracle.

Timing protocol: every callable gets two warm-up calls, which also size an
inner loop so that one sample lasts at least ``min_sample`` seconds. The
callables are then sampled round-robin ``repeats`` times, so slow drifts in
machine speed hit all of them alike, and each reports its median.

On glibc the mmap threshold adapts to recently freed blocks, so arrays of
a few MB alternate between the heap and fresh mappings depending on
history, and their page-fault cost jumps at an arbitrary size. The scaling
benchmarks pin the threshold first so every size is served the same way.
"""

from __future__ import annotations

import ctypes
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping

import numpy as np

from .. import _backend
from ..graph_build import Topology, build_candidate_edges, weigh_edges
from ..mst import minimum_spanning_tree
from ..tree_scan import ScanParams, scan_dense_oracle, scan_full
from .tasks import random_tree

DEFAULT_SIZES = tuple(2 ** k for k in range(12, 18))
ORACLE_SIZES = (2 ** 10, 2 ** 11, 2 ** 12)


_M_MMAP_THRESHOLD = -3  # glibc mallopt parameter
PINNED_MMAP_THRESHOLD = 1 << 20


def pin_mmap_threshold(nbytes: int = PINNED_MMAP_THRESHOLD) -> bool:
    """Fix glibc's mmap threshold for this process. Returns False where
    that is not possible (other platforms or C libraries)."""
    if not sys.platform.startswith("linux"):
        return False
    try:
        return bool(ctypes.CDLL(None).mallopt(_M_MMAP_THRESHOLD, int(nbytes)))
    except (OSError, AttributeError):
        return False


def time_interleaved(fns: Mapping[str, Callable[[], object]], repeats: int = 7, warmup: int = 2,
                     min_sample: float = 0.05) -> dict[str, list[float]]:
    """Per-call seconds for each callable, ``repeats`` samples each."""
    clock = time.perf_counter
    inner = {}
    for name, fn in fns.items():
        t = 0.0
        for _ in range(max(warmup, 1)):
            t0 = clock()
            fn()
            t = clock() - t0
        inner[name] = max(1, math.ceil(min_sample / max(t, 1e-9)))
    samples = {name: [] for name in fns}
    for _ in range(repeats):
        for name, fn in fns.items():
            n = inner[name]
            t0 = clock()
            for _ in range(n):
                fn()
            samples[name].append((clock() - t0) / n)
    return samples


def growth_ratios(times) -> list[float]:
    return [float(b / a) for a, b in zip(times[:-1], times[1:])]


def scan_instance(L: int, N: int, seed: int = 0, dtype=np.float64):
    rng = np.random.default_rng(seed)
    tree = random_tree(rng, L, int(rng.integers(L)))
    a = rng.uniform(0.5, 0.99, (L, N)).astype(dtype)
    u = rng.normal(size=(L, N)).astype(dtype)
    return tree, ScanParams(a, u)


def _grid_shape(L: int) -> tuple[int, int]:
    H = 1 << (int(L).bit_length() - 1) // 2
    return H, L // H


@dataclass
class ScalingReport:
    sizes: list[int]
    N: int
    repeats: int
    backend: str
    scan_times: list[float]
    scan_ratios: list[float]
    oracle_sizes: list[int] = field(default_factory=list)
    oracle_N: int = 0
    oracle_times: list[float] = field(default_factory=list)
    oracle_ratios: list[float] = field(default_factory=list)
    mst_times: list[float] = field(default_factory=list)
    mst_ratios: list[float] = field(default_factory=list)
    threads: int = 1
    threaded_times: list[float] = field(default_factory=list)
    threaded_ratios: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def bench_scaling(sizes=DEFAULT_SIZES, repeats: int = 7, N: int = 256, seed: int = 0,
                  oracle_sizes=ORACLE_SIZES, oracle_N: int = 4, mst: bool = True,
                  threads: int = 1, min_sample: float = 0.05) -> ScalingReport:
    """Median ``scan_full`` time per L on random trees, with growth per step
    of ``sizes``. The dense oracle runs at ``oracle_sizes`` with
    ``oracle_N`` channels, and the MST build (grid candidates, Kruskal) at
    every L when ``mst`` is set. ``threads > 1`` adds a second, threaded
    scan column; the single-threaded one is always reported."""
    sizes = [int(s) for s in sizes]
    if sizes != sorted(sizes) or len(set(sizes)) != len(sizes):
        raise ValueError("sizes must be strictly ascending")
    pin_mmap_threshold()
    inst = {L: scan_instance(L, N, seed + k) for k, L in enumerate(sizes)}
    fns = {L: (lambda t=t, p=p: scan_full(t, p)) for L, (t, p) in inst.items()}
    if threads > 1:
        fns.update({("threads", L): (lambda t=t, p=p: scan_full(t, p, threads=threads))
                    for L, (t, p) in inst.items()})
    samples = time_interleaved(fns, repeats, min_sample=min_sample)
    scan_t = [float(np.median(samples[L])) for L in sizes]
    rep = ScalingReport(sizes, N, repeats, _backend.name(), scan_t, growth_ratios(scan_t),
                        threads=threads)
    if threads > 1:
        rep.threaded_times = [float(np.median(samples[("threads", L)])) for L in sizes]
        rep.threaded_ratios = growth_ratios(rep.threaded_times)
    del inst, fns, samples
    if oracle_sizes:
        osz = [int(s) for s in oracle_sizes]
        oinst = {L: scan_instance(L, oracle_N, seed + 100 + k) for k, L in enumerate(osz)}
        os_ = time_interleaved({L: (lambda t=t, p=p: scan_dense_oracle(t, p))
                                for L, (t, p) in oinst.items()}, repeats, min_sample=min_sample)
        rep.oracle_sizes, rep.oracle_N = osz, oracle_N
        rep.oracle_times = [float(np.median(os_[L])) for L in osz]
        rep.oracle_ratios = growth_ratios(rep.oracle_times)
    if mst:
        rng = np.random.default_rng(seed + 200)
        feats = {L: rng.normal(size=(L, 8)) for L in sizes}

        def build(X):
            topo = Topology.grid(*_grid_shape(X.shape[0]))
            return minimum_spanning_tree(weigh_edges(X, build_candidate_edges(X, topo)),
                                         X.shape[0], "kruskal")

        ms = time_interleaved({L: (lambda X=X: build(X)) for L, X in feats.items()}, repeats,
                              min_sample=min_sample)
        rep.mst_times = [float(np.median(ms[L])) for L in sizes]
        rep.mst_ratios = growth_ratios(rep.mst_times)
    return rep


@dataclass
class ChannelReport:
    L: int
    channels: list[int]
    repeats: int
    backend: str
    times: list[float]
    ratios: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def bench_channels(L: int = 2 ** 13, channels=(256, 512, 1024), repeats: int = 7,
                   seed: int = 0, min_sample: float = 0.05) -> ChannelReport:
    """``scan_full`` time at fixed L as the state width grows."""
    channels = [int(n) for n in channels]
    pin_mmap_threshold()
    tree, _ = scan_instance(L, 1, seed)
    rng = np.random.default_rng(seed)
    params = {n: ScanParams(rng.uniform(0.5, 0.99, (L, n)), rng.normal(size=(L, n)))
              for n in channels}
    s = time_interleaved({n: (lambda p=p: scan_full(tree, p)) for n, p in params.items()},
                         repeats, min_sample=min_sample)
    t = [float(np.median(s[n])) for n in channels]
    return ChannelReport(L, channels, repeats, _backend.name(), t, growth_ratios(t))


def format_scaling(rep: ScalingReport) -> str:
    lines = [f"scan_full  N={rep.N}  backend={rep.backend}  repeats={rep.repeats}",
             f"{'L':>8}  {'median s':>11}  {'x prev':>7}  {'mst s':>10}  {'x prev':>7}"]
    for k, L in enumerate(rep.sizes):
        r = f"{rep.scan_ratios[k - 1]:7.2f}" if k else " " * 7
        m = f"{rep.mst_times[k]:10.5f}" if rep.mst_times else " " * 10
        mr = f"{rep.mst_ratios[k - 1]:7.2f}" if k and rep.mst_ratios else " " * 7
        lines.append(f"{L:>8}  {rep.scan_times[k]:11.6f}  {r}  {m}  {mr}")
    if rep.threaded_times:
        lines.append(f"threads={rep.threads}: " + "  ".join(f"{t:.6f}" for t in rep.threaded_times))
    if rep.oracle_times:
        lines.append(f"dense oracle  N={rep.oracle_N}")
        for k, L in enumerate(rep.oracle_sizes):
            r = f"{rep.oracle_ratios[k - 1]:7.2f}" if k else ""
            lines.append(f"{L:>8}  {rep.oracle_times[k]:11.6f}  {r}")
    return "\n".join(lines)
