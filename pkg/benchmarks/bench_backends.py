"""Compiled kernels against the pure-Python fallback.

    python benchmarks/bench_backends.py [--sizes 256,1024,4096] [--repeats 5]

Times the scan (forward and backward), each MST selection kernel and a
soft heap insert/extract workload under both backends, then prints the
speedup. Outputs are compared so a timing is never reported for kernels
that disagree beyond round-off.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ggssm import _backend
from ggssm.graph_build import Topology, build_candidate_edges, weigh_edges
from ggssm.harness.bench import scan_instance, time_interleaved
from ggssm.mst import make_soft_heap, minimum_spanning_tree, soft_heap_extract_min, soft_heap_insert
from ggssm.tree_scan import scan_full, scan_full_backward


def heap_workload(keys, epsilon=1 / 8):
    heap = make_soft_heap(epsilon)
    for i, k in enumerate(keys):
        soft_heap_insert(heap, float(k), i)
    while len(heap):
        soft_heap_extract_min(heap)


def workloads(L: int, N: int, seed: int):
    tree, p = scan_instance(L, N, seed)
    G = np.random.default_rng(seed).normal(size=(L, N))
    x = np.random.default_rng(seed + 1).normal(size=(L, 8))
    H = 1 << (L.bit_length() - 1) // 2
    edges = weigh_edges(x, build_candidate_edges(x, Topology.grid(H, L // H)))
    keys = np.random.default_rng(seed + 2).normal(size=L)
    jobs = {
        "scan_full": lambda: scan_full(tree, p),
        "scan_backward": lambda: scan_full_backward(tree, p, G).d_a,
        "mst_kruskal": lambda: minimum_spanning_tree(edges, L, "kruskal").edges.w,
        "mst_prim": lambda: minimum_spanning_tree(edges, L, "prim").edges.w,
        "mst_boruvka_soft": lambda: minimum_spanning_tree(edges, L, "boruvka_soft").edges.w,
        "soft_heap": lambda: heap_workload(keys),
    }
    return jobs


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096")
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if "compiled" not in _backend.AVAILABLE:
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'L':>6}  {'kernel':<18}{'python s':>12}{'compiled s':>12}{'speedup':>9}")
    for L in (int(s) for s in args.sizes.split(",")):
        jobs = workloads(L, args.N, args.seed)
        for name, fn in jobs.items():
            res, fns = {}, {}
            for b in ("python", "compiled"):
                with _backend.use(b):
                    res[b] = fn()

                def run(b=b):
                    with _backend.use(b):
                        fn()
                fns[b] = run
            if res["python"] is not None and not np.allclose(res["python"], res["compiled"],
                                                             rtol=1e-12, atol=1e-12):
                print(f"{L:>6}  {name:<18}backends disagree", file=sys.stderr)
                return 2
            t = time_interleaved(fns, args.repeats, warmup=1, min_sample=0.02)
            tp, tc = float(np.median(t["python"])), float(np.median(t["compiled"]))
            print(f"{L:>6}  {name:<18}{tp:>12.5f}{tc:>12.5f}{tp / tc:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
