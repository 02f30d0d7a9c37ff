"""Seeded invariant checks, grouped, plus a runner that summarises them.

Every ``check_*`` function returns a :class:`CheckResult` and never raises
on a failed invariant; the counts default to quick settings and the
acceptance tests call the same functions with larger ones.
"""

from __future__ import annotations

import math
import tempfile
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InvariantViolation
from ..graph_build import EdgeList
from ..io import load_tree, dump_tree, read_container, read_tensor, write_container, write_tensor
from ..mst import (ALGORITHMS, chain_tree, is_spanning_tree, make_soft_heap, minimum_spanning_tree,
                   mst_bruteforce, root_tree, soft_heap_extract_min, soft_heap_insert)
from ..ssm_layer import sequential_scan_1d
from ..tree_scan import ScanParams, scan_dense_oracle, scan_full, scan_rooted
from .ablate import ablate_mst
from .gradcheck import SHAPES, gradcheck_suite, make_tree
from .tasks import gen_tree_task


@dataclass
class CheckResult:
    name: str
    passed: bool
    cases: int
    worst: float = 0.0
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{mark}] {self.name}: {self.cases} cases, worst {self.worst:.3g}{extra}"


def rel_sup(x, ref) -> float:
    x, ref = np.asarray(x, dtype=np.float64), np.asarray(ref, dtype=np.float64)
    scale = float(np.max(np.abs(ref))) if ref.size else 0.0
    diff = float(np.max(np.abs(x - ref))) if ref.size else 0.0
    return diff / scale if scale > 0 else diff


def _scan_case(rng, L, N):
    shape = SHAPES[int(rng.integers(len(SHAPES)))]
    tree = make_tree(shape, L, rng)
    return tree, ScanParams(rng.uniform(0.05, 0.99, (L, N)), rng.normal(size=(L, N)))


def check_oracle_equivalence(instances: int = 30, seed: int = 0, L_max: int = 256,
                             N_choices=(1, 4, 16), tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        L = int(rng.integers(2, L_max + 1))
        tree, p = _scan_case(rng, L, int(rng.choice(N_choices)))
        worst = max(worst, rel_sup(scan_full(tree, p), scan_dense_oracle(tree, p)))
    return CheckResult("oracle_equivalence", worst <= tol, instances, worst)


def check_chain_reduction(chains: int = 20, seed: int = 0, L_max: int = 256,
                          tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(chains):
        L = int(rng.integers(1, L_max + 1))
        N = int(rng.integers(1, 9))
        p = ScanParams(rng.uniform(0.05, 0.99, (L, N)), rng.normal(size=(L, N)))
        worst = max(worst, rel_sup(scan_rooted(chain_tree(L), p), sequential_scan_1d(p)))
    return CheckResult("chain_reduction", worst <= tol, chains, worst)


def check_root_invariance(trees: int = 20, seed: int = 0, roots: int = 5, L_max: int = 256,
                          tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trees):
        L = int(rng.integers(2, L_max + 1))
        tree, p = _scan_case(rng, L, int(rng.integers(1, 9)))
        el = EdgeList(np.flatnonzero(tree.parent >= 0), tree.parent[tree.parent >= 0],
                      np.ones(L - 1))
        ref = scan_full(tree, p)
        for r in rng.choice(L, size=min(roots, L), replace=False).tolist():
            worst = max(worst, rel_sup(scan_full(root_tree(el, r, L), p), ref))
    return CheckResult("root_invariance", worst <= tol, trees, worst)


def random_connected_graph(rng, L: int, distinct: bool) -> EdgeList:
    """A random spanning tree plus random extra edges; integer weights
    when ``distinct`` is off, so ties are common."""
    perm = rng.permutation(L)
    pairs = {tuple(sorted((int(perm[i]), int(perm[rng.integers(i)])))) for i in range(1, L)}
    for _ in range(int(rng.integers(0, L * (L - 1) // 2 + 1))):
        a, b = rng.choice(L, 2, replace=False).tolist()
        pairs.add((min(a, b), max(a, b)))
    P = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    w = rng.permutation(len(P)) + rng.uniform(0, 0.5, len(P)) if distinct else \
        rng.integers(1, 4, len(P)).astype(np.float64)
    return EdgeList(P[:, 0], P[:, 1], w)


def check_mst_optimality(graphs: int = 100, seed: int = 0, L_max: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = []
    for g in range(graphs):
        L = int(rng.integers(1, L_max + 1))
        distinct = bool(g % 2)
        el = random_connected_graph(rng, L, distinct) if L > 1 else EdgeList([], [], [])
        ref = mst_bruteforce(el, L)
        for algo in ALGORITHMS:
            t = minimum_spanning_tree(el, L, algo)
            ok = is_spanning_tree(t) and t.total_weight == ref.total_weight
            if distinct:
                ok = ok and t.edge_set() == ref.edge_set()
            if not ok:
                bad.append(f"graph {g} {algo}")
    return CheckResult("mst_optimality", not bad, graphs, float(len(bad)), "; ".join(bad[:3]))


def soft_heap_sequence(rng, n: int, epsilon: float) -> tuple[bool, str]:
    """Random inserts and extractions, then a full drain. Checks the
    corruption bound after every operation and conserves payloads."""
    heap = make_soft_heap(epsilon)
    keys = rng.normal(size=n)
    if rng.random() < 0.3:
        keys = np.round(keys * 4) / 4  # many ties
    inserted, out = 0, Counter()
    while inserted < n or len(heap):
        if inserted < n and (not len(heap) or rng.random() < 0.6):
            soft_heap_insert(heap, float(keys[inserted]), inserted)
            inserted += 1
        else:
            item, key, _ = soft_heap_extract_min(heap)
            if key != keys[item]:
                return False, f"payload {item} came back with key {key}, inserted {keys[item]}"
            out[item] += 1
        bound = math.ceil(epsilon * heap.insertions)
        if heap.corrupted_count > bound:
            return False, f"{heap.corrupted_count} corrupted > {bound} after {heap.insertions} inserts"
    if out != Counter(range(n)):
        return False, "payload multiset not conserved"
    return True, ""


def check_soft_heap(sequences: int = 50, seed: int = 0, n_max: int = 2000,
                    epsilons=(1 / 8, 1 / 16)) -> CheckResult:
    rng = np.random.default_rng(seed)
    for s in range(sequences):
        ok, why = soft_heap_sequence(rng, int(rng.integers(1, n_max + 1)), epsilons[s % len(epsilons)])
        if not ok:
            return CheckResult("soft_heap", False, s + 1, 1.0, why)
    return CheckResult("soft_heap", True, sequences)


def check_gradients(trials: int = 10, seed: int = 0) -> CheckResult:
    rep = gradcheck_suite(trials, seed)
    return CheckResult("gradients", rep.passed, trials, rep.max_rel_error, rep.worst)


def check_io_roundtrip(seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        arrs = {"a": rng.normal(size=(5, 3)), "b": rng.normal(size=7).astype(np.float32)}
        write_tensor(d / "t.ggt", arrs["a"])
        write_container(d / "c.ggt", arrs)
        back = read_container(d / "c.ggt")
        ok = read_tensor(d / "t.ggt").tobytes() == arrs["a"].tobytes()
        ok = ok and all(back[k].tobytes() == v.tobytes() and back[k].dtype == v.dtype
                        for k, v in arrs.items())
    el = random_connected_graph(rng, 6, True)
    st = minimum_spanning_tree(el, 6)
    st2, root = load_tree(dump_tree(st, 3))
    ok = ok and root == 3 and st2 == st and st2.edges.w.tobytes() == st.edges.w.tobytes()
    return CheckResult("io_roundtrip", bool(ok), 3)


def check_determinism(seed: int = 0) -> CheckResult:
    a = gen_tree_task(seed, 16, n_train=4, n_val=2)
    b = gen_tree_task(seed, 16, n_train=4, n_val=2)
    ok = all(getattr(a, f).tobytes() == getattr(b, f).tobytes()
             for f in ("inputs", "targets", "val_inputs", "val_targets"))
    return CheckResult("determinism", ok, 1)


def check_ablation_identity(seed: int = 0, sizes=(64, 128)) -> CheckResult:
    try:
        ablate_mst(sizes, repeats=1, seed=seed, min_sample=0.0)
    except InvariantViolation as exc:
        return CheckResult("ablation_identity", False, len(sizes), 1.0, str(exc))
    return CheckResult("ablation_identity", True, len(sizes))


GROUPS = {
    "oracle_equivalence": check_oracle_equivalence,
    "chain_reduction": check_chain_reduction,
    "root_invariance": check_root_invariance,
    "mst_optimality": check_mst_optimality,
    "soft_heap": check_soft_heap,
    "gradients": check_gradients,
    "io_roundtrip": check_io_roundtrip,
    "determinism": check_determinism,
    "ablation_identity": check_ablation_identity,
}


@dataclass
class SelftestReport:
    seed: int
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def summary(self) -> str:
        n = sum(r.passed for r in self.results)
        return f"selftest: {n}/{len(self.results)} invariant groups passed"

    def to_dict(self, include_timing: bool = False) -> dict:
        rows = [asdict(r) for r in self.results]
        if not include_timing:
            for r in rows:
                del r["seconds"]
        return {"seed": self.seed, "passed": self.passed, "groups": rows}


def run_selftest(seed: int = 0, groups=None) -> SelftestReport:
    rep = SelftestReport(seed)
    for name in groups or GROUPS:
        t0 = time.perf_counter()
        res = GROUPS[name](seed=seed)
        res.seconds = time.perf_counter() - t0
        rep.results.append(res)
    return rep
