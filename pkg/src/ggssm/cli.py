"""Command-line entry point: ``ggssm <subcommand> [options]``.

Exit codes: 0 on success, 1 on usage, configuration, contract or I/O
errors, 2 when a checked invariant or test fails (including a training
run that diverges). Documents written without ``--timing`` contain no
wall-clock numbers, so reruns with the same inputs and seed produce
byte-identical files; ``bench`` and ``ablate`` exist to measure time and
are the exception.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

import numpy as np

from . import _backend
from .errors import GGSSMError, InvariantViolation, TrainingDiverged
from .graph_build import Topology, build_candidate_edges, weigh_edges
from .io import (is_container, read_container, read_edges_csv, read_features, read_tree,
                 write_container, write_json, write_tensor, write_tree)
from .mst import ALGORITHMS, DEFAULT_EPSILON, minimum_spanning_tree, pick_root, root_tree
from .ssm_layer import ROOT_POLICIES, LayerConfig, LayerWeights, layer_forward_trace
from .tree_scan import CONVENTIONS, MODES, ScanParams, scan_dense_oracle, scan_full, scan_rooted

ORACLE_TOL = 1e-9


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def resolve_threads(flag: int | None) -> int:
    """``--threads`` wins over ``GGSSM_THREADS``; the default is 1."""
    if flag is not None:
        n = flag
    else:
        env = os.environ.get("GGSSM_THREADS", "").strip()
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"GGSSM_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"thread count must be >= 1, got {n}")
    return n


def _ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _layer_config(args) -> LayerConfig:
    return LayerConfig(topology=Topology.parse(args.topology), mst_algorithm=args.algo,
                       scan_mode=args.mode, path_convention=args.convention,
                       root_policy=args.root_policy)


# -- subcommands -------------------------------------------------------------

def cmd_mst(args) -> int:
    if args.edges:
        edges = read_edges_csv(args.edges)
        L = args.L if args.L is not None else (int(max(edges.u.max(), edges.v.max())) + 1
                                               if len(edges) else 1)
        extra = {"algorithm": args.algo, "source": "edges"}
    else:
        fs = read_features(args.input)
        topo = Topology.parse(args.topology)
        edges = weigh_edges(fs, build_candidate_edges(fs, topo))
        L = fs.L
        extra = {"algorithm": args.algo, "topology": topo.to_dict()}
    kw = {"epsilon": args.epsilon} if args.algo == "boruvka_soft" else {}
    st = minimum_spanning_tree(edges, L, args.algo, **kw)
    root = pick_root(st, args.root_policy)
    if args.out:
        write_tree(args.out, st, root, extra)
    print(f"mst: L={L} candidate_edges={len(edges)} total_weight={st.total_weight!r} root={root}")
    return 0


def _read_params(path) -> ScanParams:
    if not is_container(path):
        raise GGSSMError(f"{path}: scan parameters must be a tensor container with 'a' and 'u'")
    t = read_container(path)
    missing = {"a", "u"} - set(t)
    if missing:
        raise GGSSMError(f"{path}: missing tensors {sorted(missing)}")
    return ScanParams(t["a"], t["u"])


def cmd_scan(args) -> int:
    st, root = read_tree(args.tree)
    tree = root_tree(st, root if args.root is None else args.root)
    p = _read_params(args.params)
    threads = resolve_threads(args.threads)
    if args.mode == "full":
        h = scan_full(tree, p, args.convention, threads=threads)
    else:
        h = scan_rooted(tree, p, args.convention)
    if args.out:
        write_tensor(args.out, h)
    print(f"scan: mode={args.mode} L={p.L} N={p.N} backend={_backend.name()}")
    if args.oracle_check:
        if args.mode != "full":
            raise UsageError("--oracle-check compares the full scan; use --mode full")
        ref = scan_dense_oracle(tree, p, args.convention)
        scale = float(np.max(np.abs(ref))) if ref.size else 0.0
        dev = float(np.max(np.abs(h - ref))) / scale if scale > 0 else 0.0
        ok = dev <= ORACLE_TOL
        print(f"oracle check: max relative deviation {dev:.3e} ({'ok' if ok else 'FAILED'})")
        return 0 if ok else 2
    return 0


def _weights(args, D_model: int) -> LayerWeights:
    if args.weights:
        return LayerWeights.from_tensors(read_container(args.weights))
    return LayerWeights.init(D_model, args.N, seed=args.seed)


def cmd_layer(args) -> int:
    fs = read_features(args.input)
    cfg = _layer_config(args)
    w = _weights(args, fs.D_model)
    if args.tree:
        st, root = read_tree(args.tree)
        tr = layer_forward_trace(fs, w, cfg, tree=root_tree(st, root))
    else:
        tr = layer_forward_trace(fs, w, cfg)
        if args.tree_out:
            write_tree(args.tree_out, tr.spanning_tree, tr.tree.root,
                       {"algorithm": cfg.mst_algorithm, "topology": cfg.topology.to_dict()})
    if args.save_weights:
        write_container(args.save_weights, w.to_tensors())
    if args.out:
        write_tensor(args.out, tr.y)
    print(f"layer: L={fs.L} D_model={w.D_model} N={w.N} mode={cfg.scan_mode} "
          f"algo={cfg.mst_algorithm}")
    return 0


def cmd_gradcheck(args) -> int:
    from .harness.gradcheck import gradcheck_suite

    rep = gradcheck_suite(args.trials, args.seed, step=args.step, tol=args.tol)
    if args.out:
        write_json(args.out, rep.to_dict())
    print(f"gradcheck: {args.trials} trials, max relative error {rep.max_rel_error:.3e} "
          f"({rep.worst}); hand case {'ok' if rep.hand['passed'] else 'FAILED'}; "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 2


def cmd_bench(args) -> int:
    from .harness.bench import bench_channels, bench_scaling, format_scaling

    threads = resolve_threads(args.threads)
    rep = bench_scaling(args.sizes, args.repeats, args.N, args.seed,
                        oracle_sizes=args.oracle_sizes, oracle_N=args.oracle_N,
                        mst=not args.no_mst, threads=threads)
    doc = {"scaling": rep.to_dict()}
    text = format_scaling(rep)
    if args.channels:
        ch = bench_channels(args.channel_L, args.channels, args.repeats, args.seed)
        doc["channels"] = ch.to_dict()
        text += "\nchannels at L=%d: " % ch.L + "  ".join(
            f"N={n}:{t:.6f}" for n, t in zip(ch.channels, ch.times))
    if args.out:
        write_json(args.out, doc)
    print(text)
    return 0


def cmd_ablate(args) -> int:
    from .harness.ablate import ablate_mst, format_table

    rep = ablate_mst(args.sizes, args.D_model, args.N, args.repeats, args.seed)
    table = format_table(rep)
    if args.out:
        write_json(args.out, rep.to_dict())
    if args.table:
        Path(args.table).write_text(table + "\n")
    print(table)
    return 0


def cmd_train(args) -> int:
    from .harness.tasks import gen_tree_task
    from .harness.train import MODELS, TrainConfig, train_toy

    models = MODELS if args.model == "both" else (args.model,)
    runs, halved, wins = [], 0, 0
    for k in range(args.seeds):
        seed = args.seed + k
        task = gen_tree_task(seed, args.L, args.D_model, args.N)
        res = {}
        for m in models:
            cfg = TrainConfig(steps=args.steps, learning_rate=args.lr, batch=args.batch,
                              seed=seed, model=m)
            res[m] = train_toy(task, cfg)
        run = {"seed": seed}
        run.update({m: r.to_dict(args.timing) for m, r in res.items()})
        if "ggssm" in res:
            g = res["ggssm"]
            run["halved"] = g.final_train_mse < 0.5 * g.initial_loss
            halved += run["halved"]
        if len(res) == 2:
            run["ggssm_beats_sequential"] = res["ggssm"].final_val_mse < res["sequential"].final_val_mse
            wins += run["ggssm_beats_sequential"]
        runs.append(run)
        line = "  ".join(f"{m} train {r.final_train_mse:.4f} val {r.final_val_mse:.4f}"
                         for m, r in res.items())
        print(f"seed {seed}: {line}")
    doc = {"task": "tree_diffusion", "L": args.L, "D_model": args.D_model, "N": args.N,
           "steps": args.steps, "learning_rate": args.lr, "batch": args.batch, "runs": runs,
           "halved": halved, "ggssm_wins": wins if args.model == "both" else None}
    if args.out:
        write_json(args.out, doc)
    print(f"train: loss halved in {halved}/{args.seeds} seeds"
          + (f"; tree model beats the 1-D baseline in {wins}/{args.seeds}" if args.model == "both" else ""))
    return 0


def cmd_selftest(args) -> int:
    from .harness.selftest import run_selftest

    rep = run_selftest(args.seed)
    for r in rep.results:
        print(r.line())
    print(rep.summary())
    if args.out:
        write_json(args.out, rep.to_dict(args.timing))
    return 0 if rep.passed else 2


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness (default 0)")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads; overrides GGSSM_THREADS (default 1)")
    common.add_argument("--backend", choices=("auto", "python", "compiled"), default="auto",
                        help="kernel backend (default: compiled when built)")

    layer_opts = _Parser(add_help=False)
    layer_opts.add_argument("--topology", default="dense", help="dense, grid:HxW[:8] or knn:k")
    layer_opts.add_argument("--algo", choices=ALGORITHMS, default="kruskal")
    layer_opts.add_argument("--root-policy", choices=ROOT_POLICIES, default="node_zero")

    p = _Parser(prog="ggssm", description="Minimum-spanning-tree state space model toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("mst", parents=[common, layer_opts], help="build the minimum spanning tree of a feature set")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", help="features (GGT1 tensor or CSV with header)")
    src.add_argument("--edges", help="weighted edge list, CSV with header u,v,w")
    s.add_argument("--L", type=int, default=None, help="node count for --edges (default: max index + 1)")
    s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON, help="soft heap error rate")
    s.add_argument("--out", help="tree document to write")
    s.set_defaults(func=cmd_mst)

    s = sub.add_parser("scan", parents=[common], help="run a tree scan over stored parameters")
    s.add_argument("--tree", required=True, help="tree document")
    s.add_argument("--params", required=True, help="tensor container holding 'a' and 'u'")
    s.add_argument("--mode", choices=MODES, default="full")
    s.add_argument("--convention", choices=CONVENTIONS, default="edge_count")
    s.add_argument("--root", type=int, default=None, help="override the document's root")
    s.add_argument("--oracle-check", action="store_true", help="compare with the dense oracle")
    s.add_argument("--out", help="hidden states tensor to write")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("layer", parents=[common, layer_opts], help="forward pass of one layer")
    s.add_argument("--input", required=True)
    s.add_argument("--weights", help="tensor container of layer weights (default: seeded init)")
    s.add_argument("--N", type=int, default=16, help="state width for seeded init")
    s.add_argument("--mode", choices=MODES, default="full")
    s.add_argument("--convention", choices=CONVENTIONS, default="edge_count")
    s.add_argument("--tree", help="use this tree document instead of building one")
    s.add_argument("--tree-out", help="write the tree the layer built")
    s.add_argument("--save-weights", help="write the weights used")
    s.add_argument("--out", help="output tensor to write")
    s.set_defaults(func=cmd_layer)

    s = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--out")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("bench", parents=[common], help="scan and MST scaling benchmark")
    s.add_argument("--sizes", type=_ints, default=[2 ** k for k in range(12, 18)])
    s.add_argument("--repeats", type=int, default=7)
    s.add_argument("--N", type=int, default=256)
    s.add_argument("--oracle-sizes", type=_ints, default=[2 ** 10, 2 ** 11, 2 ** 12])
    s.add_argument("--oracle-N", type=int, default=4)
    s.add_argument("--no-mst", action="store_true", help="skip MST build timing")
    s.add_argument("--channels", type=_ints, default=[], help="also time these state widths")
    s.add_argument("--channel-L", type=int, default=2 ** 13)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("ablate", parents=[common], help="compare MST algorithms inside the layer")
    s.add_argument("--sizes", type=_ints, default=[256, 512, 1024, 2048])
    s.add_argument("--repeats", type=int, default=7)
    s.add_argument("--D-model", type=int, default=16)
    s.add_argument("--N", type=int, default=16)
    s.add_argument("--out", help="JSON report")
    s.add_argument("--table", help="plain-text table")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("train", parents=[common], help="toy training on tree_diffusion")
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    s.add_argument("--L", type=int, default=32)
    s.add_argument("--D-model", type=int, default=16)
    s.add_argument("--N", type=int, default=4)
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--batch", type=int, default=16, help="0 for full batches")
    s.add_argument("--model", choices=("both", "ggssm", "sequential"), default="both")
    s.add_argument("--timing", action="store_true", help="include per-step times")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("selftest", parents=[common], help="run every invariant group")
    s.add_argument("--timing", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_selftest)
    return p


def run_cli(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        scope = _backend.use(args.backend) if args.backend != "auto" else contextlib.nullcontext()
        with scope:
            return args.func(args)
    except UsageError as exc:
        print(f"ggssm {args.command}: {exc}", file=sys.stderr)
        return 1
    except (InvariantViolation, TrainingDiverged) as exc:
        print(f"ggssm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (GGSSMError, OSError, ValueError) as exc:
        print(f"ggssm {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())
