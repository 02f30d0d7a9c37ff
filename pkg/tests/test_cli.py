import json

import numpy as np
import pytest

from ggssm import _backend
from ggssm.cli import resolve_threads, run_cli, UsageError
from ggssm.io import read_json, read_tensor, read_tree, write_container, write_features_csv, write_tensor
from ggssm.ssm_layer import LayerConfig, LayerWeights, layer_forward


@pytest.fixture
def triangle(tmp_path):
    p = tmp_path / "tri.csv"
    p.write_text("u,v,w\n0,1,1\n1,2,2\n0,2,3\n")
    return p


@pytest.fixture
def feats(tmp_path):
    x = np.random.default_rng(0).normal(size=(24, 5))
    write_tensor(tmp_path / "x.ggt", x)
    return tmp_path / "x.ggt", x


def run(*argv):
    return run_cli([str(a) for a in argv])


def test_mst_triangle(tmp_path, triangle, capsys):
    assert run("mst", "--edges", triangle, "--algo", "kruskal", "--out", tmp_path / "t.json") == 0
    st, root = read_tree(tmp_path / "t.json")
    assert st.total_weight == 3.0 and st.edge_set() == {(0, 1), (1, 2)}
    assert json.loads((tmp_path / "t.json").read_text())["total_weight"] == 3
    assert "total_weight=3.0" in capsys.readouterr().out


@pytest.mark.parametrize("algo", ["prim", "boruvka_soft"])
def test_mst_triangle_other_algorithms(tmp_path, triangle, algo):
    assert run("mst", "--edges", triangle, "--algo", algo, "--out", tmp_path / "t.json") == 0
    assert read_tree(tmp_path / "t.json")[0].total_weight == 3.0


def test_mst_from_features(tmp_path, feats):
    path, _ = feats
    assert run("mst", "--input", path, "--topology", "knn:3", "--out", tmp_path / "t.json") == 0
    st, _ = read_tree(tmp_path / "t.json")
    assert st.L == 24 and len(st.edges) == 23


def test_mst_then_scan_round_trip(tmp_path, feats, capsys):
    path, x = feats
    assert run("mst", "--input", path, "--out", tmp_path / "t.json") == 0
    rng = np.random.default_rng(1)
    a, u = rng.uniform(0.1, 0.9, (24, 3)), rng.normal(size=(24, 3))
    write_container(tmp_path / "p.ggt", {"a": a, "u": u})
    assert run("scan", "--tree", tmp_path / "t.json", "--params", tmp_path / "p.ggt",
               "--oracle-check", "--out", tmp_path / "h.ggt") == 0
    assert "ok" in capsys.readouterr().out
    # the same scan in process, on the tree the layer itself would build
    from ggssm.ssm_layer import build_tree
    from ggssm.tree_scan import scan_full
    h = scan_full(build_tree(x, LayerConfig()), (a, u))
    assert read_tensor(tmp_path / "h.ggt").tobytes() == h.tobytes()


def test_scan_oracle_check_requires_full_mode(tmp_path, triangle):
    run("mst", "--edges", triangle, "--out", tmp_path / "t.json")
    write_container(tmp_path / "p.ggt", {"a": np.full((3, 1), .5), "u": np.ones((3, 1))})
    assert run("scan", "--tree", tmp_path / "t.json", "--params", tmp_path / "p.ggt",
               "--mode", "rooted", "--oracle-check") == 1
    assert run("scan", "--tree", tmp_path / "t.json", "--params", tmp_path / "p.ggt",
               "--mode", "rooted") == 0


def test_scan_params_must_be_container(tmp_path, triangle):
    run("mst", "--edges", triangle, "--out", tmp_path / "t.json")
    write_tensor(tmp_path / "p.ggt", np.ones((3, 1)))
    assert run("scan", "--tree", tmp_path / "t.json", "--params", tmp_path / "p.ggt") == 1


def test_layer_matches_in_process_and_reuses_tree(tmp_path, feats):
    path, x = feats
    out1, out2 = tmp_path / "y1.ggt", tmp_path / "y2.ggt"
    assert run("layer", "--input", path, "--N", 4, "--seed", 3, "--tree-out", tmp_path / "t.json",
               "--save-weights", tmp_path / "w.ggt", "--out", out1) == 0
    want = layer_forward(x, LayerWeights.init(5, 4, seed=3))
    assert read_tensor(out1).tobytes() == want.tobytes()
    assert run("layer", "--input", path, "--weights", tmp_path / "w.ggt", "--tree",
               tmp_path / "t.json", "--out", out2) == 0
    assert read_tensor(out2).tobytes() == want.tobytes()


def test_layer_csv_input(tmp_path, feats):
    _, x = feats
    write_features_csv(tmp_path / "x.csv", x)
    assert run("layer", "--input", tmp_path / "x.csv", "--N", 4, "--out", tmp_path / "y.ggt") == 0
    assert read_tensor(tmp_path / "y.ggt").shape == (24, 5)


def test_gradcheck_command(tmp_path):
    assert run("gradcheck", "--trials", 3, "--out", tmp_path / "g.json") == 0
    doc = read_json(tmp_path / "g.json")
    assert doc["passed"] and len(doc["trials"]) == 3
    assert run("gradcheck", "--trials", 2, "--tol", 1e-30) == 2


def test_selftest_command(tmp_path, capsys):
    assert run("selftest", "--seed", 7, "--out", tmp_path / "s.json") == 0
    out = capsys.readouterr().out
    assert "selftest: 9/9 invariant groups passed" in out
    assert read_json(tmp_path / "s.json")["passed"]


def test_train_command(tmp_path):
    assert run("train", "--L", 8, "--D-model", 4, "--N", 2, "--steps", 3,
               "--out", tmp_path / "t.json") == 0
    doc = read_json(tmp_path / "t.json")
    assert doc["runs"][0]["seed"] == 0 and "ggssm_beats_sequential" in doc["runs"][0]
    assert "step_times" not in doc["runs"][0]["ggssm"]


def test_train_divergence_exit_code():
    assert run("train", "--L", 6, "--D-model", 3, "--N", 2, "--steps", 30, "--lr", 1e7,
               "--batch", 0) == 2


def test_bench_and_ablate_commands(tmp_path):
    assert run("bench", "--sizes", "128,256", "--repeats", 1, "--N", 4, "--oracle-sizes", "32,64",
               "--channels", "2,4", "--channel-L", 64, "--out", tmp_path / "b.json") == 0
    doc = read_json(tmp_path / "b.json")
    assert len(doc["scaling"]["scan_ratios"]) == 1 and doc["channels"]["channels"] == [2, 4]
    assert run("ablate", "--sizes", "16,32", "--repeats", 1, "--D-model", 4, "--N", 2,
               "--out", tmp_path / "a.json", "--table", tmp_path / "a.txt") == 0
    assert "kruskal" in (tmp_path / "a.txt").read_text()


@pytest.mark.parametrize("argv", [
    ["mst", "--edges", "tri.csv", "--out", "t.json"],
    ["layer", "--input", "x.ggt", "--N", "4", "--out", "y.ggt"],
    ["selftest", "--out", "s.json"],
    ["train", "--L", "8", "--D-model", "4", "--N", "2", "--steps", "3", "--out", "t.json"],
    ["gradcheck", "--trials", "2", "--out", "g.json"],
])
def test_idempotence(tmp_path, monkeypatch, triangle, feats, argv):
    monkeypatch.chdir(tmp_path)
    out = tmp_path / argv[-1]
    assert run_cli(argv) == 0
    first = out.read_bytes()
    out.unlink()
    assert run_cli(argv) == 0
    assert out.read_bytes() == first


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["mst"], ["mst", "--bogus"],
                                  ["mst", "--edges", "a", "--input", "b"],
                                  ["bench", "--sizes", "1,x"], ["scan", "--tree", "t"]])
def test_usage_errors(argv, capsys):
    assert run_cli(argv) == 1
    assert "error" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert run("mst", "--input", tmp_path / "nope.ggt") == 1
    assert "nope.ggt" in capsys.readouterr().err


def test_bad_topology(feats):
    assert run("mst", "--input", feats[0], "--topology", "grid:3x3") == 1


def test_backend_flag_is_scoped(triangle, tmp_path):
    before = _backend.name()
    assert run("mst", "--edges", triangle, "--backend", "python") == 0
    assert _backend.name() == before


def test_threads(monkeypatch):
    monkeypatch.setenv("GGSSM_THREADS", "3")
    assert resolve_threads(None) == 3 and resolve_threads(2) == 2
    monkeypatch.setenv("GGSSM_THREADS", "many")
    with pytest.raises(UsageError):
        resolve_threads(None)
    monkeypatch.delenv("GGSSM_THREADS")
    assert resolve_threads(None) == 1
    with pytest.raises(UsageError):
        resolve_threads(0)


def test_bad_threads_env_exit_code(monkeypatch, tmp_path, triangle):
    run("mst", "--edges", triangle, "--out", tmp_path / "t.json")
    write_container(tmp_path / "p.ggt", {"a": np.full((3, 1), .5), "u": np.ones((3, 1))})
    monkeypatch.setenv("GGSSM_THREADS", "x")
    assert run("scan", "--tree", tmp_path / "t.json", "--params", tmp_path / "p.ggt") == 1


def test_help_exits_zero(capsys):
    assert run_cli(["--help"]) == 0


def test_console_script(tmp_path, triangle):
    import shutil
    import subprocess
    exe = shutil.which("ggssm")
    if exe is None:
        pytest.skip("console script not installed")
    r = subprocess.run([exe, "mst", "--edges", str(triangle)], capture_output=True, text=True)
    assert r.returncode == 0 and "total_weight=3.0" in r.stdout
    r = subprocess.run([exe, "nope"], capture_output=True, text=True)
    assert r.returncode == 1 and r.stderr
