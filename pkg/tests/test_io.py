import json
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from ggssm.errors import ContractViolation
from ggssm.harness.selftest import random_connected_graph
from ggssm.io import (MAGIC, FormatError, dump_json, dump_tree, is_container, load_tree,
                      read_container, read_edges_csv, read_features, read_json, read_tensor,
                      read_tree, write_container, write_features_csv, write_json, write_tensor,
                      write_tree)
from ggssm.mst import mst_kruskal


def test_tensor_layout(tmp_path):
    write_tensor(tmp_path / "t.ggt", np.array([[1.0, 2.0]], dtype=np.float32))
    raw = (tmp_path / "t.ggt").read_bytes()
    assert raw[:4] == MAGIC
    assert struct.unpack_from("<BI2I", raw, 4) == (0, 2, 1, 2)
    assert raw[17:] == np.array([1.0, 2.0], dtype="<f4").tobytes()


@given(arrays(st.sampled_from([np.float32, np.float64]), array_shapes(max_dims=3, min_side=0),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_roundtrip(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("t") / "a.ggt"
    write_tensor(p, arr)
    back = read_tensor(p)
    assert back.dtype == arr.dtype and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_tensor_integers_become_float64(tmp_path):
    write_tensor(tmp_path / "i.ggt", np.arange(3))
    assert read_tensor(tmp_path / "i.ggt").dtype == np.float64


@pytest.mark.parametrize("blob", [b"NOPE", MAGIC + b"\x07\x00\x00\x00\x00",
                                  MAGIC + b"\x01\x01\x00\x00\x00\x05\x00\x00\x00" + b"\x00" * 8,
                                  MAGIC + b"\x01"])
def test_bad_tensors(tmp_path, blob):
    (tmp_path / "b.ggt").write_bytes(blob)
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "b.ggt")


def test_trailing_bytes(tmp_path):
    write_tensor(tmp_path / "t.ggt", np.zeros(2))
    with open(tmp_path / "t.ggt", "ab") as fh:
        fh.write(b"x")
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "t.ggt")


def test_container_roundtrip(tmp_path, rng):
    t = {"a": rng.normal(size=(3, 2)), "u": rng.normal(size=3).astype(np.float32)}
    write_container(tmp_path / "c.ggt", t)
    assert is_container(tmp_path / "c.ggt")
    back = read_container(tmp_path / "c.ggt")
    assert list(back) == ["a", "u"]
    assert all(back[k].tobytes() == t[k].tobytes() and back[k].dtype == t[k].dtype for k in t)
    with pytest.raises(FormatError):
        read_tensor(tmp_path / "c.ggt")
    write_tensor(tmp_path / "t.ggt", t["a"])
    assert not is_container(tmp_path / "t.ggt")
    with pytest.raises(FormatError):
        read_container(tmp_path / "t.ggt")


def test_features_from_csv_and_tensor(tmp_path, rng):
    x = rng.normal(size=(5, 3))
    write_features_csv(tmp_path / "f.csv", x)
    assert read_features(tmp_path / "f.csv").data.tobytes() == x.tobytes()
    write_tensor(tmp_path / "f.ggt", x)
    assert read_features(tmp_path / "f.ggt").data.tobytes() == x.tobytes()
    (tmp_path / "bad.csv").write_text("a,b\n1,x\n")
    with pytest.raises(FormatError):
        read_features(tmp_path / "bad.csv")


def test_edges_csv(tmp_path):
    (tmp_path / "e.csv").write_text("u,v,w\n0,1,1\n1,2,2\n0,2,3\n")
    el = read_edges_csv(tmp_path / "e.csv")
    assert mst_kruskal(el, 3).total_weight == 3.0
    (tmp_path / "h.csv").write_text("a,b,c\n0,1,1\n")
    with pytest.raises(FormatError):
        read_edges_csv(tmp_path / "h.csv")
    (tmp_path / "f.csv").write_text("u,v,w\n0.5,1,1\n")
    with pytest.raises(FormatError):
        read_edges_csv(tmp_path / "f.csv")


@given(st.integers(1, 8), st.integers(0, 2 ** 31))
def test_tree_document_roundtrip(L, seed):
    rng = np.random.default_rng(seed)
    el = random_connected_graph(rng, L, True) if L > 1 else []
    t = mst_kruskal(el, L)
    t2, root = load_tree(dump_tree(t, L - 1))
    assert t2 == t and root == L - 1 and t2.total_weight == t.total_weight


def test_tree_document_file(tmp_path):
    t = mst_kruskal([(0, 1, 0.1), (1, 2, 1 / 3)], 3)
    write_tree(tmp_path / "t.json", t, 1, {"algorithm": "kruskal"})
    doc = json.loads((tmp_path / "t.json").read_text())
    assert doc["schema_version"] == 1 and doc["algorithm"] == "kruskal"
    assert read_tree(tmp_path / "t.json") == (t, 1)


@pytest.mark.parametrize("text,exc", [
    ("{", FormatError),
    ('{"L": 3}', FormatError),
    ('{"L": 3, "root": 0, "edges": [[0, 1, 1.0]]}', ContractViolation),
    ('{"L": 2, "root": 0, "edges": [[0, 5, 1.0]]}', ContractViolation),
])
def test_bad_tree_documents(text, exc):
    with pytest.raises(exc):
        load_tree(text)


def test_json_documents(tmp_path):
    write_json(tmp_path / "m.json", {"b": 1, "a": [1.5]})
    text = (tmp_path / "m.json").read_text()
    assert text == dump_json({"a": [1.5], "b": 1})
    assert read_json(tmp_path / "m.json") == {"schema_version": 1, "a": [1.5], "b": 1}
    with pytest.raises(ValueError):
        dump_json({"x": float("nan")})
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(FormatError):
        read_json(tmp_path / "bad.json")
