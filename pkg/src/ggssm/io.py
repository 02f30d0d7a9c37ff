"""File formats.

``GGT1`` tensor: the magic ``b"GGT1"`` then, little-endian, a u8 dtype tag
(0 = float32, 1 = float64), a u32 rank, one u32 per dimension and the
row-major payload.

A container stores several named tensors in one file. It uses the same
magic with dtype tag 255, then a u32 byte length and a UTF-8 JSON
manifest listing ``name``, ``dtype``, ``shape``, ``offset`` and ``nbytes``
for each tensor. Offsets count from the end of the manifest.

Tree, config and metrics documents are JSON objects with a
``schema_version`` field. Floats in tree documents are written with 17
significant digits, so weights survive a round trip exactly.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ContractViolation, InvalidInput
from .graph_build import EdgeList, FeatureSet
from .mst import SpanningTree, total_weight

MAGIC = b"GGT1"
SCHEMA_VERSION = 1
CONTAINER_TAG = 255
_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class FormatError(InvalidInput):
    """A file does not follow the expected layout."""


def _tensor_bytes(arr) -> bytes:
    a = np.asarray(arr)
    if a.dtype not in (np.float32, np.float64):
        a = a.astype(np.float64)
    a = np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<"))
    head = MAGIC + struct.pack("<BI", _TAGS[a.dtype], a.ndim)
    head += struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes(order="C")


def _parse_tensor(buf: bytes, pos: int = 0) -> tuple[np.ndarray, int]:
    if buf[pos:pos + 4] != MAGIC:
        raise FormatError("missing GGT1 magic")
    try:
        tag, rank = struct.unpack_from("<BI", buf, pos + 4)
        if tag not in _DTYPES:
            raise FormatError(f"unknown dtype tag {tag}")
        pos += 9
        shape = struct.unpack_from(f"<{rank}I", buf, pos)
    except struct.error:
        raise FormatError("truncated GGT1 header") from None
    pos += 4 * rank
    dt = _DTYPES[tag]
    n = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) < pos + n:
        raise FormatError(f"GGT1 payload truncated: need {n} bytes, have {len(buf) - pos}")
    arr = np.frombuffer(buf, dtype=dt, count=n // dt.itemsize, offset=pos).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), pos + n


def _atomic_write(path, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_tensor(path, arr) -> None:
    _atomic_write(path, _tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) >= 5 and buf[:4] == MAGIC and buf[4] == CONTAINER_TAG:
        raise FormatError(f"{path} is a tensor container; use read_container")
    arr, end = _parse_tensor(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after the tensor payload")
    return arr


def write_container(path, tensors: Mapping[str, np.ndarray]) -> None:
    blobs, entries, offset = [], [], 0
    for name in tensors:
        b = _tensor_bytes(tensors[name])
        a = np.asarray(tensors[name])
        entries.append({"name": name, "dtype": "float32" if a.dtype == np.float32 else "float64",
                        "shape": list(a.shape), "offset": offset, "nbytes": len(b)})
        blobs.append(b)
        offset += len(b)
    manifest = json.dumps({"schema_version": SCHEMA_VERSION, "tensors": entries},
                          sort_keys=True).encode()
    head = MAGIC + struct.pack("<BI", CONTAINER_TAG, len(manifest)) + manifest
    _atomic_write(path, head + b"".join(blobs))


def read_container(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC or len(buf) < 9 or buf[4] != CONTAINER_TAG:
        raise FormatError(f"{path} is not a GGT1 tensor container")
    (mlen,) = struct.unpack_from("<I", buf, 5)
    try:
        manifest = json.loads(buf[9:9 + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"bad container manifest: {exc}") from None
    base = 9 + mlen
    out = {}
    for ent in manifest["tensors"]:
        arr, end = _parse_tensor(buf, base + ent["offset"])
        if end - (base + ent["offset"]) != ent["nbytes"] or list(arr.shape) != ent["shape"]:
            raise FormatError(f"manifest entry {ent['name']!r} does not match its payload")
        out[ent["name"]] = arr
    return out


def is_container(path) -> bool:
    with open(path, "rb") as fh:
        head = fh.read(5)
    return len(head) == 5 and head[:4] == MAGIC and head[4] == CONTAINER_TAG


def read_features(path) -> FeatureSet:
    """A feature matrix from a GGT1 tensor, or from a CSV file with a header row."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == MAGIC:
        return FeatureSet(read_tensor(path))
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"cannot parse {path} as CSV: {exc}") from None
    return FeatureSet(data)


def write_features_csv(path, x) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    header = ",".join(f"f{j}" for j in range(x.shape[1]))
    np.savetxt(path, x, delimiter=",", header=header, comments="", fmt="%.17g")


def read_edges_csv(path) -> EdgeList:
    """A weighted edge list from a CSV file with the header ``u,v,w``."""
    path = Path(path)
    with open(path) as fh:
        header = [c.strip().lower() for c in fh.readline().split(",")]
    if header != ["u", "v", "w"]:
        raise FormatError(f"{path}: edge CSV needs the header u,v,w, got {','.join(header)!r}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"cannot parse {path} as an edge CSV: {exc}") from None
    data = data.reshape(-1, 3)
    ends = data[:, :2]
    if np.any(ends != np.round(ends)):
        raise FormatError(f"{path}: edge endpoints must be integers")
    return EdgeList(ends[:, 0].astype(np.int64), ends[:, 1].astype(np.int64), data[:, 2])


def _g17(x: float) -> str:
    return "%.17g" % x


def dump_tree(tree: SpanningTree, root: int = 0, extra: Mapping | None = None) -> str:
    head = {"schema_version": SCHEMA_VERSION, "L": tree.L, "root": int(root)}
    if extra:
        head.update(extra)
    lines = ["{"]
    for k, v in head.items():
        lines.append(f"  {json.dumps(k)}: {json.dumps(v, sort_keys=True)},")
    lines.append(f'  "total_weight": {_g17(tree.total_weight)},')
    rows = [f"    [{u}, {v}, {_g17(w)}]" for u, v, w in
            zip(tree.edges.u.tolist(), tree.edges.v.tolist(), tree.edges.w.tolist())]
    lines.append('  "edges": [' + ("\n" + ",\n".join(rows) + "\n  ]" if rows else "]"))
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_tree(path, tree: SpanningTree, root: int = 0, extra: Mapping | None = None) -> None:
    _atomic_write(path, dump_tree(tree, root, extra).encode())


def load_tree(text: str) -> tuple[SpanningTree, int]:
    try:
        doc = json.loads(text)
        L = int(doc["L"])
        root = int(doc["root"])
        rows = doc["edges"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad tree document: {exc}") from None
    if rows:
        arr = np.array(rows, dtype=np.float64).reshape(-1, 3)
        el = EdgeList(arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2])
    else:
        el = EdgeList(np.empty(0), np.empty(0), np.empty(0))
    if len(el) != L - 1:
        raise ContractViolation(f"tree document has {len(el)} edges for L={L}")
    el.check(L)
    return SpanningTree(el, L, total_weight(el.w)), root


def read_tree(path) -> tuple[SpanningTree, int]:
    return load_tree(Path(path).read_text())


def dump_json(doc: Mapping) -> str:
    body = {"schema_version": SCHEMA_VERSION}
    body.update(doc)
    return json.dumps(body, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, doc: Mapping) -> None:
    _atomic_write(path, dump_json(doc).encode())


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad JSON in {path}: {exc}") from None
