"""Model manifests, weight blobs, MNIST IDX files and the BN correction.

Manifest (JSON, ``"version": "1"``)::

    {
      "version": "1",
      "name": "lenet",
      "inputs": {"data": [1, 28, 28]},
      "outputs": ["fc2"],
      "nodes": [
        {"name": "conv1", "type": "conv", "inputs": ["data"], "output": "conv1",
         "params": {"stride": 1, "pad": 0, "groups": 1},
         "blobs": {"weight": {"file": "lenet.bin", "offset": 0, "length": 800,
                              "count": 200, "shape": [8, 1, 5, 5]}},
         "mul": "exact"},
        ...
      ],
      "meta": {}
    }

Blob files hold little-endian binary32 values, row-major; conv weights are
(out, in/groups, kh, kw) and fc weights (out, in).  ``offset`` and
``length`` are in bytes and ``count`` in elements.  ``mul`` is optional.
"""

from __future__ import annotations

import copy
import gzip
import json
import struct
from pathlib import Path

import numpy as np

from .errors import (BadMagicError, CountMismatchError, ModelParseError,
                     NonFiniteWeightError, ShapeMismatchError)
from .nncore import OPS, ModelGraph, Node, infer_shapes
from .qformat import quantize

MANIFEST_VERSION = "1"
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _named(exc_type, node, msg):
    err = exc_type(f"node {node!r}: {msg}")
    err.node = node
    return err


def _read_blob(root: Path, node, key, ref, cache):
    try:
        fname, offset, length = ref["file"], int(ref["offset"]), int(ref["length"])
        count, shape = int(ref["count"]), tuple(int(s) for s in ref["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise _named(ModelParseError, node, f"blob {key!r} reference incomplete: {exc}") from None
    if fname not in cache:
        try:
            cache[fname] = (root / fname).read_bytes()
        except OSError as exc:
            raise _named(ModelParseError, node, f"cannot read blob file {fname!r}: {exc}") from None
    data = cache[fname]
    if length != 4 * count or count != int(np.prod(shape)):
        raise _named(ShapeMismatchError, node,
                     f"blob {key!r}: length {length} B, count {count}, shape {list(shape)} disagree")
    if offset < 0 or offset + length > len(data):
        raise _named(ShapeMismatchError, node, f"blob {key!r} runs past the end of {fname!r}")
    arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset).astype(np.float32)
    if not np.all(np.isfinite(arr)):
        raise _named(NonFiniteWeightError, node, f"blob {key!r} holds NaN/Inf")
    return arr.reshape(shape)


def parse_manifest(doc: dict, root: Path, pipeline="fixed") -> ModelGraph:
    if not isinstance(doc, dict) or "version" not in doc:
        raise ModelParseError("manifest has no version field")
    if str(doc["version"]) != MANIFEST_VERSION:
        raise ModelParseError(f"unsupported manifest version {doc['version']!r}")
    cache = {}
    nodes = []
    for i, nd in enumerate(doc.get("nodes", [])):
        name = nd.get("name", f"#{i}")
        try:
            op = nd["type"]
            inputs = list(nd["inputs"])
            output = nd.get("output", name)
        except (KeyError, TypeError) as exc:
            raise _named(ModelParseError, name, f"missing field {exc}") from None
        if op not in OPS:
            raise _named(ModelParseError, name, f"unknown node type {op!r}")
        blobs = {k: _read_blob(root, name, k, ref, cache) for k, ref in nd.get("blobs", {}).items()}
        nodes.append(Node(name, op, inputs, output, dict(nd.get("params", {})), blobs, nd.get("mul")))
    try:
        inputs = {k: tuple(v) for k, v in doc["inputs"].items()}
        model = ModelGraph(doc.get("name", "model"), inputs, list(doc["outputs"]), nodes,
                           dict(doc.get("meta", {})))
    except (KeyError, AttributeError, TypeError) as exc:
        raise ModelParseError(f"manifest missing inputs/outputs: {exc}") from None
    infer_shapes(model)
    if pipeline == "fixed":
        for n in model.nodes:
            for key in n.blobs:
                if n.op in ("conv", "fc"):
                    n.qblob(key)
    return model


def load_model(path, pipeline="fixed") -> ModelGraph:
    """Load and validate a manifest; weights are quantized for the fixed pipeline."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"{path}: invalid JSON: {exc}") from None
    return parse_manifest(doc, path.parent, pipeline)


def save_model(model: ModelGraph, path) -> Path:
    """Write ``path`` (manifest) plus ``<stem>.bin`` holding every blob."""
    path = Path(path)
    blob_name = path.with_suffix(".bin").name
    chunks, nodes, offset = [], [], 0
    for n in model.nodes:
        refs = {}
        for key, arr in sorted(n.blobs.items()):
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            refs[key] = {"file": blob_name, "offset": offset, "length": len(raw),
                         "count": int(arr.size), "shape": list(arr.shape)}
            chunks.append(raw)
            offset += len(raw)
        nd = {"name": n.name, "type": n.op, "inputs": list(n.inputs), "output": n.output,
              "params": n.params, "blobs": refs}
        if n.mul:
            nd["mul"] = n.mul
        nodes.append(nd)
    doc = {"version": MANIFEST_VERSION, "name": model.name,
           "inputs": {k: list(v) for k, v in model.inputs.items()},
           "outputs": list(model.outputs), "nodes": nodes, "meta": model.meta}
    path.parent.mkdir(parents=True, exist_ok=True)
    (path.parent / blob_name).write_bytes(b"".join(chunks))
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def adjust_bn(model: ModelGraph, e: float) -> ModelGraph:
    """Rescale stored BN statistics for a multiplier with mean error ``e``.

    Convolution outputs shrink (or grow) by ``1 + e``, so each BN mean is
    multiplied by ``1 + e`` and each variance by ``(1 + e)**2``.  Nothing
    else changes.
    """
    if not e > -1:
        raise ValueError(f"mean error must exceed -1, got {e}")
    out = copy.deepcopy(model)
    scale = 1.0 + float(e)
    for n in out.nodes:
        if n.op != "batchnorm":
            continue
        n.blobs["mean"] = (n.blobs["mean"].astype(np.float64) * scale).astype(np.float32)
        n.blobs["var"] = (n.blobs["var"].astype(np.float64) * scale**2).astype(np.float32)
    return out


def bn_nodes(model: ModelGraph) -> list:
    return [n for n in model.nodes if n.op == "batchnorm"]


# -- MNIST IDX ----------------------------------------------------------------

def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _header(fh, path, want, fmt, kind):
    head = fh.read(struct.calcsize(fmt))
    magic = struct.unpack(">I", head[:4])[0] if len(head) >= 4 else None
    if magic != want:
        got = "none" if magic is None else f"{magic:#010x}"
        raise BadMagicError(f"{path}: {kind} magic {got}, want {want:#010x}")
    if len(head) < struct.calcsize(fmt):
        raise CountMismatchError(f"{path}: truncated header")
    return struct.unpack(fmt, head)


def read_idx_images(path, limit=None) -> np.ndarray:
    with _open(path) as fh:
        _, count, rows, cols = _header(fh, path, IDX_IMAGES_MAGIC, ">IIII", "image")
        if limit is not None:
            count = min(count, limit)
        data = np.frombuffer(fh.read(count * rows * cols), dtype=np.uint8)
    if data.size != count * rows * cols:
        raise CountMismatchError(f"{path}: truncated pixel data")
    return data.reshape(count, rows, cols)


def read_idx_labels(path, limit=None) -> np.ndarray:
    with _open(path) as fh:
        _, count = _header(fh, path, IDX_LABELS_MAGIC, ">II", "label")
        if limit is not None:
            count = min(count, limit)
        data = np.frombuffer(fh.read(count), dtype=np.uint8)
    if data.size != count:
        raise CountMismatchError(f"{path}: truncated label data")
    return data


def _idx_count(path, magic, fmt, kind):
    with _open(path) as fh:
        return _header(fh, path, magic, fmt, kind)[1]


def load_mnist_idx(images, labels, limit=None):
    """Return ``(x, y)``: raw Q16.16 tensors (N, 1, rows, cols) and int labels.

    Pixels are scaled by 1/255 before quantization.
    """
    n_img = _idx_count(images, IDX_IMAGES_MAGIC, ">IIII", "image")
    n_lab = _idx_count(labels, IDX_LABELS_MAGIC, ">II", "label")
    pix = read_idx_images(images, limit)
    lab = read_idx_labels(labels, limit)
    if n_img != n_lab:
        raise CountMismatchError(f"{n_img} images but {n_lab} labels")
    x = quantize(pix.astype(np.float64) / 255.0)[:, None, :, :]
    return x, lab.astype(np.int64)


def write_idx(images_path, labels_path, pixels: np.ndarray, labels: np.ndarray):
    """Write uint8 images (N, rows, cols) and labels (N,) as IDX files."""
    pixels = np.asarray(pixels, np.uint8)
    n, rows, cols = pixels.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + pixels.tobytes())
    labels = np.asarray(labels, np.uint8)
    Path(labels_path).write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())
