import gzip
import json
import struct

import numpy as np
import pytest

from approxmac.errors import (BadMagicError, CountMismatchError, ModelParseError,
                              NonFiniteWeightError, ShapeMismatchError)
from approxmac.fixtures import load_fixture, models_dir
from approxmac.modelio import (adjust_bn, bn_nodes, load_mnist_idx, load_model, read_idx_images,
                               save_model, write_idx)
from approxmac.qformat import ONE

LENET_SHAPES = [
    ("conv1", "conv", (8, 24, 24)), ("pool1", "maxpool", (8, 12, 12)),
    ("conv2", "conv", (16, 8, 8)), ("pool2", "maxpool", (16, 4, 4)),
    ("fc1", "fc", (64, 1, 1)), ("relu1", "relu", (64, 1, 1)), ("fc2", "fc", (10, 1, 1)),
]


def _manifest(tmp_path, nodes, blob=b""):
    (tmp_path / "w.bin").write_bytes(blob)
    doc = {"version": "1", "name": "t", "inputs": {"data": [2, 3, 3]}, "outputs": [nodes[-1]["name"]],
           "nodes": nodes}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    return path


def _fc_node(count, length, shape):
    return {"name": "fc", "type": "fc", "inputs": ["data"], "output": "fc",
            "blobs": {"weight": {"file": "w.bin", "offset": 0, "length": length,
                                 "count": count, "shape": shape}}}


def test_minimal_relu_manifest(tmp_path):
    path = _manifest(tmp_path, [{"name": "r", "type": "relu", "inputs": ["data"], "output": "r"}])
    model = load_model(path)
    assert len(model.nodes) == 1 and model.nodes[0].op == "relu"


def test_blob_length_off_by_one_names_node(tmp_path):
    blob = np.zeros(36, "<f4").tobytes()
    path = _manifest(tmp_path, [_fc_node(36, 143, [2, 18])], blob)
    with pytest.raises(ShapeMismatchError, match="'fc'") as info:
        load_model(path)
    assert info.value.node == "fc"


def test_nonfinite_weights_rejected(tmp_path):
    w = np.zeros(36, "<f4")
    w[3] = np.nan
    path = _manifest(tmp_path, [_fc_node(36, 144, [2, 18])], w.tobytes())
    with pytest.raises(NonFiniteWeightError, match="fc"):
        load_model(path)


def test_bad_version_and_unknown_type(tmp_path):
    path = _manifest(tmp_path, [{"name": "r", "type": "softmax", "inputs": ["data"]}])
    with pytest.raises(ModelParseError, match="softmax"):
        load_model(path)
    doc = json.loads(path.read_text())
    doc["version"] = "2"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelParseError, match="version"):
        load_model(path)
    path.write_text("{not json")
    with pytest.raises(ModelParseError):
        load_model(path)


def test_lenet_fixture_shapes():
    from approxmac.nncore import infer_shapes
    model, _ = load_fixture("lenet")
    shapes = infer_shapes(model)
    assert [(n.name, n.op, shapes[n.output]) for n in model.nodes] == LENET_SHAPES


def test_loading_twice_is_bit_identical():
    a = load_model(models_dir() / "lenet.json")
    b = load_model(models_dir() / "lenet.json")
    for na, nb in zip(a.nodes, b.nodes):
        for key in na.blobs:
            assert np.array_equal(na.qblob(key), nb.qblob(key))


def test_weights_quantized_with_floor():
    model = load_model(models_dir() / "lenet.json")
    n = model.node("conv1")
    assert np.array_equal(n.qblob("weight"), np.floor(n.blobs["weight"].astype(np.float64) * ONE))


def test_save_load_round_trip(tmp_path):
    model, _ = load_fixture("residual")
    save_model(model, tmp_path / "r.json")
    again = load_model(tmp_path / "r.json")
    assert [(n.name, n.op, n.inputs, n.output, n.params) for n in model.nodes] == \
           [(n.name, n.op, n.inputs, n.output, n.params) for n in again.nodes]
    for a, b in zip(model.nodes, again.nodes):
        assert a.blobs.keys() == b.blobs.keys()
        for k in a.blobs:
            assert a.blobs[k].tobytes() == b.blobs[k].tobytes()


def test_save_to_unwritable_path_raises(tmp_path):
    model, _ = load_fixture("residual")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        save_model(model, blocker / "sub" / "m.json")


def test_adjust_bn_scaling():
    model, _ = load_fixture("residual")
    adj = adjust_bn(model, -0.059)
    for a, b in zip(bn_nodes(model), bn_nodes(adj)):
        ratio_mean = b.blobs["mean"].astype(np.float64) / a.blobs["mean"]
        ratio_var = b.blobs["var"].astype(np.float64) / a.blobs["var"]
        assert np.allclose(ratio_mean, 0.941, atol=5e-4)
        assert np.allclose(ratio_var, 0.885, atol=5e-4)
        for k in ("gamma", "beta"):
            assert a.blobs[k].tobytes() == b.blobs[k].tobytes()
        assert a.params == b.params
    for a, b in zip(model.nodes, adj.nodes):
        if a.op != "batchnorm":
            assert all(a.blobs[k].tobytes() == b.blobs[k].tobytes() for k in a.blobs)


def test_adjust_bn_zero_is_identity_and_composes():
    model, _ = load_fixture("residual")
    same = adjust_bn(model, 0.0)
    for a, b in zip(model.nodes, same.nodes):
        assert all(a.blobs[k].tobytes() == b.blobs[k].tobytes() for k in a.blobs)
    twice = adjust_bn(adjust_bn(model, -0.1), 0.05)
    a, b = bn_nodes(model)[0], bn_nodes(twice)[0]
    assert np.allclose(b.blobs["mean"], a.blobs["mean"] * 0.9 * 1.05, rtol=1e-6)
    with pytest.raises(ValueError):
        adjust_bn(model, -1.0)


def test_adjusted_model_survives_save(tmp_path):
    model, _ = load_fixture("residual")
    save_model(adjust_bn(model, -0.059), tmp_path / "adj.json")
    back = load_model(tmp_path / "adj.json")
    assert np.allclose(bn_nodes(back)[0].blobs["mean"],
                       bn_nodes(model)[0].blobs["mean"] * 0.941, rtol=1e-6)


# -- IDX ---------------------------------------------------------------------------

@pytest.fixture
def idx4(tmp_path):
    pix = np.zeros((4, 28, 28), np.uint8)
    pix[:, 0, 0] = 255
    pix[1, 5, 5] = 128
    img, lab = tmp_path / "img", tmp_path / "lab"
    write_idx(img, lab, pix, [3, 1, 4, 1])
    return img, lab


def test_idx_fixture_loads(idx4):
    x, y = load_mnist_idx(*idx4)
    assert x.shape == (4, 1, 28, 28) and y.tolist() == [3, 1, 4, 1]
    assert x[0, 0, 0, 0] == ONE
    assert x[1, 0, 5, 5] == int(np.floor(128 / 255 * ONE))
    x2, _ = load_mnist_idx(*idx4, limit=2)
    assert len(x2) == 2


def test_idx_count_mismatch(tmp_path, idx4):
    lab = tmp_path / "lab3"
    lab.write_bytes(struct.pack(">II", 0x801, 3) + bytes(3))
    with pytest.raises(CountMismatchError):
        load_mnist_idx(idx4[0], lab)


def test_idx_bad_magic(tmp_path, idx4):
    with pytest.raises(BadMagicError):
        read_idx_images(idx4[1])


def test_idx_gzip(tmp_path, idx4):
    gz = tmp_path / "img.gz"
    gz.write_bytes(gzip.compress(idx4[0].read_bytes()))
    assert read_idx_images(gz).shape == (4, 28, 28)


def test_shipped_mnist_split(mnist_paths):
    x, y = load_mnist_idx(*mnist_paths)
    assert x.shape == (1000, 1, 28, 28)
    assert np.bincount(y).tolist() == [100] * 10
