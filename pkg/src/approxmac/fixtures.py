"""Deterministic generators for the synthetic desk-scale model fixtures.

Each builder returns ``(model, inputs)`` with float32 weights and float32
real-valued inputs; ``scripts/make_fixtures.py`` writes them under
``approxmac/data/models``.  The LeNet fixture is trained separately (see
``scripts/train_lenet.py``).

stack20
    Twenty ``conv 3x3 (16->16, pad 1) -> relu -> batchnorm`` blocks on a
    16x8x8 input.  Weights are mostly positive so dot products do not cancel.
    BN statistics are calibrated on an exact run over the shipped inputs and
    gamma/beta are chosen so each BN is a pure per-channel rescale of its
    exact input (``bn(x) = x / rms``); a multiplier that shrinks every conv
    output by ``1 + e`` therefore compounds layer after layer unless the BN
    statistics are adjusted.

paired_conv / paired_dw
    A conventional 3x3 conv (64->64) and a depthwise 3x3 conv (64 groups)
    fed the identical 64x12x12 inputs.  Inputs share a smooth spatial field
    across channels and weights have a positive mean, the setting where long
    dot products average multiplier error away.

residual
    A two-branch block (conv-bn-relu-conv-bn plus identity, add, relu)
    followed by global average pooling and a classifier.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .nncore import ModelGraph, Node, forward

STACK_DEPTH = 20
STACK_CHANNELS = 16
BN_EPS = 1e-5


def data_dir() -> Path:
    return Path(str(resources.files("approxmac") / "data"))


def models_dir() -> Path:
    return data_dir() / "models"


def _conv(name, inp, weight, *, pad=0, groups=1, bias=None, mul=None):
    blobs = {"weight": weight.astype(np.float32)}
    if bias is not None:
        blobs["bias"] = bias.astype(np.float32)
    return Node(name, "conv", [inp], name,
                {"stride": 1, "pad": pad, "groups": groups}, blobs, mul)


def _bn(name, inp, mean, var, gamma, beta):
    blobs = {k: np.asarray(v, np.float32) for k, v in
             (("mean", mean), ("var", var), ("gamma", gamma), ("beta", beta))}
    return Node(name, "batchnorm", [inp], name, {"eps": BN_EPS}, blobs)


def _scale_only_bn(name, inp, x):
    """BN whose stored stats match ``x`` and whose output is ``x / rms``."""
    ch = np.moveaxis(np.asarray(x, np.float64), 1, 0).reshape(x.shape[1], -1)
    mean = ch.mean(axis=1).astype(np.float32).astype(np.float64)
    var = ch.var(axis=1).astype(np.float32).astype(np.float64)
    rms = np.sqrt((ch**2).mean(axis=1))
    gamma = np.sqrt(var + BN_EPS) / rms
    beta = mean / rms
    return _bn(name, inp, mean, var, gamma, beta)


def build_stack20(seed=20, n_inputs=32, w_low=-0.25):
    rng = np.random.default_rng(seed)
    c = STACK_CHANNELS
    x = rng.uniform(0.0, 1.0, (n_inputs, c, 8, 8)).astype(np.float32)
    model = ModelGraph("stack20", {"data": (c, 8, 8)}, [], [], {"fixture": "stack20", "seed": seed})
    prev = "data"

    for i in range(1, STACK_DEPTH + 1):
        w = rng.uniform(w_low, 1.0, (c, c, 3, 3))
        model.nodes.append(_conv(f"conv{i}", prev, w, pad=1))
        model.nodes.append(Node(f"relu{i}", "relu", [f"conv{i}"], f"relu{i}"))
        model.outputs = [f"relu{i}"]
        acts = forward(model, x, "exact").outputs[f"relu{i}"]
        model.nodes.append(_scale_only_bn(f"bn{i}", f"relu{i}", acts / 65536.0))
        prev = f"bn{i}"
    model.outputs = [prev]
    return model, x


def _paired_inputs(rng, n, c, hw):
    # smooth field shared by all channels, per-channel gain, small private noise
    yy, xx = np.meshgrid(np.arange(hw), np.arange(hw), indexing="ij")
    out = np.empty((n, c, hw, hw))
    for i in range(n):
        fx, fy = rng.uniform(0.2, 0.8, 2)
        ph = rng.uniform(0, 2 * np.pi, 2)
        field = 1.0 + 0.6 * np.sin(fx * xx + ph[0]) * np.cos(fy * yy + ph[1])
        gain = rng.uniform(0.5, 1.5, c)
        out[i] = gain[:, None, None] * field[None] + rng.uniform(0, 0.1, (c, hw, hw))
    return out.astype(np.float32)


def build_paired(seed=64, n_inputs=16, channels=64, hw=12):
    """Return ``(conventional, depthwise, inputs)`` sharing identical inputs."""
    rng = np.random.default_rng(seed)
    x = _paired_inputs(rng, n_inputs, channels, hw)
    w_conv = rng.uniform(-0.5, 1.0, (channels, channels, 3, 3))
    w_dw = rng.uniform(-0.5, 1.0, (channels, 1, 3, 3))
    shape = {"data": (channels, hw, hw)}
    conv = ModelGraph("paired_conv", dict(shape), ["conv"],
                      [_conv("conv", "data", w_conv, pad=1)], {"fixture": "paired", "seed": seed})
    dw = ModelGraph("paired_dw", dict(shape), ["conv"],
                    [_conv("conv", "data", w_dw, pad=1, groups=channels)],
                    {"fixture": "paired", "seed": seed})
    return conv, dw, x


def build_residual(seed=7, n_inputs=16, channels=8, hw=8, classes=4):
    rng = np.random.default_rng(seed)
    c = channels
    x = rng.uniform(0.0, 1.0, (n_inputs, c, hw, hw)).astype(np.float32)
    model = ModelGraph("residual", {"data": (c, hw, hw)}, [], [], {"fixture": "residual", "seed": seed})
    nodes = model.nodes

    def conv_bn(tag, inp):
        w = rng.normal(0.0, 1.0 / np.sqrt(c * 9), (c, c, 3, 3))
        nodes.append(_conv(f"conv_{tag}", inp, w, pad=1, bias=rng.normal(0, 0.05, c)))
        model.outputs = [f"conv_{tag}"]
        y = forward(model, x, "exact").outputs[f"conv_{tag}"] / 65536.0
        ch = np.moveaxis(y, 1, 0).reshape(c, -1)
        nodes.append(_bn(f"bn_{tag}", f"conv_{tag}", ch.mean(axis=1), ch.var(axis=1),
                         rng.uniform(0.8, 1.2, c), rng.normal(0, 0.1, c)))
        return f"bn_{tag}"

    a = conv_bn("a", "data")
    nodes.append(Node("relu_a", "relu", [a], "relu_a"))
    b = conv_bn("b", "relu_a")
    nodes.append(Node("add", "add", [b, "data"], "add"))
    nodes.append(Node("relu_out", "relu", ["add"], "relu_out"))
    nodes.append(Node("gap", "avgpool", ["relu_out"], "gap", {"global": True}))
    nodes.append(Node("flat", "flatten", ["gap"], "flat"))
    nodes.append(Node("fc", "fc", ["flat"], "fc", {},
                      {"weight": rng.normal(0, 0.5, (classes, c)).astype(np.float32),
                       "bias": np.zeros(classes, np.float32)}))
    model.outputs = ["fc"]
    return model, x


def load_fixture(name, pipeline="fixed"):
    """``(model, inputs)`` for a shipped fixture name (``stack20``, ``paired_conv``,
    ``paired_dw``, ``residual``, ``lenet``)."""
    from .modelio import load_model
    d = models_dir()
    model = load_model(d / f"{name}.json", pipeline)
    stem = "paired" if name.startswith("paired") else name
    inputs = d / f"{stem}_inputs.npy"
    return model, (np.load(inputs) if inputs.exists() else None)
