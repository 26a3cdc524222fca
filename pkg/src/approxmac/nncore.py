"""CNN inference with a pluggable multiplier per layer.

Tensors are plain NCHW numpy arrays.  The payload type selects the pipeline:
int64 arrays hold raw Q16.16 samples (fixed-point pipeline), float32 arrays
hold binary32 values (the bfloat16 pipeline).  In the fixed-point pipeline
every conv/fc output is an exact integer sum of multiplier outputs, so the
result never depends on accumulation order or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import qformat
from .errors import ApproxMacError, InvalidSpecError, ShapeMismatchError
from .mulkit import make_multiplier, parse_spec
from .qformat import Acc, acc_sum, narrow, quantize

OPS = ("conv", "fc", "batchnorm", "relu", "maxpool", "avgpool", "add", "flatten")
MAC_OPS = ("conv", "fc")

# products materialized per chunk inside conv/fc
_CHUNK = 1 << 18


@dataclass
class Node:
    name: str
    op: str
    inputs: list
    output: str
    params: dict = field(default_factory=dict)
    blobs: dict = field(default_factory=dict)
    mul: str | None = None
    _q: dict = field(default_factory=dict, repr=False, compare=False)

    def qblob(self, key):
        """Blob quantized to raw Q16.16 (cached)."""
        if key not in self._q:
            self._q[key] = quantize(self.blobs[key])
        return self._q[key]


@dataclass
class ModelGraph:
    name: str
    inputs: dict
    outputs: list
    nodes: list
    meta: dict = field(default_factory=dict)

    def node(self, name) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    def order(self) -> list:
        """Nodes in a valid execution order (stable w.r.t. listing order)."""
        produced = set(self.inputs)
        pending = list(self.nodes)
        ordered = []
        while pending:
            for i, n in enumerate(pending):
                if all(e in produced for e in n.inputs):
                    ordered.append(pending.pop(i))
                    produced.add(n.output)
                    break
            else:
                names = ", ".join(n.name for n in pending)
                raise ShapeMismatchError(f"unresolvable edges or cycle at nodes: {names}")
        return ordered


# -- shape checking -----------------------------------------------------------

def _out_hw(h, w, kh, kw, stride, pad):
    return (h + 2 * pad - kh) // stride + 1, (w + 2 * pad - kw) // stride + 1


def _node_shape(n: Node, shapes):
    ins = [shapes[e] for e in n.inputs]
    p = n.params
    if n.op == "conv":
        (c, h, w), = ins
        wt = n.blobs["weight"]
        g = p.get("groups", 1)
        cout, cin_g, kh, kw = wt.shape
        if c % g or cout % g or cin_g * g != c:
            raise ShapeMismatchError(
                f"conv weight {wt.shape} incompatible with {c} input channels, groups={g}")
        if "bias" in n.blobs and n.blobs["bias"].shape != (cout,):
            raise ShapeMismatchError(f"bias shape {n.blobs['bias'].shape} != ({cout},)")
        ho, wo = _out_hw(h, w, kh, kw, p.get("stride", 1), p.get("pad", 0))
        if ho < 1 or wo < 1:
            raise ShapeMismatchError("conv output would be empty")
        return (cout, ho, wo)
    if n.op == "fc":
        (c, h, w), = ins
        wt = n.blobs["weight"]
        if wt.ndim != 2 or wt.shape[1] != c * h * w:
            raise ShapeMismatchError(f"fc weight {wt.shape} vs input length {c * h * w}")
        if "bias" in n.blobs and n.blobs["bias"].shape != (wt.shape[0],):
            raise ShapeMismatchError("fc bias length mismatch")
        return (wt.shape[0], 1, 1)
    if n.op == "batchnorm":
        (c, h, w), = ins
        for key in ("mean", "var", "gamma", "beta"):
            if n.blobs[key].shape != (c,):
                raise ShapeMismatchError(f"batchnorm {key} has shape {n.blobs[key].shape}, want ({c},)")
        if np.any(n.blobs["var"] < 0) or not p.get("eps", 1e-5) > 0:
            raise ShapeMismatchError("batchnorm needs var >= 0 and eps > 0")
        return (c, h, w)
    if n.op in ("maxpool", "avgpool"):
        (c, h, w), = ins
        if p.get("global"):
            return (c, 1, 1)
        kh, kw = _pair(p["kernel"])
        ho, wo = _out_hw(h, w, kh, kw, p.get("stride", kh), p.get("pad", 0))
        return (c, ho, wo)
    if n.op == "add":
        if len(ins) != 2 or ins[0] != ins[1]:
            raise ShapeMismatchError(f"add needs two equal shapes, got {ins}")
        return ins[0]
    if n.op == "relu":
        (s,) = ins
        return s
    if n.op == "flatten":
        (c, h, w), = ins
        return (c * h * w, 1, 1)
    raise ShapeMismatchError(f"unknown op {n.op!r}")


def infer_shapes(model: ModelGraph) -> dict:
    """Per-edge (C, H, W) shapes; raises ShapeMismatchError naming the node."""
    shapes = {k: tuple(v) for k, v in model.inputs.items()}
    for n in model.order():
        try:
            shapes[n.output] = _node_shape(n, shapes)
        except (ShapeMismatchError, KeyError, ValueError) as exc:
            err = ShapeMismatchError(f"node {n.name!r}: {exc}")
            err.node = n.name
            raise err from exc
    for o in model.outputs:
        if o not in shapes:
            raise ShapeMismatchError(f"output edge {o!r} is never produced")
    return shapes


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


# -- layers -------------------------------------------------------------------

def _is_fixed(x):
    return np.issubdtype(x.dtype, np.integer)


def _mac(wmat, xmat, bias, mul, fixed):
    """``out[n, o, p] = sum_k mul(wmat[o, k], xmat[n, p, k]) + bias[o]``.

    Returns ``(out, n_saturated)``.  Work is chunked over batch items first
    so each input block is preprocessed by the multiplier only once.
    """
    n, p, k = xmat.shape
    o_total = wmat.shape[0]
    out = np.empty((n, o_total, p), dtype=np.int64 if fixed else np.float32)
    per_item = o_total * p * k
    items = max(1, _CHUNK // max(1, per_item))
    o_step = o_total if items > 1 else max(1, _CHUNK // max(1, p * k))
    n_sat = 0
    for i in range(0, n, items):
        xs = xmat[i:i + items, None, :, :]
        for o in range(0, o_total, o_step):
            ws = wmat[o:o + o_step]
            prods = mul(ws[None, :, None, :], xs)
            if fixed:
                acc = acc_sum(prods, axis=-1)
                if bias is not None:
                    b = Acc.from_qnum(bias[o:o + o_step])
                    acc = qformat.acc_add(acc, Acc(b.hi[None, :, None], b.lo[None, :, None]))
                y, sat = narrow(acc)
                n_sat += sat
            else:
                y = prods.sum(axis=-1, dtype=np.float32)
                if bias is not None:
                    y = y + bias[o:o + o_step].astype(np.float32)[None, :, None]
            out[i:i + items, o:o + o_step] = y
    return out, n_sat


def conv2d(x, weight, bias=None, *, mul, stride=1, pad=0, groups=1):
    """Grouped 2-D convolution; returns ``(output, n_saturated)``.

    ``weight`` is (out_channels, in_channels // groups, kh, kw) in the same
    payload type as ``x``.  Padding is zero-filled and padded taps still go
    through ``mul`` (zero operands give exactly zero).
    """
    fixed = _is_fixed(x)
    n, c, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if c % groups or cout % groups or cin_g * groups != c:
        raise ShapeMismatchError(f"weight {weight.shape} vs input {x.shape}, groups={groups}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cout_g = cout // groups
    kdim = cin_g * kh * kw
    out = np.empty((n, cout, ho * wo), dtype=np.int64 if fixed else np.float32)
    n_sat = 0
    for g in range(groups):
        patches = win[:, g * cin_g:(g + 1) * cin_g]
        patches = patches.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, kdim)
        sl = slice(g * cout_g, (g + 1) * cout_g)
        y, sat = _mac(weight[sl].reshape(cout_g, kdim), patches,
                      None if bias is None else bias[sl], mul, fixed)
        out[:, sl] = y
        n_sat += sat
    return out.reshape(n, cout, ho, wo), n_sat


def fully_connected(x, weight, bias=None, *, mul):
    """Dense layer over the flattened input; returns ``(output, n_saturated)``.

    The bias is added to the accumulator, never multiplied.
    """
    n = x.shape[0]
    flat = x.reshape(n, 1, -1)
    if weight.ndim != 2 or weight.shape[1] != flat.shape[2]:
        raise ShapeMismatchError(f"fc weight {weight.shape} vs input length {flat.shape[2]}")
    y, n_sat = _mac(weight, flat, bias, mul, _is_fixed(x))
    return y.reshape(n, weight.shape[0], 1, 1), n_sat


def batchnorm_infer(x, mean, var, gamma, beta, eps=1e-5):
    """Inference batch norm in float64; never uses the approximate multiplier."""
    fixed = _is_fixed(x)
    if x.shape[1] != len(mean):
        raise ShapeMismatchError(f"batchnorm over {len(mean)} channels, input has {x.shape[1]}")
    shape = (1, -1, 1, 1)
    real = qformat.to_real(x) if fixed else x.astype(np.float64)
    mean, var, gamma, beta = (np.asarray(a, np.float64).reshape(shape)
                              for a in (mean, var, gamma, beta))
    y = gamma * (real - mean) / np.sqrt(var + eps) + beta
    if not fixed:
        return y.astype(np.float32), 0
    scaled = np.floor(y * qformat.ONE)
    raw = np.clip(scaled, qformat.RAW_MIN, qformat.RAW_MAX)
    return raw.astype(np.int64), int(np.count_nonzero(raw != scaled))


def relu(x):
    return np.maximum(x, 0).astype(x.dtype)


def _pool_windows(x, kernel, stride, pad, fill):
    kh, kw = _pair(kernel)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), constant_values=fill)
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]


def maxpool(x, kernel=2, stride=None, pad=0):
    stride = stride or _pair(kernel)[0]
    fill = qformat.RAW_MIN if _is_fixed(x) else -np.inf
    return _pool_windows(x, kernel, stride, pad, fill).max(axis=(-2, -1))


def avgpool(x, kernel=2, stride=None, pad=0):
    """Average pool; fixed-point sums are exact and divided with floor."""
    stride = stride or _pair(kernel)[0]
    win = _pool_windows(x, kernel, stride, pad, 0)
    count = win.shape[-1] * win.shape[-2]
    if _is_fixed(x):
        return win.sum(axis=(-2, -1)) // count
    return (win.astype(np.float64).sum(axis=(-2, -1)) / count).astype(np.float32)


def add(a, b):
    """Elementwise residual add; returns ``(output, n_saturated)``."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"add of {a.shape} and {b.shape}")
    if _is_fixed(a):
        return qformat.saturate(a + b)
    return (a + b).astype(np.float32), 0


def flatten(x):
    return x.reshape(x.shape[0], -1, 1, 1)


def topk(scores, k=1):
    """Indices of the ``k`` largest scores, ties going to the lower index.

    Accepts a 1-D score vector or an (N, classes[, 1, 1]) batch.
    """
    s = np.asarray(scores)
    single = s.ndim == 1
    s = s.reshape(1, -1) if single else s.reshape(s.shape[0], -1)
    if k > s.shape[1]:
        raise ValueError(f"k={k} exceeds {s.shape[1]} classes")
    order = np.argsort(-s.astype(np.float64) if not _is_fixed(s) else -s, axis=1, kind="stable")
    out = order[:, :k]
    return out[0] if single else out


# -- execution ----------------------------------------------------------------

@dataclass
class ForwardResult:
    outputs: dict
    saturation: dict
    activations: dict | None = None


def _resolve_specs(model, spec, layer_specs):
    base = parse_spec(spec)
    specs = {}
    for n in model.nodes:
        if n.op not in MAC_OPS:
            continue
        s = parse_spec((layer_specs or {}).get(n.name) or n.mul or base)
        if s.is_float != base.is_float:
            raise InvalidSpecError(
                f"node {n.name!r}: {s} cannot mix with the {base} pipeline")
        specs[n.name] = s
    unknown = set(layer_specs or {}) - set(specs)
    if unknown:
        raise InvalidSpecError(f"layer overrides name unknown conv/fc nodes: {sorted(unknown)}")
    return base, specs


def prepare_input(x, float_pipeline):
    """Coerce an input tensor to the pipeline's payload type."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if float_pipeline:
        return qformat.to_real(x).astype(np.float32) if _is_fixed(x) else x.astype(np.float32)
    return x.astype(np.int64) if _is_fixed(x) else quantize(x)


def _run_node(n: Node, args, mul, fixed):
    p = n.params
    blob = (lambda k: n.qblob(k)) if fixed else (lambda k: n.blobs[k].astype(np.float32))
    if n.op == "conv":
        bias = blob("bias") if "bias" in n.blobs else None
        return conv2d(args[0], blob("weight"), bias, mul=mul, stride=p.get("stride", 1),
                      pad=p.get("pad", 0), groups=p.get("groups", 1))
    if n.op == "fc":
        bias = blob("bias") if "bias" in n.blobs else None
        return fully_connected(args[0], blob("weight"), bias, mul=mul)
    if n.op == "batchnorm":
        b = n.blobs
        return batchnorm_infer(args[0], b["mean"], b["var"], b["gamma"], b["beta"], p.get("eps", 1e-5))
    if n.op == "relu":
        return relu(args[0]), 0
    if n.op in ("maxpool", "avgpool"):
        fn = maxpool if n.op == "maxpool" else avgpool
        if p.get("global"):
            return fn(args[0], kernel=args[0].shape[2:], stride=1), 0
        return fn(args[0], p["kernel"], p.get("stride"), p.get("pad", 0)), 0
    if n.op == "add":
        return add(args[0], args[1])
    if n.op == "flatten":
        return flatten(args[0]), 0
    raise ShapeMismatchError(f"unknown op {n.op!r}")


def _forward_batch(order, model, x, muls, fixed, capture):
    env = {name: x for name in model.inputs} if len(model.inputs) == 1 else dict(x)
    sat = {}
    acts = {} if capture else None
    for n in order:
        try:
            out, s = _run_node(n, [env[e] for e in n.inputs], muls.get(n.name), fixed)
        except ApproxMacError as exc:
            err = type(exc)(f"node {n.name!r}: {exc}")
            err.node = n.name
            raise err from exc
        env[n.output] = out
        sat[n.name] = s
        if capture:
            acts[n.name] = out
    return {o: env[o] for o in model.outputs}, sat, acts


def forward(model: ModelGraph, x, spec="exact", *, layer_specs=None, threads=1,
            capture=False) -> ForwardResult:
    """Run ``model`` on the batch ``x``.

    ``spec`` is the global multiplier; a node's manifest ``mul`` overrides
    it and ``layer_specs`` (node name -> spec) overrides both.  Work is split
    across ``threads`` by batch item; outputs are bit-identical for any
    thread count.  With ``capture`` every node's output is returned too.
    """
    base, specs = _resolve_specs(model, spec, layer_specs)
    fixed = not base.is_float
    x = prepare_input(x, base.is_float)
    muls = {name: make_multiplier(s) for name, s in specs.items()}
    order = model.order()
    n = x.shape[0]
    threads = max(1, min(int(threads), n))
    if threads == 1:
        outs, sat, acts = _forward_batch(order, model, x, muls, fixed, capture)
        return ForwardResult(outs, sat, acts)
    size = math.ceil(n / threads)
    chunks = [x[i:i + size] for i in range(0, n, size)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _forward_batch(order, model, c, muls, fixed, capture), chunks))
    outs = {o: np.concatenate([p[0][o] for p in parts]) for o in model.outputs}
    sat = {k: sum(p[1][k] for p in parts) for k in parts[0][1]}
    acts = None
    if capture:
        acts = {k: np.concatenate([p[2][k] for p in parts]) for k in parts[0][2]}
    return ForwardResult(outs, sat, acts)


def as_real(t):
    """Tensor payload to float64 real values."""
    return qformat.to_real(t) if _is_fixed(np.asarray(t)) else np.asarray(t, np.float64)
