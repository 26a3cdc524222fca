"""Error statistics for approximate multipliers and the networks using them.

Random operands come from numpy's PCG64 generator (``default_rng(seed)``);
every report carries the seed.  All reductions run in float64 over arrays
whose layout is fixed by the inputs, so results are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import qformat
from .errors import ZeroReferenceError
from .mulkit import make_multiplier, mul_exact, parse_spec
from .nncore import MAC_OPS, as_real, forward
from .qformat import RAW_MAX, RAW_MIN, acc_sum

RNG_NAME = "PCG64"
DEGENERATE_VARIANCE = 2.0**-24
_CHUNK = 1 << 20


def relative_error(exact, approx):
    """``(|approx| - |exact|) / |exact|``, elementwise; same units for both."""
    if isinstance(exact, qformat.Acc):
        exact = exact.to_real()
    if isinstance(approx, qformat.Acc):
        approx = approx.to_real()
    ex = np.abs(np.asarray(exact, dtype=np.float64))
    ap = np.abs(np.asarray(approx, dtype=np.float64))
    if np.any(ex == 0):
        raise ZeroReferenceError("relative error undefined for an exact value of zero")
    out = (ap - ex) / ex
    return out if out.ndim else float(out)


def sample_operands(rng, n, policy="uniform"):
    """Draw ``n`` raw Q16.16 operand pairs, none of them zero.

    ``uniform``: uniform over all nonzero samples except -2**31.
    ``positive``: uniform over positive samples.
    ``layer``: weights ~ N(0, 0.1) and activations ~ |N(0, 1)|, quantized.
    """
    if policy == "layer":
        a = qformat.quantize(rng.normal(0.0, 0.1, n))
        b = qformat.quantize(np.abs(rng.normal(0.0, 1.0, n)))
        for arr, draw in ((a, lambda k: rng.normal(0.0, 0.1, k)),
                          (b, lambda k: np.abs(rng.normal(0.0, 1.0, k)))):
            while np.any(arr == 0):
                z = arr == 0
                arr[z] = qformat.quantize(draw(int(z.sum())))
        return a, b
    lo = {"uniform": RAW_MIN + 1, "positive": 1}.get(policy)
    if lo is None:
        raise ValueError(f"unknown range policy {policy!r}")
    a = rng.integers(lo, RAW_MAX, n, endpoint=True)
    b = rng.integers(lo, RAW_MAX, n, endpoint=True)
    for arr in (a, b):
        while np.any(arr == 0):
            z = arr == 0
            arr[z] = rng.integers(lo, RAW_MAX, int(z.sum()), endpoint=True)
    return a, b


def _pair_errors(spec, a, b):
    """Relative error of ``spec`` on raw operand pairs (exact product != 0)."""
    mul = make_multiplier(spec)
    if spec.is_float:
        af = qformat.to_real(a).astype(np.float32)
        bf = qformat.to_real(b).astype(np.float32)
        exact = af.astype(np.float64) * bf.astype(np.float64)
        return relative_error(exact, mul(af, bf).astype(np.float64))
    return relative_error(mul_exact(a, b).astype(np.float64), np.asarray(mul(a, b), np.float64))


@dataclass
class Characterization:
    spec: str
    n: int
    seed: int
    policy: str
    mean: float
    variance: float
    min: float
    max: float
    hist_counts: list
    hist_edges: list
    rng: str = RNG_NAME
    samples: tuple | None = field(default=None, repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("samples")
        return d


def characterize(spec, n=10**6, seed=0, policy="uniform", *, bins=100, dump=False):
    """Error statistics of ``spec`` over ``n`` random operand pairs.

    With ``dump`` the raw ``(a, b, rel_err)`` triplets (operands as reals)
    are kept on the result for plotting.
    """
    spec = parse_spec(spec)
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    a, b = sample_operands(rng, n, policy)
    err = np.concatenate([_pair_errors(spec, a[i:i + _CHUNK], b[i:i + _CHUNK])
                          for i in range(0, n, _CHUNK)])
    lo, hi = float(err.min()), float(err.max())
    counts, edges = np.histogram(err, bins=bins, range=(lo, hi) if hi > lo else (lo - 1e-9, hi + 1e-9))
    res = Characterization(str(spec), n, seed, policy, float(err.mean()), float(err.var()),
                           lo, hi, counts.tolist(), edges.tolist())
    if dump:
        res.samples = (qformat.to_real(a), qformat.to_real(b), err)
    return res


def dot_error_convergence(spec, lengths, trials=10_000, seed=0, policy="positive"):
    """Mean and variance of the dot-product relative error versus length.

    For each length ``n`` draw ``trials`` operand vectors, multiply pairwise
    with ``spec``, accumulate exactly and compare with the exact dot product.
    Returns a list of dicts with keys ``n, mean, variance, trials``.
    """
    spec = parse_spec(spec)
    mul = make_multiplier(spec)
    rng = np.random.default_rng(seed)
    out = []
    for n in lengths:
        if n < 1:
            raise ValueError("dot-product length must be >= 1")
        errs = []
        step = max(1, (1 << 22) // n)
        for t0 in range(0, trials, step):
            t = min(step, trials - t0)
            a, b = sample_operands(rng, t * n, policy)
            a, b = a.reshape(t, n), b.reshape(t, n)
            if spec.is_float:
                af = qformat.to_real(a).astype(np.float32)
                bf = qformat.to_real(b).astype(np.float32)
                exact = (af.astype(np.float64) * bf).sum(axis=1)
                approx = mul(af, bf).sum(axis=1, dtype=np.float32).astype(np.float64)
            else:
                exact = acc_sum(mul_exact(a, b), axis=1).to_real()
                approx = acc_sum(mul(a, b), axis=1).to_real()
            keep = exact != 0
            errs.append(relative_error(exact[keep], approx[keep]))
        e = np.concatenate(errs)
        out.append({"n": int(n), "mean": float(e.mean()), "variance": float(e.var()),
                    "trials": int(e.size)})
    return out


# -- network-level reports ------------------------------------------------------

@dataclass
class PairedRun:
    """Exact and approximate activations of the same inputs."""

    layers: list
    exact: dict
    approx: dict
    spec: str
    reference: str


def paired_run(model, spec, inputs, *, approx_model=None, layer_specs=None, reference="exact",
               threads=1) -> PairedRun:
    """Run ``model`` with ``reference`` and ``approx_model`` (default: the
    same model) with ``spec`` on identical inputs, capturing every node."""
    ref = forward(model, inputs, reference, threads=threads, capture=True)
    app = forward(approx_model or model, inputs, spec, layer_specs=layer_specs,
                  threads=threads, capture=True)
    layers = [n.name for n in model.order() if n.op in MAC_OPS]
    return PairedRun(layers, ref.activations, app.activations, str(parse_spec(spec)), reference)


@dataclass
class LayerErrorProfile:
    layers: list
    mean_deviation: list
    n_samples: int
    spec: str


def profile_from_run(run: PairedRun) -> LayerErrorProfile:
    """Per conv/fc layer: mean post-ReLU relative deviation over positive
    exact activations, averaged over samples."""
    devs = []
    n_samples = 0
    for name in run.layers:
        ex = as_real(run.exact[name])
        ap = np.maximum(as_real(run.approx[name]), 0.0)
        n_samples = ex.shape[0]
        per_sample = []
        for i in range(ex.shape[0]):
            pos = ex[i] > 0
            if pos.any():
                per_sample.append(float(np.mean((ap[i][pos] - ex[i][pos]) / ex[i][pos])))
        devs.append(float(np.mean(per_sample)) if per_sample else float("nan"))
    return LayerErrorProfile(list(run.layers), devs, n_samples, run.spec)


def layer_mean_error_profile(model, spec, inputs, **kw) -> LayerErrorProfile:
    return profile_from_run(paired_run(model, spec, inputs, **kw))


@dataclass
class ChannelVarianceReport:
    layer: str
    error_variance: np.ndarray
    output_variance: np.ndarray
    degenerate: np.ndarray
    gm_error_variance: float
    gm_output_variance: float
    pct: float

    @property
    def n_degenerate(self) -> int:
        return int(self.degenerate.sum())


def _geomean(v):
    if v.size == 0:
        return float("nan")
    if np.any(v == 0):
        return 0.0
    return float(np.exp(np.mean(np.log(v))))


def channel_report(layer, exact, approx) -> ChannelVarianceReport:
    """Per output channel: variance of (approx - exact) and of exact outputs
    over all samples and positions, plus their geometric means."""
    ex = as_real(exact)
    diff = as_real(approx) - ex
    c = ex.shape[1]
    ex = np.moveaxis(ex, 1, 0).reshape(c, -1)
    diff = np.moveaxis(diff, 1, 0).reshape(c, -1)
    err_var = diff.var(axis=1)
    out_var = ex.var(axis=1)
    degenerate = out_var < DEGENERATE_VARIANCE
    keep = ~degenerate
    gm_err = _geomean(err_var[keep])
    gm_out = _geomean(out_var[keep])
    pct = 100.0 * gm_err / gm_out if keep.any() and gm_out > 0 else float("nan")
    return ChannelVarianceReport(layer, err_var, out_var, degenerate, gm_err, gm_out, pct)


def channel_reports_from_run(run: PairedRun, model) -> list:
    convs = {n.name for n in model.nodes if n.op == "conv"}
    return [channel_report(name, run.exact[name], run.approx[name])
            for name in run.layers if name in convs]


def channel_variance_report(model, spec, inputs, **kw) -> list:
    """One :class:`ChannelVarianceReport` per conv layer, in execution order."""
    return channel_reports_from_run(paired_run(model, spec, inputs, **kw), model)


# -- serialization --------------------------------------------------------------

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def profile_csv(profile: LayerErrorProfile) -> str:
    return _csv(["index", "layer", "mean_deviation"],
                [(i, name, repr(d)) for i, (name, d)
                 in enumerate(zip(profile.layers, profile.mean_deviation))])


def channel_csv(reports) -> str:
    rows = []
    for r in reports:
        for c in range(len(r.error_variance)):
            rows.append((r.layer, c, repr(float(r.error_variance[c])),
                         repr(float(r.output_variance[c])), int(r.degenerate[c])))
    return _csv(["layer", "channel", "error_variance", "output_variance", "degenerate"], rows)


def channel_summary(reports) -> list:
    return [{"layer": r.layer, "gm_error_variance": r.gm_error_variance,
             "gm_output_variance": r.gm_output_variance, "pct": r.pct,
             "n_channels": len(r.error_variance), "n_degenerate": r.n_degenerate}
            for r in reports]


def histogram_csv(ch: Characterization) -> str:
    e = ch.hist_edges
    return _csv(["bin_lo", "bin_hi", "count"],
                [(repr(e[i]), repr(e[i + 1]), c) for i, c in enumerate(ch.hist_counts)])


def dump_csv(ch: Characterization) -> str:
    a, b, err = ch.samples
    return _csv(["a", "b", "rel_err"], zip(map(repr, a.tolist()), map(repr, b.tolist()),
                                            map(repr, err.tolist())))
