"""Acceptance criteria 1-10; each test records one PASS/FAIL line in the summary."""

import filecmp
from fractions import Fraction

import numpy as np
import pytest

from approxmac import cli, errstat
from approxmac.fixtures import load_fixture
from approxmac.modelio import adjust_bn, load_mnist_idx
from approxmac.mulkit import make_multiplier, mul_exact, mul_mitchell, parse_spec, to_bf16
from approxmac.nncore import ModelGraph, Node, conv2d, forward, fully_connected, topk

from conftest import record_criterion
from oracles import conv_oracle, fc_oracle

SEED = 1


def check(num, ok, detail):
    record_criterion(num, bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def mitchell_mean():
    return errstat.characterize("mitchell", 10**6, SEED).mean


def test_criterion_01_multiplier_mean_errors(mitchell_mean):
    means = {s: errstat.characterize(s, 10**6, SEED).mean
             for s in ("mitchw:w=6:sign=c1", "drum:k=6", "iterlog:w=6")}
    means["mitchell"] = mitchell_mean
    ok = (-0.042 <= means["mitchell"] <= -0.036
          and -0.069 <= means["mitchw:w=6:sign=c1"] <= -0.049
          and abs(means["drum:k=6"]) <= 0.005
          and abs(means["iterlog:w=6"]) <= 0.010)
    check(1, ok, "means " + ", ".join(f"{k} {v:+.3%}" for k, v in sorted(means.items())))


def test_criterion_02_mitchell_exhaustive_bound():
    m = np.arange(1, 1 << 10, dtype=np.int64)
    a, b = np.meshgrid(m, m, indexing="ij")
    exact = a * b
    err = (mul_mitchell(a, b) - exact) / exact
    lo, hi = float(err.min()), float(err.max())
    check(2, lo >= -0.112 and hi <= 0.0, f"relative error range [{lo:+.4%}, {hi:+.4%}]")


def test_criterion_03_bf16_conversion_error():
    rng = np.random.default_rng(SEED)
    # positive normals spread over many binades
    x = (rng.uniform(1.0, 2.0, 10**5) * 2.0 ** rng.integers(-100, 100, 10**5)).astype(np.float32)
    err = (to_bf16(x).astype(np.float64) - x) / x
    lo, hi = float(err.min()), float(err.max())
    check(3, lo > -0.0078 and hi <= 0.0, f"conversion error range [{lo:+.4%}, {hi:+.4%}]")


def test_criterion_04_dot_product_convergence(mitchell_mean):
    # positive operands: signed ones cancel and the relative error is unbounded
    res = errstat.dot_error_convergence("mitchell", [16, 1024], trials=10_000, seed=SEED,
                                        policy="positive")
    v16, v1024 = res[0]["variance"], res[1]["variance"]
    ratio = v1024 / v16
    drift = res[1]["mean"] - mitchell_mean
    ok = 1 / 192 <= ratio <= 3 / 64 and abs(drift) <= 0.005
    check(4, ok, f"var ratio {ratio:.5f} (bounds {1/192:.5f}..{3/64:.5f}); "
                 f"n=1024 mean {res[1]['mean']:+.3%} vs pair mean {mitchell_mean:+.3%}")


def test_criterion_05_bn_adjustment_profile():
    model, x = load_fixture("stack20")
    plain = errstat.layer_mean_error_profile(model, "mitchw:w=6:sign=c1", x, threads=4)
    fixed = errstat.layer_mean_error_profile(model, "mitchw:w=6:sign=c1", x, threads=4,
                                             approx_model=adjust_bn(model, -0.059))
    layer10 = plain.mean_deviation[9]
    lo, hi = min(fixed.mean_deviation), max(fixed.mean_deviation)
    ok = layer10 <= -0.35 and lo >= -0.12 and hi <= 0.0
    check(5, ok, f"unadjusted layer-10 {layer10:+.2%}; adjusted range [{lo:+.2%}, {hi:+.2%}]")


def test_criterion_06_depthwise_vs_conventional():
    conv, x = load_fixture("paired_conv")
    dw, x2 = load_fixture("paired_dw")
    assert np.array_equal(x, x2)
    p_conv = errstat.channel_variance_report(conv, "mitchw:w=6:sign=c1", x)[0].pct
    p_dw = errstat.channel_variance_report(dw, "mitchw:w=6:sign=c1", x)[0].pct
    check(6, p_dw > p_conv, f"depthwise pct {p_dw:.4f}% vs conventional {p_conv:.4f}%")


def test_criterion_07_lenet_accuracy(mnist_paths, golden_lenet):
    model, _ = load_fixture("lenet")
    x, y = load_mnist_idx(*mnist_paths)

    def acc(spec, layer_specs=None):
        out = forward(model, x, spec, layer_specs=layer_specs, threads=4).outputs["fc2"]
        return float((topk(out, 1)[:, 0] == y).mean())

    exact = acc("exact")
    approx = acc("mitchw:w=6:sign=c1")
    fc_exact = acc("mitchw:w=6:sign=c1", {"fc1": "exact", "fc2": "exact"})
    ok = (len(x) == 1000 and exact == golden_lenet["top1"]
          and abs(approx - exact) <= 0.02 and abs(fc_exact - approx) <= 0.005)
    check(7, ok, f"exact {exact:.3f} (golden {golden_lenet['top1']:.3f}); mitchw6 {approx:.3f}; "
                 f"mitchw6 with exact FC {fc_exact:.3f}")


def _run_cli(argv, out):
    assert cli.main(argv + ["--out", str(out)]) == 0


def test_criterion_08_cli_determinism(tmp_path, monkeypatch):
    monkeypatch.delenv("APPROXMAC_OUT", raising=False)
    infer = ["infer", "--model", "lenet", "--mul", "mitchw:w=6", "--limit", "200"]
    compare = ["compare", "--model", "stack20", "--mul", "mitchw:w=6", "--adjust-bn", "-0.059",
               "--limit", "8"]
    files = {"infer": ["infer.json", "predictions.csv", "infer.txt"],
             "compare": ["compare.json", "profile.csv", "channels.csv"]}
    mismatches = []
    for name, argv in (("infer", infer), ("compare", compare)):
        runs = []
        for i, threads in enumerate((1, 1, 1, 4)):
            out = tmp_path / f"{name}{i}"
            _run_cli(argv + ["--threads", str(threads)], out)
            runs.append(out)
        for out in runs[1:]:
            _, bad, err = filecmp.cmpfiles(runs[0], out, files[name], shallow=False)
            mismatches += bad + err
    check(8, not mismatches, "identical across 3 runs and threads 1/4"
          if not mismatches else f"differing files: {mismatches}")


def test_criterion_09_oracle_equivalence():
    rng = np.random.default_rng(SEED)
    failures = 0
    for i in range(100):
        if i % 2 == 0:
            groups = int(rng.choice([1, 2]))
            cin, cout = 2 * groups, 2 * groups
            k = int(rng.integers(1, 4))
            hw = int(rng.integers(k, 6))
            stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
            x = rng.integers(-(1 << 20), 1 << 20, (2, cin, hw, hw))
            w = rng.integers(-(1 << 18), 1 << 18, (cout, cin // groups, k, k))
            b = rng.integers(-(1 << 20), 1 << 20, cout) if i % 4 == 0 else None
            got, _ = conv2d(x, w, b, mul=mul_exact, stride=stride, pad=pad, groups=groups)
            want = conv_oracle(x, w, b, lambda p, q: p * q, stride, pad, groups)
        else:
            d, o = int(rng.integers(1, 20)), int(rng.integers(1, 6))
            x = rng.integers(-(1 << 24), 1 << 24, (3, d, 1, 1))
            w = rng.integers(-(1 << 24), 1 << 24, (o, d))
            b = rng.integers(-(1 << 24), 1 << 24, o)
            got, _ = fully_connected(x, w, b, mul=mul_exact)
            want = fc_oracle(x, w, b, lambda p, q: p * q)
        failures += not np.array_equal(got, want)
    check(9, failures == 0, f"{100 - failures}/100 random instances bit-identical")


def _grid_net(rng):
    """conv-relu-conv-relu-fc with integer weights; inputs on a 1/16 grid keep
    every (1 + e) rescaling representable for e = -1/16."""
    def node(name, op, inp, **kw):
        return Node(name, op, [inp], name, kw.pop("params", {}), kw)
    nodes = [
        node("c1", "conv", "data", weight=rng.integers(-2, 3, (4, 2, 3, 3)).astype(np.float32),
             params={"pad": 1}),
        node("r1", "relu", "c1"),
        node("c2", "conv", "r1", weight=rng.integers(-2, 3, (4, 4, 3, 3)).astype(np.float32)),
        node("r2", "relu", "c2"),
        node("fc", "fc", "r2", weight=rng.integers(-2, 3, (5, 4 * 4 * 4)).astype(np.float32)),
    ]
    return ModelGraph("grid", {"data": (2, 6, 6)}, ["fc"], nodes)


def test_criterion_10_constant_error_injection():
    rng = np.random.default_rng(SEED)
    e = -1 / 16
    model = _grid_net(rng)
    x = rng.integers(0, 17, (64, 2, 6, 6)) / 16.0
    mul = make_multiplier(f"inject:e={e}")
    assert mul.scale == Fraction(15, 16)
    ref = forward(model, x, "exact", capture=True).activations
    inj = forward(model, x, f"inject:e={e}", capture=True).activations
    bad = []
    for depth, name in enumerate(("c1", "c2", "fc"), start=1):
        # compounded through the layers...
        if not np.array_equal(inj[name] * 16**depth, ref[name] * 15**depth):
            bad.append(f"{name} (global)")
    for name, src in (("c2", "r1"), ("fc", "r2")):
        # ...and exactly (1 + e) for each layer given its own input
        node = model.node(name)
        fn = conv2d if node.op == "conv" else fully_connected
        kw = {"pad": node.params.get("pad", 0)} if node.op == "conv" else {}
        local, _ = fn(inj[src], node.qblob("weight"), mul=mul_exact, **kw)
        if not np.array_equal(inj[name] * 16, local * 15):
            bad.append(f"{name} (local)")
    nonzero = int(np.count_nonzero(ref["fc"]))
    same_topk = np.array_equal(topk(inj["fc"], 3), topk(ref["fc"], 3))
    ok = not bad and same_topk and nonzero > 0
    check(10, ok, f"e={e}: pre-activation scaling exact at every layer, topk unchanged"
          if ok else f"mismatch at {bad}, topk same={same_topk}")


def test_spec_strings_are_canonical():
    assert str(parse_spec("MitchW:w=6")) == "mitchw:w=6:sign=c1"
