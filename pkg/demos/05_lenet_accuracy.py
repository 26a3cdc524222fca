"""End to end: LeNet on 1,000 MNIST test digits under each multiplier."""

import time

from approxmac.fixtures import data_dir, load_fixture
from approxmac.modelio import load_mnist_idx
from approxmac.nncore import forward, topk

d = data_dir() / "mnist"
x, y = load_mnist_idx(d / "t1k-images-idx3-ubyte", d / "t1k-labels-idx1-ubyte")
model, _ = load_fixture("lenet")
float_model, _ = load_fixture("lenet", pipeline="float")

runs = [("exact", None, model), ("mitchw:w=6:sign=c1", None, model),
        ("mitchw:w=6:sign=c1", {"fc1": "exact", "fc2": "exact"}, model),
        ("drum:k=6", None, model), ("iterlog:w=6", None, model), ("bf16", None, float_model)]
for spec, over, m in runs:
    t = time.time()
    out = forward(m, x, spec, layer_specs=over, threads=4).outputs["fc2"]
    acc = (topk(out, 1)[:, 0] == y).mean()
    label = spec + (" (exact FC)" if over else "")
    print(f"{label:<32} top-1 {acc:.3f}   {time.time() - t:5.1f} s")
