"""Train the LeNet-style MNIST fixture and export it as a version-1 manifest.

Topology (7 nodes, Caffe LeNet layout with narrower layers):

    conv1  8x5x5        -> (8, 24, 24)
    pool1  max 2x2 /2   -> (8, 12, 12)
    conv2  16x5x5       -> (16, 8, 8)
    pool2  max 2x2 /2   -> (16, 4, 4)
    fc1    256 -> 64    -> (64, 1, 1)
    relu1
    fc2    64 -> 10     -> (10, 1, 1)

Needs torch and the training split written by ``make_mnist.py``.
"""

from pathlib import Path

import numpy as np
import torch
from torch import nn

from approxmac.modelio import read_idx_images, read_idx_labels, save_model
from approxmac.nncore import ModelGraph, Node

ROOT = Path(__file__).resolve().parents[1]


def build_torch():
    return nn.Sequential(
        nn.Conv2d(1, 8, 5), nn.MaxPool2d(2),
        nn.Conv2d(8, 16, 5), nn.MaxPool2d(2),
        nn.Flatten(), nn.Linear(256, 64), nn.ReLU(), nn.Linear(64, 10),
    )


def export(net) -> ModelGraph:
    p = [t.detach().numpy().astype(np.float32) for t in net.parameters()]
    nodes = [
        Node("conv1", "conv", ["data"], "conv1", {"stride": 1, "pad": 0, "groups": 1},
             {"weight": p[0], "bias": p[1]}),
        Node("pool1", "maxpool", ["conv1"], "pool1", {"kernel": 2, "stride": 2}),
        Node("conv2", "conv", ["pool1"], "conv2", {"stride": 1, "pad": 0, "groups": 1},
             {"weight": p[2], "bias": p[3]}),
        Node("pool2", "maxpool", ["conv2"], "pool2", {"kernel": 2, "stride": 2}),
        Node("fc1", "fc", ["pool2"], "fc1", {}, {"weight": p[4], "bias": p[5]}),
        Node("relu1", "relu", ["fc1"], "relu1"),
        Node("fc2", "fc", ["relu1"], "fc2", {}, {"weight": p[6], "bias": p[7]}),
    ]
    return ModelGraph("lenet", {"data": (1, 28, 28)}, ["fc2"], nodes,
                      {"source": "scripts/train_lenet.py"})


def main():
    torch.manual_seed(0)
    build = ROOT / "build/mnist"
    x = read_idx_images(build / "train-images-idx3-ubyte").astype(np.float32) / 255.0
    y = read_idx_labels(build / "train-labels-idx1-ubyte").astype(np.int64)
    x, y = torch.from_numpy(x[:, None]), torch.from_numpy(y)
    net = build_torch()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    for epoch in range(15):
        perm = torch.randperm(len(y))
        for i in range(0, len(y), 64):
            idx = perm[i:i + 64]
            opt.zero_grad()
            loss = nn.functional.cross_entropy(net(x[idx]), y[idx])
            loss.backward()
            opt.step()
        print(f"epoch {epoch} loss {loss.item():.4f}")
    save_model(export(net), ROOT / "src/approxmac/data/models/lenet.json")


if __name__ == "__main__":
    main()
