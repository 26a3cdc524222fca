"""Build the MNIST IDX fixtures from the digits bundled in the npm ``mnist``
package (10,000 MNIST digits, MIT licensed, grey levels stored as x/255
rounded to 3 decimals, which still recovers every byte exactly).

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/make_mnist.py package/src/digits

Writes a 1,000-image stratified test split into the package and the
remaining 9,000 images (training split for ``train_lenet.py``) to
``build/mnist``.
"""

import json
import sys
from pathlib import Path

import numpy as np

from approxmac.modelio import write_idx

ROOT = Path(__file__).resolve().parents[1]


def main(digits_dir):
    pix, lab = [], []
    for d in range(10):
        vals = np.array(json.loads((Path(digits_dir) / f"{d}.json").read_text())["data"])
        imgs = np.round(vals * 255).astype(np.uint8).reshape(-1, 28, 28)
        pix.append(imgs)
        lab.append(np.full(len(imgs), d, np.uint8))
    pix, lab = np.concatenate(pix), np.concatenate(lab)
    rng = np.random.default_rng(2021)
    perm = rng.permutation(len(lab))
    pix, lab = pix[perm], lab[perm]
    test = np.zeros(len(lab), bool)
    for d in range(10):
        test[np.flatnonzero(lab == d)[:100]] = True
    out = ROOT / "src/approxmac/data/mnist"
    write_idx(out / "t1k-images-idx3-ubyte", out / "t1k-labels-idx1-ubyte", pix[test], lab[test])
    build = ROOT / "build/mnist"
    build.mkdir(parents=True, exist_ok=True)
    write_idx(build / "train-images-idx3-ubyte", build / "train-labels-idx1-ubyte", pix[~test], lab[~test])
    print(f"test {test.sum()}  train {(~test).sum()}")


if __name__ == "__main__":
    main(sys.argv[1])
